import math

import numpy as np
import pytest

from vefem import diagnostics as dg
from vefem import matfunc as mf
from vefem import mms
from vefem.forms import Assembler
from vefem.mesh import build_crisscross
from vefem.params import ModelParams
from vefem.spaces import FESpaces
from vefem.stepper import SolverConfig, Stepper, relaxation_state, run


@pytest.fixture(scope="module")
def k2():
    spaces = FESpaces(build_crisscross(2))
    return spaces, Assembler(spaces, ModelParams())


def test_min_eig_field_examples():
    B = np.array([[2.0, 0.0, 3.0], [1.0, 0.0, 0.5], [2.0, 1.0, 2.0]])
    val, idx = dg.min_eig_field(B)
    assert val == pytest.approx(0.5) and idx == 1
    B[2] = [2.0, 1.9, 2.0]
    assert dg.min_eig_field(B) == (pytest.approx(0.1), 2)


def test_lumped_and_kinetic_examples(k2):
    spaces, asm = k2
    ones = np.tile(mf.IDENTITY, (spaces.n_vertices, 1))
    assert dg.lumped_norm2(ones, spaces.lumped_weights) == pytest.approx(2.0, abs=1e-14)
    v = np.tile([1.0, 2.0], (spaces.n_p2, 1))
    assert dg.kinetic(v, asm) == pytest.approx(2.5, abs=1e-13)        # |(1, 2)|^2 / 2
    assert dg.velocity_dissipation(v, asm) == pytest.approx(0.0, abs=1e-12)
    x = spaces.mesh.vertices
    lin = np.stack([x[:, 0], 0 * x[:, 0], 2 * x[:, 1]], -1)
    # |grad b11|^2 + |grad b22|^2 = 1 + 4
    assert dg.tensor_grad_norm2(lin, asm) == pytest.approx(5.0, abs=1e-12)
    assert dg.scalar_grad_norm2(x[:, 0] + x[:, 1], asm) == pytest.approx(2.0, abs=1e-12)


def test_free_energy_examples(k2):
    spaces, _ = k2
    prm = ModelParams()
    w = spaces.lumped_weights
    n = spaces.n_vertices
    assert dg.free_energy(np.tile(mf.IDENTITY, (n, 1)), prm, w) == 0.0
    two = np.tile([2.0, 0.0, 2.0], (n, 1))
    assert dg.free_energy(two, prm, w) == pytest.approx(1.5 - math.log(2), abs=1e-14)
    # psi_delta agrees with psi when the cut-off is inactive
    assert dg.free_energy(two, prm, w, delta=0.1) == pytest.approx(1.5 - math.log(2), abs=1e-14)


def test_equilibrium_row_is_zero(k2):
    spaces, asm = k2
    prm = ModelParams()
    st = Stepper(spaces, prm, assembler=asm)
    s0 = relaxation_state(spaces, mf.IDENTITY)
    s1 = st.step(s0)
    row = dg.energy_row(s1, s0, prm, asm)
    assert tuple(row) == dg.LEDGER_COLUMNS
    for key in ("kinetic", "free_energy", "energy", "lhs", "rhs", "viscous", "diffusion_B",
                "relax_beta_delta1", "relax_1mbeta_delta1"):
        assert abs(row[key]) < 1e-14, key
    assert dg.verify_step(row)[0] == "pass"


def test_relaxation_dissipation_example(k2):
    spaces, asm = k2
    prm = ModelParams(dt=0.1)
    B = np.tile([4.0, 0.0, 9.0], (spaces.n_vertices, 1))
    parts = dg._dissipation(B, prm, asm, None)
    # mu (1-beta) delta1 |B^{1/2} - B^{-1/2}|^2 = 0.5 * 9.3611
    assert parts["relax_1mbeta_delta1"] == pytest.approx(0.5 * (2.25 + 64 / 9), rel=1e-13)
    # mu beta delta1 |B - I|^2 = 0.5 * (9 + 64)
    assert parts["relax_beta_delta1"] == pytest.approx(0.5 * 73, rel=1e-13)
    assert abs(parts["diffusion_B"]) < 1e-13 and abs(parts["diffusion_logdet"]) < 1e-13
    assert parts["relax_beta_delta2"] == 0.0


def test_relaxation_run_satisfies_inequality(k2):
    spaces, asm = k2
    prm = ModelParams(dt=0.1, delta2=0.5, T=1.0)
    st = Stepper(spaces, prm, assembler=Assembler(spaces, prm))
    res = run(st, relaxation_state(spaces, [3.0, 0.5, 1.0]))
    for row in res.ledger:
        status, margin = dg.verify_step(row)
        assert status == "pass" and row["slack"] >= -1e-12
    energies = [r["energy"] for r in res.ledger]
    assert all(b <= a for a, b in zip(energies, energies[1:]))


def test_verify_step_statuses():
    row = {"lhs": 1.0, "rhs": 1.0 - 1e-9}
    assert dg.verify_step(row)[0] == "pass"
    row = {"lhs": 1.0, "rhs": 0.99}
    status, margin = dg.verify_step(row)
    assert status == "fail" and margin < 0
    assert dg.verify_step(row, sources_active=True)[0] == "not applicable"


def test_regularised_ledger_reduces_to_unregularised(k2):
    spaces, asm = k2
    prm = ModelParams(delta2=0.3)
    x = spaces.mesh.vertices
    B = np.stack([2 + x[:, 0], 0.2 * x[:, 1], 1.5 - 0.5 * x[:, 0]], -1)
    a = dg._dissipation(B, prm, asm, None)
    b = dg._dissipation(B, prm, asm, 0.1)
    for key in a:
        assert b[key] == pytest.approx(a[key], rel=1e-12, abs=1e-14), key


def test_initial_energy_examples():
    spaces = FESpaces(build_crisscross(4))
    prm = ModelParams()
    st = Stepper(spaces, prm)
    s0 = st.initial_state(lambda x: mms.velocity(x, 0.0), lambda x: mms.tensor(x, 0.0))
    c0 = dg.initial_energy(spaces, s0.v, s0.B, prm, lambda x: mms.tensor(x, 0.0))
    assert c0["energy_lumped"] == pytest.approx(c0["kinetic"] + c0["free_energy_lumped"])
    # for B = I + s diag(1,-1): psi = mu(1-beta)(-ln(1-s^2)) + mu beta s^2, small s
    assert c0["free_energy_quadrature"] == pytest.approx(c0["free_energy_lumped"], rel=0.05)
    assert 0 < c0["kinetic"] < 1e-4
    c1 = dg.initial_energy(spaces, np.zeros_like(s0.v), np.tile(mf.IDENTITY, (spaces.n_vertices, 1)),
                           prm, lambda x: np.tile(mf.IDENTITY, (len(x), 1)))
    assert c1["energy_lumped"] == 0.0 and c1["energy_quadrature"] == 0.0
