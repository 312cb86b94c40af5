import math

import numpy as np
import pytest

from dissipative_wqed.analytic import (
    PoleProblem,
    bs_energy_zero_detuning,
    ep_coupling,
    ep_energy,
    fermi_golden_rate,
    group_velocity,
    pole_residual,
    pole_roots,
    self_energy,
    ssh_bs_energies,
    ssh_ep3_coupling,
    uniform_decay_length,
    vds_cells_needed,
    vds_state,
)
from dissipative_wqed.model import SSH, LatticeSpec, build_hamiltonian, ssh_chain

# high-precision reference values (30-digit root finding on the unsquared pole equation)
KAPPA_EP_21 = 0.156348083480465234
E_EP_21 = 2.033517484154558946
BS_21_01 = (2.002635433712127316, 2.082801004148643268)
E_ZERO_DET_03 = 0.044988619454356240
LAMBDA_ZERO_DET_03 = 44.459435847140899
SIGMA_FINITE_400 = -0.0402492235949962145


def test_ep_closed_forms_match_reference():
    assert ep_energy(2.1) == pytest.approx(E_EP_21, abs=1e-14)
    assert ep_coupling(2.1) == pytest.approx(KAPPA_EP_21, abs=1e-14)
    assert ep_energy(2.1) == pytest.approx(2.0335, abs=5e-5)


def test_ep_is_a_double_root():
    prob = PoleProblem(2.1, KAPPA_EP_21)
    assert pole_residual(prob, E_EP_21) <= 1e-10
    roots = [r for r in pole_roots(PoleProblem(2.1, KAPPA_EP_21 * (1 - 1e-6)))]
    assert len(roots) == 2 and all(abs(r - E_EP_21) < 1e-3 for r in roots)


def test_lower_gap_mirrors_upper_gap():
    assert ep_coupling(-2.1) == ep_coupling(2.1)
    with pytest.raises(ValueError, match="any nonzero coupling"):
        ep_coupling(1.0)
    with pytest.raises(ValueError):
        ep_energy(1.0)


def test_pole_roots_gap_bound_states():
    roots = pole_roots(PoleProblem(2.1, 0.1))
    assert len(roots) == 2
    for r, ref in zip(roots, BS_21_01):
        assert r.imag == 0.0
        assert r.real == pytest.approx(ref, abs=1e-12)


def test_pole_roots_broken_pair():
    roots = pole_roots(PoleProblem(2.1, 0.2))
    assert len(roots) == 2
    assert roots[0] == pytest.approx(np.conj(roots[1]), abs=1e-12)
    assert abs(roots[0].imag) > 0


@pytest.mark.parametrize("kappa", [0.1, 0.2, 0.3, 0.5, 1.0])
def test_zero_detuning_closed_form_solves_pole_equation(kappa):
    Ep, Em = bs_energy_zero_detuning(kappa)
    assert Ep == -Em and Ep.real == 0
    roots = pole_roots(PoleProblem(0.0, kappa))
    assert len(roots) == 2
    assert roots[1] == pytest.approx(Ep, abs=1e-12)


def test_zero_detuning_reference_and_golden_rule():
    assert bs_energy_zero_detuning(0.3)[0].imag == pytest.approx(E_ZERO_DET_03, abs=1e-14)
    # weak coupling: |Im E| ~ kappa^2 / 2J
    E = bs_energy_zero_detuning(0.01)[0]
    assert E.imag == pytest.approx(abs(fermi_golden_rate(0.0, 0.01)), rel=1e-6)
    assert group_velocity(0.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        group_velocity(2.5)


def test_self_energy_finite_sum_and_closed_form():
    lat = LatticeSpec(num_sites=400)
    finite = self_energy(PoleProblem(0.0, 0.3, lat, finite_N=400), 3.0)
    closed = self_energy(PoleProblem(0.0, 0.3, lat), 3.0)
    assert finite.real == pytest.approx(SIGMA_FINITE_400, abs=1e-15)
    assert closed.real == pytest.approx(-0.09 / math.sqrt(5.0), abs=1e-15)
    assert abs(finite - closed) < 1e-14  # exponentially small finite-size correction here


def test_self_energy_rejects_cut_and_poles():
    with pytest.raises(ValueError, match="branch cut"):
        self_energy(PoleProblem(0.0, 0.3), 1.0)
    with pytest.raises(ValueError):
        self_energy(PoleProblem(0.0, 0.3, LatticeSpec(num_sites=4), finite_N=4), 2.0)


def test_ssh_self_energy_finite_sum_matches_resolvent():
    L, d, kappa, E = 16, 0.3, 0.4, 0.1 + 0.05j
    spec = ssh_chain(L, d, kappa, cell=0, boundary="periodic")
    ph = np.array(build_hamiltonian(spec).matrix)[1:, 1:]
    G = np.linalg.inv(E * np.eye(2 * L) - ph)
    expected = (-1j * kappa) ** 2 * G[0, 0]
    got = self_energy(PoleProblem(0.0, kappa, spec.lattice, finite_N=L), E)
    assert got == pytest.approx(expected, abs=1e-12)


def test_ssh_bound_states_limits():
    small = ssh_bs_energies(0.25, 1e-4)[0]
    assert small.real == pytest.approx(2 * 0.25, abs=1e-7)  # inner band edge 2J delta
    at_ep = ssh_bs_energies(0.25, 1.0)[0]
    assert abs(at_ep) < 1e-7
    above = ssh_bs_energies(0.25, 1.2)[0]
    assert above.real == 0 and above.imag > 0
    assert ssh_ep3_coupling(0.25) == 1.0
    assert ssh_ep3_coupling(0.04) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        ssh_ep3_coupling(0.0)


def test_ssh_bound_states_match_finite_chain():
    delta, kappa = 0.25, 0.5
    E = ssh_bs_energies(delta, kappa)[0].real
    # near the band edge the state is long-ranged: use a long chain
    w = np.linalg.eigvals(build_hamiltonian(ssh_chain(400, delta, kappa, 200)).matrix)
    assert np.min(np.abs(w - E)) < 1e-10
    assert E == pytest.approx(0.483121885446421801, abs=1e-14)


def test_decay_length_reference():
    E = bs_energy_zero_detuning(0.3)[0]
    assert uniform_decay_length(E) == pytest.approx(LAMBDA_ZERO_DET_03, abs=1e-9)
    assert math.isinf(uniform_decay_length(1.0))


def test_vds_state_structure():
    assert vds_cells_needed(0.25) == 46
    v = vds_state(0.25, 40, 100)
    vec = v.to_vector()
    assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-10)
    ph = vec[1:]
    assert np.all(ph[0::2] == 0)  # nothing on sublattice A
    assert np.all(ph[1 : 2 * 40 : 2] == 0)  # nothing left of the emitter
    H = np.array(build_hamiltonian(ssh_chain(100, 0.25, ssh_ep3_coupling(0.25), 40)).matrix)
    assert np.linalg.norm(H @ vec) < 1e-12
    assert np.linalg.norm(v.edge_state()) == pytest.approx(1.0)


def test_vds_state_needs_room_for_its_tail():
    with pytest.raises(ValueError, match="needs 46"):
        vds_state(0.25, 60, 100)
    with pytest.raises(ValueError):
        vds_cells_needed(0.0)


def test_pole_problem_validation():
    with pytest.raises(ValueError):
        PoleProblem(0.0, -0.1)
    with pytest.raises(NotImplementedError):
        pole_roots(PoleProblem(0.0, 0.1, LatticeSpec(SSH, delta=0.2, num_sites=10, boundary="open")))
