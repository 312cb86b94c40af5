import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from dissipative_wqed.dynamics import (
    COHERENT_TRANSFER,
    NO_DOMINANCE,
    SINGLE_DOMINANT,
    DynamicsError,
    InitialState,
    TrajectoryRecord,
    default_times,
    dominant_gap,
    dominant_subspace_fidelity,
    evolve_nojump_oracle,
    evolve_pure,
    long_time_dominant_state,
    snapshot_csv,
    two_qe_transfer_metrics,
)
from dissipative_wqed.model import build_hamiltonian, ssh_chain, uniform_chain
from dissipative_wqed.spectral import eigendecompose


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(0, 0.6), st.sampled_from(["spectral", "expm"]))
def test_trajectory_stays_normalized(detuning, kappa, method):
    spec = uniform_chain(24, detuning, kappa)
    rec = evolve_pure(build_hamiltonian(spec), InitialState.emitter_excited(spec), default_times(40, 81), method)
    total = rec.total_emitter_population + rec.photon_weight
    assert np.max(np.abs(total - 1)) < 1e-9


def test_spectral_and_expm_agree():
    spec = uniform_chain(40, 0.0, 0.3, sites=(0, 9))
    H = build_hamiltonian(spec)
    psi0 = InitialState.two_emitter(spec, [1, 1j])
    t = default_times(60, 121)
    a = evolve_pure(H, psi0, t, "spectral")
    b = evolve_pure(H, psi0, t, "expm")
    assert np.max(np.abs(a.emitter_populations - b.emitter_populations)) < 1e-9


def test_hermitian_limit_matches_unitary_propagation():
    spec = uniform_chain(30, 0.4, 0.0)
    H = build_hamiltonian(spec)
    psi0 = InitialState.photon_at_site(spec, 3)
    rec = evolve_pure(H, psi0, [0.0, 2.5, 7.0])
    for k, t in enumerate(rec.times):
        psi = scipy.linalg.expm(-1j * np.array(H.matrix) * t) @ psi0.vector
        assert rec.photon_weight[k] == pytest.approx(np.sum(np.abs(psi[1:]) ** 2), abs=1e-12)
    assert np.all(rec.emitter_populations == 0)


def test_auto_switches_to_expm_at_exceptional_point():
    # SSH EP3 with room for the emitter's right-side tail: the eigenbasis is singular
    H = build_hamiltonian(ssh_chain(30, 0.25, 1.0, 3))
    spec = H.spec
    rec = evolve_pure(H, InitialState.emitter_excited(spec), default_times(5, 11))
    assert rec.method == "expm"
    with pytest.raises(DynamicsError, match="condition number"):
        evolve_pure(H, InitialState.emitter_excited(spec), [0.0, 1.0], "spectral")


@pytest.mark.parametrize(
    "spec,state",
    [
        (uniform_chain(12, 0.0, 0.3), "emitter"),
        (uniform_chain(12, 2.2, 0.25), "emitter"),
        (uniform_chain(10, 0.0, 0.2, sites=(0, 5)), "pair"),
        (ssh_chain(5, 0.3, 0.5, 2), "emitter"),
    ],
)
def test_oracle_agrees_with_nonhermitian_evolution(spec, state):
    psi0 = InitialState.emitter_excited(spec) if state == "emitter" else InitialState.two_emitter(spec, [1, 0])
    t = default_times(30, 61)
    a = evolve_pure(build_hamiltonian(spec), psi0, t)
    b = evolve_nojump_oracle(spec, psi0, t)
    assert np.max(np.abs(a.emitter_populations - b.emitter_populations)) < 1e-8
    assert b.sector_trace[0] == pytest.approx(1.0)
    # the conditioned sector leaks into vacuum through the jumps
    assert np.all(np.diff(b.sector_trace) <= 1e-12)


def test_oracle_refuses_large_systems():
    spec = uniform_chain(80, 0.0, 0.1)
    with pytest.raises(ValueError):
        evolve_nojump_oracle(spec, InitialState.emitter_excited(spec), [0.0, 1.0])


def test_initial_state_validation():
    spec = uniform_chain(8, 0.0, 0.1)
    with pytest.raises(ValueError, match="exactly two emitters"):
        InitialState.two_emitter(spec, [1, 0])
    with pytest.raises(ValueError):
        InitialState.custom(np.zeros(9))
    v = InitialState.custom(np.full(9, 2.0))
    assert np.linalg.norm(v.vector) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        evolve_pure(build_hamiltonian(spec), v, [1.0, 0.5])


def test_dominant_state_and_gap():
    spec = uniform_chain(200, 0.0, 0.3)
    H = build_hamiltonian(spec)
    S = eigendecompose(H, left=False)
    vecs, energies = long_time_dominant_state(H, S)
    assert len(vecs) == 1 and energies[0].imag > 0.04
    assert dominant_gap(S) > 0
    assert dominant_subspace_fidelity(vecs[0], vecs) == pytest.approx(1.0)
    rec = evolve_pure(H, InitialState.emitter_excited(spec), [0.0, 400.0])
    M = spec.num_emitters
    final = np.sqrt(np.concatenate([rec.emitter_populations[:, -1], [rec.photon_weight[-1]]]))
    assert final[0] ** 2 == pytest.approx(np.abs(vecs[0][0]) ** 2 / np.sum(np.abs(vecs[0]) ** 2), abs=1e-6)
    assert M == 1
    with pytest.raises(DynamicsError):
        long_time_dominant_state(build_hamiltonian(uniform_chain(20, 2.5, 0.1)))


def _synthetic(p1, p2, t):
    return TrajectoryRecord(times=t, emitter_populations=np.vstack([p1, p2]), photon_weight=1 - p1 - p2)


def test_transfer_metrics_recover_cos2_law():
    t = np.linspace(0, 100, 2001)
    w = 0.37
    p1 = 0.5 * np.cos(w * t) ** 2
    rep = two_qe_transfer_metrics(_synthetic(p1, 0.5 - p1, t), w + 0.1j, im_gap=1.0)
    assert rep.kind == COHERENT_TRANSFER
    assert rep.t_transient == pytest.approx(10.0)
    assert rep.frequency == pytest.approx(w, rel=1e-8)
    assert rep.amplitude == pytest.approx(0.25, abs=1e-8)
    assert rep.strict_law_rms < 1e-10
    assert rep.sum_max_dev < 1e-12
    assert {r["quantity"] for r in rep.as_rows()} >= {"frequency", "final_pop_e_1"}


def test_transfer_metrics_flat_and_undamped_cases():
    t = np.linspace(0, 100, 1001)
    flat = np.full_like(t, 0.25)
    assert two_qe_transfer_metrics(_synthetic(flat, flat, t), 0.1j, 1.0).kind == SINGLE_DOMINANT
    assert two_qe_transfer_metrics(_synthetic(flat, flat, t), 0.3 + 0j, 1.0).kind == NO_DOMINANCE
    with pytest.raises(ValueError, match="transient cutoff"):
        two_qe_transfer_metrics(_synthetic(flat, flat, t), 0.1j, 0.05)


def test_csv_outputs():
    spec = ssh_chain(4, 0.2, 0.3, 1)
    rec = evolve_pure(build_hamiltonian(spec), InitialState.emitter_excited(spec), [0.0, 1.0], snapshot_times=[0.9])
    lines = rec.to_csv().splitlines()
    assert lines[0] == "t,pop_e_0,photon_weight"
    t0, e0, ph0 = map(float, lines[1].split(","))
    assert (t0, e0) == (0.0, 1.0) and ph0 < 1e-20
    (snap,) = rec.snapshots.values()
    text = snapshot_csv(snap, spec).splitlines()
    assert text[0] == "site_index,sublattice,re_c,im_c"
    assert text[1].startswith("0,A,") and text[2].startswith("0,B,")
    assert len(text) == 1 + 8
    assert math.isclose(list(rec.snapshots)[0], 1.0)
