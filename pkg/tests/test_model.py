import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from dissipative_wqed.model import (
    OPEN,
    PERIODIC,
    SSH,
    UNIFORM,
    BasisIndex,
    EmitterSpec,
    LatticeSpec,
    SpecError,
    SystemSpec,
    band_edges,
    bloch_hamiltonian,
    build_hamiltonian,
    build_pseudo_metric,
    dispersion,
    distance_to_bands,
    read_matrix_text,
    ssh_chain,
    uniform_chain,
)


@st.composite
def systems(draw):
    kind = draw(st.sampled_from([UNIFORM, SSH]))
    boundary = draw(st.sampled_from([PERIODIC, OPEN]))
    J = draw(st.floats(0.2, 3.0))
    n = draw(st.integers(4, 24))
    delta = draw(st.floats(-0.95, 0.95)) if kind == SSH else 0.0
    twist = draw(st.floats(0, 2 * np.pi)) if boundary == PERIODIC and kind == UNIFORM else 0.0
    lattice = LatticeSpec(kind, J=J, delta=delta, num_sites=n, boundary=boundary, twist=twist)
    n_ph = lattice.photon_dim
    flat = draw(st.lists(st.integers(0, n_ph - 1), min_size=1, max_size=3, unique=True))
    kappa = draw(st.floats(0, 2.0))
    ems = []
    for f in flat:
        if kind == SSH:
            ems.append(EmitterSpec(draw(st.floats(-4, 4)), f // 2, kappa, "AB"[f % 2]))
        else:
            ems.append(EmitterSpec(draw(st.floats(-4, 4)), f, kappa))
    return SystemSpec(lattice, tuple(ems))


@settings(max_examples=200, deadline=None)
@given(systems())
def test_pseudo_hermiticity_property(spec):
    H = build_hamiltonian(spec).matrix
    eta = build_pseudo_metric(spec)
    scale = max(np.max(np.abs(H)), 1e-300)
    assert np.max(np.abs(eta.conjugate(H) - H.conj().T)) <= 1e-13 * scale


@settings(max_examples=100, deadline=None)
@given(systems())
def test_eigenvalues_closed_under_conjugation(spec):
    w = np.linalg.eigvals(build_hamiltonian(spec).matrix)
    # near-defective spectra (exceptional points) lose half the digits
    gaps = np.abs(w[:, None] - w[None, :]) + np.eye(len(w))
    assume(gaps.min() > 1e-3)
    for E in w:
        assert np.min(np.abs(w - np.conj(E))) <= 1e-8 * max(1.0, np.max(np.abs(w)))


def test_uniform_block_entries():
    spec = uniform_chain(6, detuning=0.7, coupling=0.2, sites=(2,), J=1.5)
    H = build_hamiltonian(spec).matrix
    assert H.shape == (7, 7)
    assert H[0, 0] == 0.7
    assert H[0, 1 + 2] == -0.2j and H[1 + 2, 0] == -0.2j
    ph = H[1:, 1:]
    assert ph[0, 1] == -1.5 and ph[5, 0] == -1.5  # ring closure
    assert np.allclose(H, H.T)  # complex symmetric without twist


def test_open_chain_has_no_wrap_bond():
    H = build_hamiltonian(uniform_chain(6, boundary=OPEN)).matrix
    assert H[1 + 5, 1 + 0] == 0


def test_ssh_bonds_and_indexing():
    spec = ssh_chain(4, 0.25, 0.3, cell=1, sublattice="B")
    basis = BasisIndex(1, spec.lattice)
    assert basis.photon(1, "A") == 1 + 2 and basis.photon(1, "B") == 1 + 3
    H = build_hamiltonian(spec).matrix
    ph = H[1:, 1:]
    assert ph[2, 3] == pytest.approx(-1.25)  # intracell A1-B1
    assert ph[3, 4] == pytest.approx(-0.75)  # intercell B1-A2
    assert ph[7, 0] == 0  # open
    assert H[0, 1 + 3] == -0.3j


def test_twist_phase_on_wrap_bond():
    spec = uniform_chain(5, twist=0.4)
    ph = build_hamiltonian(spec).matrix[1:, 1:]
    assert abs(ph[4, 0]) == pytest.approx(1.0)
    assert np.allclose(ph, ph.conj().T)
    assert not np.allclose(ph, ph.T)


def test_photon_block_diagonalized_by_fourier():
    N, J = 12, 1.3
    ph = build_hamiltonian(uniform_chain(N, J=J)).matrix[1:, 1:]
    k = 2 * np.pi * np.arange(N) / N
    assert np.allclose(np.sort(np.linalg.eigvalsh(ph)), np.sort(dispersion(J, k)), atol=1e-12)


def test_ssh_bands_match_bloch_hamiltonian():
    L, J, d = 10, 1.0, 0.3
    ph = build_hamiltonian(ssh_chain(L, d, boundary=PERIODIC)).matrix[1:, 1:]
    k = 2 * np.pi * np.arange(L) / L
    bloch = np.concatenate([np.linalg.eigvalsh(bloch_hamiltonian(J, d, q)) for q in k])
    assert np.allclose(np.sort(np.linalg.eigvalsh(ph)), np.sort(bloch), atol=1e-12)


def test_band_edges_and_distance():
    lat = LatticeSpec(SSH, delta=0.25, num_sites=10, boundary=OPEN)
    assert band_edges(lat) == [(-2.0, -0.5), (0.5, 2.0)]
    assert distance_to_bands(lat, 0.0) == pytest.approx(0.5)
    assert distance_to_bands(LatticeSpec(), 2.5) == pytest.approx(0.5)
    assert distance_to_bands(LatticeSpec(), 1.0) == 0.0


def test_validation_names_offending_emitter():
    lat = LatticeSpec(num_sites=8)
    with pytest.raises(SpecError, match="emitter 1: site 9"):
        SystemSpec(lat, (EmitterSpec(0, 0, 0.1), EmitterSpec(0, 9, 0.1)))
    with pytest.raises(SpecError, match="emitter 1: attaches to the same site"):
        SystemSpec(lat, (EmitterSpec(0, 3, 0.1), EmitterSpec(0, 3, 0.1)))
    with pytest.raises(SpecError, match="emitter 1: coupling"):
        SystemSpec(lat, (EmitterSpec(0, 0, 0.1), EmitterSpec(0, 3, 0.2)))
    with pytest.raises(SpecError):
        LatticeSpec(delta=1.0)
    with pytest.raises(SpecError):
        LatticeSpec(boundary=OPEN, twist=0.1)
    with pytest.raises(SpecError):
        EmitterSpec(coupling=-0.1)


def test_matrix_text_round_trip():
    H = build_hamiltonian(uniform_chain(5, 0.3, 0.2, sites=(0, 2)))
    back = read_matrix_text(H.to_text())
    assert np.array_equal(back, H.matrix)


def test_matrix_is_read_only():
    H = build_hamiltonian(uniform_chain(5))
    with pytest.raises(ValueError):
        H.matrix[0, 0] = 1.0
