"""Single-excitation Hamiltonians for emitters dissipatively coupled to a lattice.

Basis convention: emitters come first (declaration order), photon sites follow
in lattice order. For the SSH chain the photon order is (cell 0, A), (cell 0, B),
(cell 1, A), ... so photon index ``2*j + s`` with ``s = 0`` for A and 1 for B.

Emitter m attached to photon site n gets the purely imaginary amplitude
``-i*kappa`` in both directions, so the matrix is complex symmetric whenever
the photon block is real.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

UNIFORM = "uniform"
SSH = "ssh"
PERIODIC = "periodic"
OPEN = "open"

_KINDS = (UNIFORM, SSH)
_BOUNDARIES = (PERIODIC, OPEN)


class SpecError(ValueError):
    """Raised for an invalid lattice/emitter description."""


@dataclass(frozen=True)
class LatticeSpec:
    """Photonic lattice.

    ``num_sites`` counts sites for the uniform chain and unit cells for SSH.
    ``twist`` is a boundary phase (flux) applied to the wrap-around bond of a
    periodic lattice; zero gives the plain ring.
    """

    kind: str = UNIFORM
    J: float = 1.0
    delta: float = 0.0
    num_sites: int = 400
    boundary: str = PERIODIC
    twist: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise SpecError(f"lattice kind must be one of {_KINDS}, got {self.kind!r}")
        if self.boundary not in _BOUNDARIES:
            raise SpecError(f"boundary must be one of {_BOUNDARIES}, got {self.boundary!r}")
        if not self.J > 0:
            raise SpecError(f"hopping J must be positive, got {self.J}")
        if int(self.num_sites) != self.num_sites or self.num_sites < 4:
            raise SpecError(f"num_sites must be an integer >= 4, got {self.num_sites}")
        if not abs(self.delta) < 1:
            raise SpecError(f"dimerization must satisfy |delta| < 1, got {self.delta}")
        if self.twist != 0.0 and self.boundary != PERIODIC:
            raise SpecError("a boundary twist needs periodic boundary conditions")

    @property
    def photon_dim(self) -> int:
        return 2 * self.num_sites if self.kind == SSH else self.num_sites

    @property
    def periodic(self) -> bool:
        return self.boundary == PERIODIC


@dataclass(frozen=True)
class EmitterSpec:
    """Two-level emitter. For SSH lattices ``site`` is the unit-cell index."""

    detuning: float = 0.0
    site: int = 0
    coupling: float = 0.0
    sublattice: str = "A"

    def __post_init__(self):
        if self.coupling < 0:
            raise SpecError(f"coupling must be >= 0, got {self.coupling}")
        if self.sublattice not in ("A", "B"):
            raise SpecError(f"sublattice must be 'A' or 'B', got {self.sublattice!r}")


@dataclass(frozen=True)
class SystemSpec:
    lattice: LatticeSpec
    emitters: tuple[EmitterSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "emitters", tuple(self.emitters))
        if len(self.emitters) < 1:
            raise SpecError("at least one emitter is required")
        seen = {}
        kappa0 = self.emitters[0].coupling
        for m, em in enumerate(self.emitters):
            if not 0 <= em.site < self.lattice.num_sites:
                raise SpecError(
                    f"emitter {m}: site {em.site} outside lattice of "
                    f"{self.lattice.num_sites} {'cells' if self.lattice.kind == SSH else 'sites'}"
                )
            n = photon_site_index(self.lattice, em)
            if n in seen:
                raise SpecError(f"emitter {m}: attaches to the same site as emitter {seen[n]}")
            seen[n] = m
            if em.coupling != kappa0:
                raise SpecError(
                    f"emitter {m}: coupling {em.coupling} differs from emitter 0 ({kappa0}); "
                    "all emitters share one coupling strength"
                )

    @property
    def num_emitters(self) -> int:
        return len(self.emitters)

    @property
    def dim(self) -> int:
        return self.num_emitters + self.lattice.photon_dim

    @property
    def coupling(self) -> float:
        return self.emitters[0].coupling

    def with_coupling(self, kappa: float) -> "SystemSpec":
        return replace(self, emitters=tuple(replace(e, coupling=float(kappa)) for e in self.emitters))

    def with_detuning(self, detuning: float) -> "SystemSpec":
        return replace(self, emitters=tuple(replace(e, detuning=float(detuning)) for e in self.emitters))


def uniform_chain(
    num_sites: int = 400,
    detuning: float = 0.0,
    coupling: float = 0.0,
    sites: Sequence[int] = (0,),
    *,
    J: float = 1.0,
    boundary: str = PERIODIC,
    twist: float = 0.0,
) -> SystemSpec:
    """Convenience constructor: identical emitters on a uniform chain."""
    lattice = LatticeSpec(UNIFORM, J=J, num_sites=num_sites, boundary=boundary, twist=twist)
    emitters = tuple(EmitterSpec(detuning, int(s), coupling) for s in sites)
    return SystemSpec(lattice, emitters)


def ssh_chain(
    num_cells: int,
    delta: float,
    coupling: float = 0.0,
    cell: int | None = None,
    *,
    sublattice: str = "A",
    detuning: float = 0.0,
    J: float = 1.0,
    boundary: str = OPEN,
) -> SystemSpec:
    """One emitter on an SSH chain; defaults to an open chain, emitter mid-chain."""
    if cell is None:
        cell = num_cells // 2
    lattice = LatticeSpec(SSH, J=J, delta=delta, num_sites=num_cells, boundary=boundary)
    return SystemSpec(lattice, (EmitterSpec(detuning, cell, coupling, sublattice),))


def photon_site_index(lattice: LatticeSpec, emitter: EmitterSpec) -> int:
    """Photon index (within the photon block) of the site an emitter couples to."""
    if lattice.kind == SSH:
        return 2 * emitter.site + (0 if emitter.sublattice == "A" else 1)
    return emitter.site


@dataclass(frozen=True)
class BasisIndex:
    """Row ordering of the single-excitation basis."""

    num_emitters: int
    lattice: LatticeSpec

    @property
    def dim(self) -> int:
        return self.num_emitters + self.lattice.photon_dim

    @property
    def photon_slice(self) -> slice:
        return slice(self.num_emitters, self.dim)

    def emitter(self, m: int) -> int:
        if not 0 <= m < self.num_emitters:
            raise IndexError(f"emitter {m} out of range")
        return m

    def photon(self, n: int, sublattice: str | None = None) -> int:
        """Row of photon site ``n`` (uniform) or of cell ``n`` / ``sublattice`` (SSH)."""
        if self.lattice.kind == SSH:
            if sublattice not in ("A", "B"):
                raise ValueError("SSH photon sites need sublattice 'A' or 'B'")
            p = 2 * n + (0 if sublattice == "A" else 1)
        else:
            p = n
        if not 0 <= p < self.lattice.photon_dim:
            raise IndexError(f"photon site {n} out of range")
        return self.num_emitters + p

    def label(self, row: int) -> str:
        if row < self.num_emitters:
            return f"e{row}"
        p = row - self.num_emitters
        if self.lattice.kind == SSH:
            return f"{p // 2}{'AB'[p % 2]}"
        return str(p)


@dataclass(frozen=True, eq=False)
class HamiltonianMatrix:
    matrix: np.ndarray
    basis: BasisIndex
    spec: SystemSpec

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def emitter_rows(self) -> np.ndarray:
        return np.arange(self.basis.num_emitters)

    def coupled_photon_sites(self) -> list[int]:
        return [photon_site_index(self.spec.lattice, e) for e in self.spec.emitters]

    def to_text(self) -> str:
        """Dense text dump: header line with D, then D rows of ``re,im`` pairs."""
        lines = [str(self.dim)]
        for row in self.matrix:
            lines.append(" ".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in row))
        return "\n".join(lines) + "\n"


def read_matrix_text(text: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    dim = int(lines[0])
    out = np.empty((dim, dim), dtype=complex)
    for i, ln in enumerate(lines[1 : dim + 1]):
        pairs = ln.split()
        if len(pairs) != dim:
            raise ValueError(f"row {i}: expected {dim} entries, got {len(pairs)}")
        for j, p in enumerate(pairs):
            re, im = p.split(",")
            out[i, j] = complex(float(re), float(im))
    return out


@dataclass(frozen=True, eq=False)
class PseudoMetric:
    diag: np.ndarray = field(repr=False)

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.diag).astype(complex)

    def conjugate(self, H: np.ndarray) -> np.ndarray:
        """Return eta @ H @ eta^-1 (eta is its own inverse)."""
        return self.diag[:, None] * H * self.diag[None, :]


def _photon_block(lattice: LatticeSpec) -> np.ndarray:
    J = lattice.J
    dim = lattice.photon_dim
    block = np.zeros((dim, dim), dtype=complex)
    if lattice.kind == UNIFORM:
        idx = np.arange(dim - 1)
        block[idx, idx + 1] = -J
        block[idx + 1, idx] = -J
    else:
        d = lattice.delta
        cells = np.arange(lattice.num_sites)
        block[2 * cells, 2 * cells + 1] = -J * (1 + d)
        block[2 * cells + 1, 2 * cells] = -J * (1 + d)
        inter = cells[:-1]
        block[2 * inter + 1, 2 * inter + 2] = -J * (1 - d)
        block[2 * inter + 2, 2 * inter + 1] = -J * (1 - d)
    if lattice.periodic:
        hop = -J if lattice.kind == UNIFORM else -J * (1 - lattice.delta)
        phase = np.exp(1j * lattice.twist)
        # wrap-around bond: last site -> first site picks up the twist
        block[0, dim - 1] += hop * np.conj(phase)
        block[dim - 1, 0] += hop * phase
    return block


def build_hamiltonian(spec: SystemSpec) -> HamiltonianMatrix:
    """Dense single-excitation matrix of the effective non-Hermitian Hamiltonian."""
    M = spec.num_emitters
    D = spec.dim
    H = np.zeros((D, D), dtype=complex)
    H[M:, M:] = _photon_block(spec.lattice)
    for m, em in enumerate(spec.emitters):
        n = M + photon_site_index(spec.lattice, em)
        H[m, m] = em.detuning
        H[m, n] = -1j * em.coupling
        H[n, m] = -1j * em.coupling
    H.setflags(write=False)
    return HamiltonianMatrix(H, BasisIndex(M, spec.lattice), spec)


def build_pseudo_metric(spec: SystemSpec) -> PseudoMetric:
    diag = -np.ones(spec.dim)
    diag[: spec.num_emitters] = 1.0
    diag.setflags(write=False)
    return PseudoMetric(diag)


def dispersion(J: float, k):
    """Uniform-chain band: -2J cos k."""
    return -2.0 * J * np.cos(k)


_SX = np.array([[0, 1], [1, 0]], dtype=complex)
_SY = np.array([[0, -1j], [1j, 0]], dtype=complex)


def bloch_hamiltonian(J: float, delta: float, k: float) -> np.ndarray:
    """2x2 SSH Bloch matrix in the (A, B) sublattice basis."""
    if not abs(delta) < 1:
        raise SpecError(f"dimerization must satisfy |delta| < 1, got {delta}")
    dx = -J * ((1 + delta) + (1 - delta) * np.cos(k))
    dy = -J * (1 - delta) * np.sin(k)
    return dx * _SX + dy * _SY


def band_edges(lattice: LatticeSpec) -> list[tuple[float, float]]:
    J = lattice.J
    if lattice.kind == UNIFORM or lattice.delta == 0.0:
        return [(-2.0 * J, 2.0 * J)]
    inner = 2.0 * J * abs(lattice.delta)
    return [(-2.0 * J, -inner), (inner, 2.0 * J)]


def distance_to_bands(lattice: LatticeSpec, energy: float) -> float:
    """Distance of a real energy from the nearest band; zero inside a band."""
    d = np.inf
    for lo, hi in band_edges(lattice):
        if lo <= energy <= hi:
            return 0.0
        d = min(d, lo - energy if energy < lo else energy - hi)
    return float(d)


def photon_positions(lattice: LatticeSpec) -> np.ndarray:
    """Position of each photon site along the chain, in sites."""
    return np.arange(lattice.photon_dim)
