"""Closed-form results for a single emitter, independent of the dense eigensolver.

All energies carry explicit ``J`` arguments (default 1) so results can be read
directly in units of the hopping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import UNIFORM, LatticeSpec

_CUT_TOL = 1e-12
ROOT_RESIDUAL_TOL = 1e-10
VDS_TAIL_TOL = 1e-10


@dataclass(frozen=True)
class PoleProblem:
    """Inputs of the single-emitter pole equation.

    ``finite_N`` selects the exact k-sum over ``N`` momenta; ``None`` means the
    thermodynamic limit.
    """

    detuning: float
    coupling: float
    lattice: LatticeSpec = LatticeSpec()
    finite_N: int | None = None

    def __post_init__(self):
        if self.coupling < 0:
            raise ValueError("coupling must be >= 0")


def branch_sqrt(E, J: float = 1.0):
    """sqrt(E^2 - 4J^2) with the cut on [-2J, 2J] and ~E at infinity."""
    E = np.asarray(E, dtype=complex)
    return np.sqrt(E - 2.0 * J) * np.sqrt(E + 2.0 * J)


def _momenta(N: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(N) / N


def self_energy(problem: PoleProblem, E: complex) -> complex:
    """Emitter self-energy.

    Uniform chain: finite k-sum ``-(kappa^2/N) sum_k 1/(E - w_k)`` or the
    thermodynamic closed form ``-kappa^2 / sqrt(E^2 - 4J^2)``. For the SSH
    chain (emitter on A) only the finite k-sum of the A-site propagator is
    available.
    """
    lat = problem.lattice
    J = lat.J
    k2 = problem.coupling**2
    E = complex(E)
    if problem.finite_N is not None:
        ks = _momenta(problem.finite_N)
        if lat.kind == UNIFORM:
            w = -2.0 * J * np.cos(ks)
            gap = np.min(np.abs(E - w))
            if gap < _CUT_TOL * J:
                raise ValueError(f"E={E} lies on a lattice mode (distance {gap:.2e})")
            return complex(-k2 * np.mean(1.0 / (E - w)))
        f2 = J**2 * np.abs((1 + lat.delta) + (1 - lat.delta) * np.exp(-1j * ks)) ** 2
        gap = np.min(np.abs(E**2 - f2))
        if gap < _CUT_TOL * J**2:
            raise ValueError(f"E={E} lies on a lattice mode")
        return complex(-k2 * np.mean(E / (E**2 - f2)))
    if lat.kind != UNIFORM:
        raise NotImplementedError("thermodynamic self-energy only for the uniform chain")
    if abs(E.imag) < _CUT_TOL * J and abs(E.real) <= 2.0 * J + _CUT_TOL * J:
        raise ValueError(f"E={E} lies on the branch cut [-2J, 2J]")
    return complex(-k2 / branch_sqrt(E, J))


def pole_residual(problem: PoleProblem, E: complex) -> float:
    """|(E - Delta) sqrt(E^2 - 4J^2) + kappa^2| on the physical sheet."""
    J = problem.lattice.J
    return float(abs((E - problem.detuning) * branch_sqrt(E, J) + problem.coupling**2))


def _quartic_coeffs(delta_e: float, kappa: float, J: float) -> np.ndarray:
    # (E - D)^2 (E^2 - 4J^2) - kappa^4
    D = delta_e
    return np.array(
        [1.0, -2.0 * D, D * D - 4.0 * J * J, 8.0 * J * J * D, -4.0 * J * J * D * D - kappa**4]
    )


def _polish(coeffs: np.ndarray, z: complex, steps: int = 3) -> complex:
    dcoeffs = np.polyder(coeffs)
    for _ in range(steps):
        d = np.polyval(dcoeffs, z)
        if abs(d) < 1e-8:
            break
        z = z - np.polyval(coeffs, z) / d
    return complex(z)


def pole_roots(problem: PoleProblem) -> list[complex]:
    """Physical-sheet roots of ``E - Delta - Sigma(E) = 0`` (thermodynamic limit).

    The squared equation is a quartic solved by companion-matrix eigenvalues;
    each candidate is kept only if it satisfies the unsquared, branch-resolved
    equation. Returned sorted by real part then imaginary part.
    """
    if problem.finite_N is not None:
        raise ValueError("pole_roots works in the thermodynamic limit")
    if problem.lattice.kind != UNIFORM:
        raise NotImplementedError("pole_roots is implemented for the uniform chain")
    J = problem.lattice.J
    coeffs = _quartic_coeffs(problem.detuning, problem.coupling, J)
    roots = []
    for z in np.roots(coeffs):
        z = _polish(coeffs, complex(z))
        if abs(z.imag) < 1e-12 * J:
            z = complex(z.real, 0.0)
        scale = max(1.0, abs(z) ** 2) * J
        on_cut = abs(z.imag) == 0.0 and abs(z.real) <= 2.0 * J
        if on_cut:
            continue
        if pole_residual(problem, z) <= ROOT_RESIDUAL_TOL * scale:
            roots.append(z)
    roots.sort(key=lambda z: (round(z.real, 12), z.imag))
    return roots


def ep_energy(detuning: float, J: float = 1.0) -> float:
    """Energy of the gap exceptional point, (Delta + sqrt(Delta^2 + 32 J^2)) / 4."""
    if not detuning > 2.0 * J:
        raise ValueError("ep_energy needs the emitter in the upper gap (Delta > 2J)")
    return (detuning + math.sqrt(detuning**2 + 32.0 * J**2)) / 4.0


def ep_coupling(detuning: float, J: float = 1.0) -> float:
    """Coupling at which the two gap bound states coalesce.

    Lower-gap detunings (Delta < -2J) map onto the upper gap by the chiral
    symmetry of the bipartite chain.
    """
    if not abs(detuning) > 2.0 * J:
        raise ValueError(
            f"no gap exceptional point for |Delta| = {abs(detuning)} <= 2J: "
            "inside the band the symmetry breaks at any nonzero coupling"
        )
    d = abs(detuning)
    e = ep_energy(d, J)
    return math.sqrt(-(e - d) * math.sqrt(e * e - 4.0 * J * J))


def bs_energy_zero_detuning(kappa: float, J: float = 1.0) -> tuple[complex, complex]:
    """(E_+, E_-) = +-sqrt(2J^2 - sqrt(4J^4 + kappa^4)); purely imaginary."""
    y = math.sqrt(max(math.sqrt(4.0 * J**4 + kappa**4) - 2.0 * J**2, 0.0))
    return complex(0.0, y), complex(0.0, -y)


def group_velocity(detuning: float, J: float = 1.0) -> float:
    """|d w_k / dk| at the resonant momentum k = arccos(-Delta / 2J)."""
    if not abs(detuning) < 2.0 * J:
        raise ValueError("no resonant band mode for |Delta| >= 2J")
    k = math.acos(-detuning / (2.0 * J))
    return abs(2.0 * J * math.sin(k))


def fermi_golden_rate(detuning: float, kappa: float, J: float = 1.0) -> float:
    """Weak-coupling rate (-i kappa)^2 / |v_g|, negative for dissipative coupling."""
    return -(kappa**2) / group_velocity(detuning, J)


def ssh_bs_energies(delta: float, kappa: float, J: float = 1.0) -> tuple[complex, complex]:
    """In-gap SSH bound states for an emitter on sublattice A at zero detuning.

    Real for kappa < 2J sqrt(delta), purely imaginary above.
    """
    inner = math.sqrt(4.0 * J**4 * (1.0 - delta**2) ** 2 + kappa**4)
    radicand = 2.0 * J**2 * (1.0 + delta**2) - inner
    if radicand >= 0:
        e = complex(math.sqrt(radicand), 0.0)
    else:
        e = complex(0.0, math.sqrt(-radicand))
    return e, -e


def ssh_ep3_coupling(delta: float, J: float = 1.0) -> float:
    if not 0 < delta < 1:
        raise ValueError("the third-order EP needs 0 < delta < 1")
    return 2.0 * J * math.sqrt(delta)


def uniform_decay_length(E: complex, J: float = 1.0) -> float:
    """Decay length (sites) of the uniform-chain Green's function at energy E.

    The amplitude falls as |z|^n with z the root of z^2 + (E/J) z + 1 = 0
    inside the unit circle.
    """
    e = complex(E) / J
    s = complex(branch_sqrt(e, 1.0))
    z = min(((-e + s) / 2.0, (-e - s) / 2.0), key=abs)
    if abs(z) >= 1.0:
        return math.inf
    return -1.0 / math.log(abs(z))


@dataclass(frozen=True)
class VdsState:
    """Vacancy-like dressed state of one emitter on sublattice A of cell ``j0``.

    ``photon_amplitudes_B[j]`` is the amplitude on the B site of cell ``j0 + j``.
    """

    emitter_amplitude: complex
    photon_amplitudes_B: np.ndarray
    delta: float
    j0: int
    num_cells: int

    def to_vector(self) -> np.ndarray:
        """Full single-excitation vector (one emitter first, then A/B sites)."""
        v = np.zeros(1 + 2 * self.num_cells, dtype=complex)
        v[0] = self.emitter_amplitude
        cells = self.j0 + np.arange(len(self.photon_amplitudes_B))
        v[1 + 2 * cells + 1] = self.photon_amplitudes_B
        return v

    def edge_state(self) -> np.ndarray:
        """Normalized photon part |ES> as a photon-block vector."""
        v = self.to_vector()[1:]
        return v / np.linalg.norm(v)


def vds_cells_needed(delta: float, tol: float = VDS_TAIL_TOL) -> int:
    """Cells to the right of j0 needed for the edge-state tail norm to drop below tol."""
    if not 0 < delta < 1:
        raise ValueError("vds_state needs 0 < delta < 1")
    return math.ceil(math.log(1.0 / tol) / math.log((1.0 + delta) / (1.0 - delta)))


def vds_state(delta: float, j0: int, num_cells: int) -> VdsState:
    """(|e>|vac> - i|g>|ES>)/sqrt(2) truncated to an open chain of ``num_cells`` cells."""
    need = vds_cells_needed(delta)
    have = num_cells - j0
    if have < need:
        raise ValueError(
            f"only {have} cells right of j0={j0}; delta={delta} needs {need} "
            f"for a tail norm below {VDS_TAIL_TOL:g}"
        )
    j = np.arange(have)
    es = 2.0 * math.sqrt(delta) * (delta - 1.0) ** j / (1.0 + delta) ** (j + 1)
    return VdsState(
        emitter_amplitude=complex(1.0 / math.sqrt(2.0)),
        photon_amplitudes_B=(-1j / math.sqrt(2.0)) * es,
        delta=delta,
        j0=j0,
        num_cells=num_cells,
    )
