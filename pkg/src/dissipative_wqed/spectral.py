"""Spectra, pseudo-Hermitian phase, bound states and exceptional points."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import minimize_scalar

from .model import (
    SSH,
    HamiltonianMatrix,
    LatticeSpec,
    SystemSpec,
    build_hamiltonian,
    distance_to_bands,
    photon_site_index,
)

UNBROKEN = "unbroken"
BROKEN = "broken"

EPS_REAL_REL = 1e-9
EPS_BAND = 1e-8
RESIDUAL_TOL = 1e-10

FIT_WINDOW = (1e-8, 1e-1)
FIT_SKIP = 3
FIT_MIN_POINTS = 6


class EigensolverError(RuntimeError):
    pass


class EPSearchError(RuntimeError):
    pass


def eps_real(eigenvalues: np.ndarray, J: float = 1.0, rel: float = EPS_REAL_REL) -> float:
    """Reality tolerance: rel * max(1, spectral radius / J), in energy units."""
    rho = float(np.max(np.abs(eigenvalues))) / J if len(eigenvalues) else 0.0
    return rel * max(1.0, rho) * J


def phase_of(eigenvalues: np.ndarray, J: float = 1.0, rel: float = EPS_REAL_REL) -> str:
    tol = eps_real(eigenvalues, J, rel)
    return BROKEN if np.any(np.abs(np.imag(eigenvalues)) > tol) else UNBROKEN


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenpairs of H.

    ``right_vectors[:, i]`` and ``left_vectors[:, i]`` are unit vectors with
    ``H r = E r`` and ``H^dagger l = conj(E) l``. ``partner[i]`` is the index of
    the complex-conjugate partner, or -1 for eigenvalues classified real.
    """

    eigenvalues: np.ndarray
    right_vectors: np.ndarray
    left_vectors: np.ndarray | None
    partner: np.ndarray
    phase: str
    eps_real: float

    def __len__(self):
        return len(self.eigenvalues)

    def is_real(self, i: int) -> bool:
        return self.partner[i] < 0


def _pair_conjugates(w: np.ndarray, tol: float) -> np.ndarray:
    partner = -np.ones(len(w), dtype=int)
    complex_idx = [i for i in range(len(w)) if abs(w[i].imag) > tol]
    free = set(complex_idx)
    for i in complex_idx:
        if i not in free:
            continue
        free.discard(i)
        cands = [j for j in free if np.sign(w[j].imag) != np.sign(w[i].imag)]
        if not cands:
            continue
        j = min(cands, key=lambda j: abs(w[j] - np.conj(w[i])))
        partner[i], partner[j] = j, i
        free.discard(j)
    return partner


def sort_order(w: np.ndarray) -> np.ndarray:
    return np.lexsort((np.round(w.imag, 10), np.round(w.real, 10)))


def eigendecompose(
    H: HamiltonianMatrix, left: bool = True, eps_real_rel: float = EPS_REAL_REL
) -> Spectrum:
    """Dense eigendecomposition with conjugate pairing and phase.

    Eigenvalues are sorted by real part, then imaginary part. Set
    ``left=False`` to skip the left eigenvectors (about half the cost).
    """
    A = np.array(H.matrix, dtype=complex)
    try:
        if left:
            w, vl, vr = scipy.linalg.eig(A, left=True, right=True, check_finite=True)
        else:
            w, vr = scipy.linalg.eig(A, right=True, check_finite=True)
            vl = None
    except (np.linalg.LinAlgError, ValueError) as exc:
        cond = np.linalg.cond(A)
        raise EigensolverError(f"eigensolver failed on {A.shape} matrix (cond={cond:.3e}): {exc}")
    order = sort_order(w)
    w = w[order]
    vr = vr[:, order]
    vr = vr / np.linalg.norm(vr, axis=0)
    if vl is not None:
        vl = vl[:, order]
        vl = vl / np.linalg.norm(vl, axis=0)

    norm2 = np.linalg.norm(A, 2)
    res = np.linalg.norm(A @ vr - vr * w, axis=0)
    if np.any(res > RESIDUAL_TOL * max(norm2, 1e-300)):
        bad = int(np.argmax(res))
        raise EigensolverError(
            f"eigenpair {bad} residual {res[bad]:.3e} exceeds {RESIDUAL_TOL:g}*||H||_2 "
            f"(||H||_2={norm2:.3e}, cond(V)={np.linalg.cond(vr):.3e})"
        )
    J = H.spec.lattice.J
    tol = eps_real(w, J, eps_real_rel)
    partner = _pair_conjugates(w, tol)
    return Spectrum(w, vr, vl, partner, phase_of(w, J, eps_real_rel), tol)


def classify_phase(spectrum: Spectrum) -> str:
    return spectrum.phase


@dataclass(frozen=True, eq=False)
class BoundState:
    energy: complex
    emitter_amplitudes: np.ndarray
    photon_profile: np.ndarray
    emitter_population: float
    localization_length: float
    fit_quality: float
    anchor_site: int
    index: int = -1
    periodic: bool = False

    @property
    def photon_weight(self) -> float:
        return float(np.sum(np.abs(self.photon_profile) ** 2))


def _fix_gauge(v: np.ndarray, num_emitters: int) -> np.ndarray:
    # deterministic global phase: largest emitter amplitude (else largest entry) real positive
    ref = v[:num_emitters] if num_emitters and np.max(np.abs(v[:num_emitters])) > 1e-12 else v
    k = int(np.argmax(np.abs(ref)))
    ph = ref[k] / abs(ref[k])
    return v / ph


def localization_length(
    profile: np.ndarray,
    anchor: int | Sequence[int],
    periodic: bool = False,
) -> tuple[float, float]:
    """Fit |c_n| ~ exp(-d/lambda) with d the distance (sites) to the nearest anchor.

    Uses sites with amplitude in [1e-8, 1e-1] x max, skipping those within 3
    sites of an anchor. Returns ``(nan, nan)`` when fewer than 6 points remain.
    """
    amp = np.abs(np.asarray(profile))
    n_sites = len(amp)
    mx = amp.max() if n_sites else 0.0
    if mx == 0.0:
        return math.nan, math.nan
    anchors = np.atleast_1d(np.asarray(anchor))
    n = np.arange(n_sites)
    d = np.abs(n[:, None] - anchors[None, :])
    if periodic:
        d = np.minimum(d, n_sites - d)
    d = d.min(axis=1)
    lo, hi = FIT_WINDOW
    use = (amp >= lo * mx) & (amp <= hi * mx) & (d > FIT_SKIP)
    if use.sum() < FIT_MIN_POINTS:
        return math.nan, math.nan
    x = d[use].astype(float)
    y = np.log(amp[use])
    if np.ptp(x) == 0:
        return math.nan, math.nan
    slope, intercept = np.polyfit(x, y, 1)
    fit = slope * x + intercept
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum((y - fit) ** 2) / ss_tot if ss_tot > 0 else 1.0
    if slope >= 0:
        return math.nan, float(r2)
    return float(-1.0 / slope), float(r2)


def bound_state_from_vector(
    vector: np.ndarray, energy: complex, H: HamiltonianMatrix, index: int = -1
) -> BoundState:
    """Package an eigenvector (Euclidean-normalized) as a BoundState."""
    M = H.basis.num_emitters
    v = np.asarray(vector, dtype=complex)
    v = _fix_gauge(v / np.linalg.norm(v), M)
    ce = v[:M]
    profile = v[M:]
    sites = H.coupled_photon_sites()
    # dominant emitter anchors the chirality split; all anchors enter the fit
    anchor = sites[int(np.argmax(np.abs(ce)))] if M else 0
    lam, r2 = localization_length(profile, sites, periodic=H.spec.lattice.periodic)
    return BoundState(
        energy=complex(energy),
        emitter_amplitudes=ce,
        photon_profile=profile,
        emitter_population=float(np.sum(np.abs(ce) ** 2)),
        localization_length=lam,
        fit_quality=r2,
        anchor_site=anchor,
        index=index,
        periodic=H.spec.lattice.periodic,
    )


def is_bound(spectrum: Spectrum, i: int, lattice: LatticeSpec, eps_band: float = EPS_BAND) -> bool:
    E = spectrum.eigenvalues[i]
    if abs(E.imag) > spectrum.eps_real:
        return True
    return distance_to_bands(lattice, E.real) > eps_band * lattice.J


def extract_bound_states(
    spectrum: Spectrum, H: HamiltonianMatrix, eps_band: float = EPS_BAND
) -> list[BoundState]:
    """Eigenstates that are complex or lie outside every band."""
    out = []
    for i in range(len(spectrum)):
        if is_bound(spectrum, i, H.spec.lattice, eps_band):
            out.append(
                bound_state_from_vector(spectrum.right_vectors[:, i], spectrum.eigenvalues[i], H, i)
            )
    return out


def phase_rigidity(spectrum: Spectrum, index: int) -> float:
    """|<L_i|R_i>| / (|L_i| |R_i|); 1 for normal modes, 0 at an exceptional point."""
    if spectrum.left_vectors is None:
        raise ValueError("phase rigidity needs left eigenvectors (eigendecompose(left=True))")
    r = spectrum.right_vectors[:, index]
    l = spectrum.left_vectors[:, index]
    return float(abs(np.vdot(l, r)) / (np.linalg.norm(l) * np.linalg.norm(r)))


def sublattice_weights(state: BoundState, lattice: LatticeSpec) -> tuple[float, float, float, float]:
    """Photon weight on A, on B, left of and right of the emitter's site.

    Sides are taken along the chain order (A_0, B_0, A_1, ...); weight on the
    emitter's own site is shared equally between the two sides.
    """
    if lattice.kind != SSH:
        raise ValueError("sublattice weights are defined for SSH lattices only")
    w = np.abs(state.photon_profile) ** 2
    w_a = float(w[0::2].sum())
    w_b = float(w[1::2].sum())
    x = np.arange(len(w))
    x0 = state.anchor_site
    w_left = float(w[x < x0].sum() + 0.5 * w[x == x0].sum())
    w_right = float(w[x > x0].sum() + 0.5 * w[x == x0].sum())
    return w_a, w_b, w_left, w_right


def bound_state_table(
    states: Sequence[BoundState],
    lattice: LatticeSpec,
    rigidities: Sequence[float] | None = None,
) -> list[dict]:
    rows = []
    for k, s in enumerate(states):
        if lattice.kind == SSH:
            wa, wb, wl, wr = sublattice_weights(s, lattice)
        else:
            wa = wb = wl = wr = math.nan
        rows.append(
            {
                "re_E": s.energy.real,
                "im_E": s.energy.imag,
                "emitter_population": s.emitter_population,
                "lambda": s.localization_length,
                "r_squared": s.fit_quality,
                "phase_rigidity": math.nan if rigidities is None else rigidities[k],
                "w_A": wa,
                "w_B": wb,
                "w_left": wl,
                "w_right": wr,
            }
        )
    return rows


SPECTRUM_COLUMNS = (
    "re_E",
    "im_E",
    "emitter_population",
    "lambda",
    "r_squared",
    "phase_rigidity",
    "w_A",
    "w_B",
    "w_left",
    "w_right",
)


def spectrum_table(spectrum: Spectrum, H: HamiltonianMatrix, eps_band: float = EPS_BAND) -> list[dict]:
    """One row per eigenvalue; bound-state fields filled where applicable."""
    lattice = H.spec.lattice
    rows = []
    for i in range(len(spectrum)):
        E = spectrum.eigenvalues[i]
        rig = phase_rigidity(spectrum, i) if spectrum.left_vectors is not None else math.nan
        s = bound_state_from_vector(spectrum.right_vectors[:, i], E, H, i)
        bound = is_bound(spectrum, i, lattice, eps_band)
        row = bound_state_table([s], lattice, [rig])[0]
        if not bound:
            row["lambda"] = row["r_squared"] = math.nan
        rows.append(row)
    return rows


def fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        if math.isnan(x):
            return "NaN"
        return f"{float(x):.12g}"
    return str(x)


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    buf = io.StringIO()
    if columns is None:
        columns = list(rows[0].keys()) if rows else list(SPECTRUM_COLUMNS)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([fmt(r.get(c, math.nan)) for c in columns])
    return buf.getvalue()


# ---------------------------------------------------------------- EP search


@dataclass(frozen=True)
class EPEstimate:
    coupling: float
    energy: complex
    order: int
    residual: float
    method: str
    extrapolated_coupling: float = math.nan
    rigidity: float = math.nan
    cluster: tuple = field(default=())


IM_SQUARED = "ImSquaredExtrapolation"
RIGIDITY_MIN = "RigidityMinimum"


def _max_im(spec: SystemSpec, kappa: float) -> tuple[float, float]:
    w = scipy.linalg.eigvals(build_hamiltonian(spec.with_coupling(kappa)).matrix)
    return float(np.max(np.abs(w.imag))), eps_real(w, spec.lattice.J)


def _bound_rigidities(spec: SystemSpec, kappa: float):
    H = build_hamiltonian(spec.with_coupling(kappa))
    S = eigendecompose(H, left=True)
    idx = [i for i in range(len(S)) if is_bound(S, i, spec.lattice)]
    return H, S, idx, [phase_rigidity(S, i) for i in idx]


def find_ep(
    spec_template: SystemSpec,
    kappa_range: tuple[float, float],
    expected_order: int = 2,
    coarse_points: int = 41,
    fit_points: int = 8,
    xtol: float = 1e-9,
) -> EPEstimate:
    """Locate the coupling where the spectrum first turns complex.

    1. A coarse scan brackets the onset between the last unbroken and the
       first broken grid point.
    2. Near a square-root EP the largest |Im E|^2 grows linearly in kappa;
       a line fitted just above the onset is extrapolated to zero.
    3. The minimum of the phase rigidity of the bound modes is polished
       with a bounded Brent search around the extrapolated value.
    The order is the size of the eigenvalue cluster among bound modes at the
    final coupling.
    """
    lo, hi = map(float, kappa_range)
    if not hi > lo >= 0:
        raise ValueError(f"bad coupling range {kappa_range}")
    im_lo, tol_lo = _max_im(spec_template, lo)
    im_hi, tol_hi = _max_im(spec_template, hi)
    if im_lo > tol_lo:
        raise EPSearchError(
            f"spectrum already complex at kappa={lo:g} (max|Im E|={im_lo:.3e}); "
            "no unbroken endpoint, onset at or below the range start"
        )
    if im_hi <= tol_hi:
        raise EPSearchError(f"no symmetry-breaking onset in [{lo:g}, {hi:g}]")

    grid = np.linspace(lo, hi, coarse_points)
    a, b = lo, hi
    for k in grid[1:]:
        im, tol = _max_im(spec_template, k)
        if im > tol:
            b = k
            break
        a = k
    # tighten the bracket so the Im^2 fit sits in the square-root regime
    for _ in range(12):
        mid = 0.5 * (a + b)
        im, tol = _max_im(spec_template, mid)
        if im > tol:
            b = mid
        else:
            a = mid
    width = b - a
    ks = b + width * np.arange(fit_points)
    im2 = np.array([_max_im(spec_template, k)[0] ** 2 for k in ks])
    slope, icpt = np.polyfit(ks, im2, 1)
    kx = -icpt / slope if slope > 0 else 0.5 * (a + b)
    kx = min(max(kx, a), b)

    def objective(k):
        _, _, _, rig = _bound_rigidities(spec_template, k)
        return min(rig) if rig else 1.0

    span = max(width, 1e-6)
    left, right = max(a - span, lo), min(b + span, hi)
    res = minimize_scalar(objective, bounds=(left, right), method="bounded", options={"xatol": xtol})
    k_star, method = float(res.x), RIGIDITY_MIN
    if not (a - span <= k_star <= b + span):
        k_star, method = kx, IM_SQUARED

    H, S, idx, rig = _bound_rigidities(spec_template, k_star)
    order, center, spread, members = _cluster(S, idx, xtol, expected_order)
    return EPEstimate(
        coupling=k_star,
        energy=center,
        order=order,
        residual=spread,
        method=method,
        extrapolated_coupling=float(kx),
        rigidity=min(rig) if rig else math.nan,
        cluster=tuple(members),
    )


def cluster_radius(step: float, order: int) -> float:
    return 10.0 * step ** (1.0 / order)


def _cluster(S: Spectrum, idx: list[int], step: float, expected_order: int):
    if len(idx) < 2:
        raise EPSearchError(f"only {len(idx)} bound modes at the EP estimate")
    w = S.eigenvalues[idx]
    # seed: closest pair of bound eigenvalues
    best = None
    for p in range(len(w)):
        for q in range(p + 1, len(w)):
            d = abs(w[p] - w[q])
            if best is None or d < best[0]:
                best = (d, p, q)
    center = 0.5 * (w[best[1]] + w[best[2]])
    found = []
    for order in (2, 3):
        r = cluster_radius(step, order)
        members = [idx[k] for k in range(len(w)) if abs(w[k] - center) <= r]
        if len(members) == order:
            found.append((order, members))
    if not found:
        counts = {q: int(np.sum(np.abs(w - center) <= cluster_radius(step, q))) for q in (2, 3)}
        raise EPSearchError(f"ambiguous EP cluster at E~{center:.6g}: counts within radius {counts}")
    match = [f for f in found if f[0] == expected_order]
    order, members = match[0] if match else found[-1]
    if order != expected_order:
        raise EPSearchError(
            f"expected an order-{expected_order} EP, eigenvalue cluster has {order} members"
        )
    cw = S.eigenvalues[members]
    center = complex(np.mean(cw))
    spread = float(np.max(np.abs(cw - center)))
    return order, center, spread, members


def coalescence_cluster(spectrum: Spectrum, lattice: LatticeSpec, size: int, center: complex = 0j) -> list[int]:
    """Indices of the ``size`` bound eigenvalues nearest ``center``."""
    idx = [i for i in range(len(spectrum)) if is_bound(spectrum, i, lattice)]
    idx.sort(key=lambda i: abs(spectrum.eigenvalues[i] - center))
    return idx[:size]


def photon_anchor(spec: SystemSpec, m: int = 0) -> int:
    return photon_site_index(spec.lattice, spec.emitters[m])


def state_fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """|<a|b>|^2 / (|a|^2 |b|^2)."""
    return float(abs(np.vdot(a, b)) ** 2 / (np.vdot(a, a).real * np.vdot(b, b).real))


def splitting_exponent(
    spec_template: SystemSpec,
    kappa_ep: float,
    size: int,
    center: complex = 0j,
    offsets=None,
) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Power-law exponent of the EP splitting on the unbroken side.

    Evaluates the spread ``max |E_i - center|`` of the ``size`` bound
    eigenvalues nearest ``center`` at ``kappa_ep - offset`` and fits
    log(spread) against log(offset). Returns (exponent, R^2, offsets, spreads).
    """
    if offsets is None:
        offsets = np.logspace(-6, -3, 13)
    offsets = np.asarray(offsets, dtype=float)
    spreads = np.empty(len(offsets))
    for k, d in enumerate(offsets):
        S = eigendecompose(build_hamiltonian(spec_template.with_coupling(kappa_ep - d)), left=False)
        idx = coalescence_cluster(S, spec_template.lattice, size, center)
        spreads[k] = float(np.max(np.abs(S.eigenvalues[idx] - center)))
    x, y = np.log(offsets), np.log(spreads)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else math.nan
    return float(slope), r2, offsets, spreads
