"""Normalized non-unitary evolution in the single-excitation sector."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp
from scipy.optimize import OptimizeWarning, curve_fit

from .model import SSH, HamiltonianMatrix, SystemSpec, build_hamiltonian, photon_site_index
from .spectral import BROKEN, Spectrum, eigendecompose, fmt

COND_LIMIT = 1e8
MAX_GROWTH_PER_STEP = 30.0
ORACLE_MAX_DIM = 64
EPS_DEGENERATE = 1e-6
NORM_TOL = 1e-9
TRANSIENT_FACTOR = 10.0

SINGLE_EMITTER = "single_emitter"
TWO_EMITTER = "two_emitter"
PHOTON_AT_SITE = "photon_at_site"
CUSTOM = "custom"


class DynamicsError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class InitialState:
    kind: str
    vector: np.ndarray

    @classmethod
    def emitter_excited(cls, spec: SystemSpec, m: int = 0) -> "InitialState":
        v = np.zeros(spec.dim, dtype=complex)
        v[m] = 1.0
        return cls(SINGLE_EMITTER, v)

    @classmethod
    def two_emitter(cls, spec: SystemSpec, amplitudes: Sequence[complex]) -> "InitialState":
        if spec.num_emitters != 2 or len(amplitudes) != 2:
            raise ValueError("two-emitter superposition needs exactly two emitters")
        v = np.zeros(spec.dim, dtype=complex)
        v[:2] = amplitudes
        return cls(TWO_EMITTER, v / np.linalg.norm(v))

    @classmethod
    def photon_at_site(cls, spec: SystemSpec, n: int) -> "InitialState":
        v = np.zeros(spec.dim, dtype=complex)
        v[spec.num_emitters + n] = 1.0
        return cls(PHOTON_AT_SITE, v)

    @classmethod
    def custom(cls, vector: np.ndarray) -> "InitialState":
        v = np.asarray(vector, dtype=complex)
        nrm = np.linalg.norm(v)
        if nrm == 0:
            raise ValueError("initial vector must be nonzero")
        return cls(CUSTOM, v / nrm)


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    times: np.ndarray
    emitter_populations: np.ndarray  # (M, T)
    photon_weight: np.ndarray
    snapshots: dict = field(default_factory=dict)
    method: str = ""
    sector_trace: np.ndarray | None = None

    @property
    def num_emitters(self) -> int:
        return self.emitter_populations.shape[0]

    @property
    def total_emitter_population(self) -> np.ndarray:
        return self.emitter_populations.sum(axis=0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"pop_e_{m}" for m in range(self.num_emitters)] + ["photon_weight"])
        for k, t in enumerate(self.times):
            w.writerow([fmt(float(t))] + [fmt(float(p)) for p in self.emitter_populations[:, k]]
                       + [fmt(float(self.photon_weight[k]))])
        return buf.getvalue()


def snapshot_csv(state: np.ndarray, spec: SystemSpec) -> str:
    """Photon amplitudes of one state: site_index, sublattice, re_c, im_c."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["site_index", "sublattice", "re_c", "im_c"])
    M = spec.num_emitters
    for p, c in enumerate(state[M:]):
        if spec.lattice.kind == SSH:
            site, sub = p // 2, "AB"[p % 2]
        else:
            site, sub = p, "-"
        w.writerow([site, sub, fmt(float(c.real)), fmt(float(c.imag))])
    return buf.getvalue()


def _record(states: np.ndarray, times: np.ndarray, M: int, snapshot_times, method: str) -> TrajectoryRecord:
    pops = np.abs(states) ** 2  # (T, D)
    snaps = {}
    for ts in snapshot_times or ():
        k = int(np.argmin(np.abs(times - ts)))
        snaps[float(times[k])] = states[k].copy()
    return TrajectoryRecord(
        times=times,
        emitter_populations=pops[:, :M].T.copy(),
        photon_weight=pops[:, M:].sum(axis=1),
        snapshots=snaps,
        method=method,
    )


def _check_times(times) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or len(t) == 0:
        raise ValueError("times must be a non-empty 1-D array")
    if np.any(t < 0) or np.any(np.diff(t) < 0):
        raise ValueError("times must be sorted and nonnegative")
    return t


def _propagate_spectral(w, V, psi0, times):
    c = np.linalg.solve(V, psi0)
    out = np.empty((len(times), len(psi0)), dtype=complex)
    active = np.abs(c) > 0
    for k, t in enumerate(times):
        expo = -1j * w * t
        # shift by the largest growth exponent so nothing overflows; normalization removes it
        shift = np.max(expo.real[active]) if active.any() else 0.0
        psi = V @ (c * np.exp(expo - shift))
        out[k] = psi / np.linalg.norm(psi)
    return out


def _propagate_expm(H, psi0, times):
    out = np.empty((len(times), len(psi0)), dtype=complex)
    psi = psi0 / np.linalg.norm(psi0)
    t_prev = 0.0
    gmax = max(float(np.max(np.abs(np.imag(scipy.linalg.eigvals(H))))), 1e-12)
    cache = {}
    for k, t in enumerate(times):
        dt = t - t_prev
        if dt > 0:
            nsub = max(1, math.ceil(gmax * dt / MAX_GROWTH_PER_STEP))
            h = dt / nsub
            key = round(h, 14)
            if key not in cache:
                cache[key] = scipy.linalg.expm(-1j * H * h)
            U = cache[key]
            for _ in range(nsub):
                psi = U @ psi
                nrm = np.linalg.norm(psi)
                if not np.isfinite(nrm) or nrm == 0:
                    raise DynamicsError(f"non-finite state at t={t}")
                psi = psi / nrm
        out[k] = psi
        t_prev = t
    return out


def evolve_pure(
    H: HamiltonianMatrix,
    psi0: InitialState | np.ndarray,
    times,
    method: str = "auto",
    snapshot_times: Sequence[float] = (),
) -> TrajectoryRecord:
    """Normalized evolution exp(-iHt)|psi0> / ||exp(-iHt)|psi0>||.

    ``method`` is ``"spectral"``, ``"expm"`` or ``"auto"``; auto uses the
    eigenbasis unless its condition number exceeds 1e8 (near an EP).
    """
    t = _check_times(times)
    v0 = psi0.vector if isinstance(psi0, InitialState) else np.asarray(psi0, dtype=complex)
    v0 = v0 / np.linalg.norm(v0)
    A = np.array(H.matrix)
    used = method
    if method in ("auto", "spectral"):
        w, V = scipy.linalg.eig(A)
        cond = np.linalg.cond(V)
        if method == "auto":
            used = "spectral" if cond <= COND_LIMIT else "expm"
        elif cond > COND_LIMIT:
            raise DynamicsError(f"eigenbasis condition number {cond:.2e} exceeds {COND_LIMIT:g}")
    if used == "spectral":
        states = _propagate_spectral(w, V, v0, t)
    elif used == "expm":
        states = _propagate_expm(A, v0, t)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(states)):
        raise DynamicsError("non-finite amplitudes in trajectory")
    return _record(states, t, H.basis.num_emitters, snapshot_times, used)


def _jump_vectors(spec: SystemSpec) -> list[np.ndarray]:
    """Jump operators as sector->vacuum row vectors (length D)."""
    M = spec.num_emitters
    D = spec.dim
    kappa = spec.coupling
    rate = math.sqrt(2.0 * kappa)
    coupled = set()
    ops = []
    for m, em in enumerate(spec.emitters):
        n = photon_site_index(spec.lattice, em)
        coupled.add(n)
        v = np.zeros(D)
        v[m] = rate
        v[M + n] = rate
        ops.append(v)
    for n in range(spec.lattice.photon_dim):
        if n not in coupled:
            v = np.zeros(D)
            v[M + n] = rate
            ops.append(v)
    return ops


def evolve_nojump_oracle(
    spec: SystemSpec,
    psi0: InitialState | np.ndarray,
    times,
    rtol: float = 1e-12,
    atol: float = 1e-16,
) -> TrajectoryRecord:
    """Lindblad evolution on vacuum + single-excitation space, post-selected.

    Builds the coherent part (hopping + detunings, no coupling) and the jump
    operators sqrt(2k)(a_n + sigma_m), sqrt(2k) a_n independently of the
    effective Hamiltonian, integrates the master equation, and reports the
    single-excitation block normalized by its trace. Jumps only feed the
    vacuum, so this block is the no-jump (conditional) evolution.
    """
    D = spec.dim
    if D > ORACLE_MAX_DIM:
        raise ValueError(f"oracle limited to D <= {ORACLE_MAX_DIM}, got {D}")
    t = _check_times(times)
    v0 = psi0.vector if isinstance(psi0, InitialState) else np.asarray(psi0, dtype=complex)
    v0 = v0 / np.linalg.norm(v0)

    coherent = np.array(build_hamiltonian(spec.with_coupling(0.0)).matrix)
    Hf = np.zeros((D + 1, D + 1), dtype=complex)
    Hf[1:, 1:] = coherent
    Ls = []
    for row in _jump_vectors(spec):
        L = np.zeros((D + 1, D + 1), dtype=complex)
        L[0, 1:] = row
        Ls.append(L)
    LdL = sum(L.conj().T @ L for L in Ls) if Ls else np.zeros_like(Hf)
    Heff_nj = Hf - 0.5j * LdL

    def rhs(_t, y):
        rho = y.reshape(D + 1, D + 1)
        out = -1j * (Heff_nj @ rho - rho @ Heff_nj.conj().T)
        for L in Ls:
            out += L @ rho @ L.conj().T
        return out.ravel()

    rho0 = np.zeros((D + 1, D + 1), dtype=complex)
    rho0[1:, 1:] = np.outer(v0, v0.conj())
    # the equation is linear: renormalize after each output interval so the
    # post-selected block stays O(1) however strongly it decays
    M = spec.num_emitters
    pops = np.empty((len(t), D))
    traces = np.empty(len(t))
    y = rho0.ravel()
    log_trace = 0.0
    t_prev = 0.0
    for k, tk in enumerate(t):
        if tk > t_prev:
            sol = solve_ivp(rhs, (t_prev, float(tk)), y, method="DOP853", rtol=rtol, atol=atol)
            if not sol.success:
                raise DynamicsError(f"oracle integration failed: {sol.message}")
            y = sol.y[:, -1]
            t_prev = float(tk)
        rho = y.reshape(D + 1, D + 1)
        diag = np.real(np.diag(rho))[1:]
        tr = diag.sum()
        if not tr > 0:
            raise DynamicsError(f"single-excitation sector emptied at t={tk}")
        pops[k] = diag / tr
        log_trace += math.log(tr)
        traces[k] = math.exp(log_trace)
        # drop the vacuum part: it never feeds back into the excited block
        block = np.zeros_like(rho)
        block[1:, 1:] = rho[1:, 1:] / tr
        y = block.ravel()
    rec = TrajectoryRecord(
        times=t,
        emitter_populations=pops[:, :M].T.copy(),
        photon_weight=pops[:, M:].sum(axis=1),
        method="lindblad-nojump",
        sector_trace=traces,
    )
    return rec


def long_time_dominant_state(
    H: HamiltonianMatrix, spectrum: Spectrum | None = None
) -> tuple[list[np.ndarray], list[complex]]:
    """Eigenstate(s) with the largest Im E (ties within 1e-6 returned together)."""
    S = spectrum if spectrum is not None else eigendecompose(H, left=False)
    if S.phase != BROKEN:
        raise DynamicsError("no dominant growing mode: spectrum is entirely real")
    im = S.eigenvalues.imag
    top = im.max()
    idx = [i for i in np.argsort(-im) if top - im[i] <= EPS_DEGENERATE]
    idx.sort(key=lambda i: S.eigenvalues[i].real)
    return [S.right_vectors[:, i] for i in idx], [complex(S.eigenvalues[i]) for i in idx]


def dominant_gap(spectrum: Spectrum) -> float:
    """Gap between the largest Im E (cluster) and the next distinct Im E."""
    im = np.sort(spectrum.eigenvalues.imag)[::-1]
    top = im[0]
    rest = im[top - im > EPS_DEGENERATE]
    return float(top - rest[0]) if len(rest) else math.inf


def dominant_subspace_fidelity(state: np.ndarray, vectors: Sequence[np.ndarray]) -> float:
    """Squared norm of the projection of a unit state onto span(vectors)."""
    Q, _ = np.linalg.qr(np.column_stack(vectors))
    s = state / np.linalg.norm(state)
    return float(np.linalg.norm(Q.conj().T @ s) ** 2)


COHERENT_TRANSFER = "coherent_transfer"
SINGLE_DOMINANT = "single_dominant_state"
NO_DOMINANCE = "no_dominance"


@dataclass(frozen=True)
class TransferReport:
    kind: str
    t_transient: float
    frequency: float = math.nan
    expected_frequency: float = math.nan
    amplitude: float = math.nan
    offset: float = math.nan
    phase: float = math.nan
    fit_rms: float = math.nan
    strict_law_rms: float = math.nan
    sum_mean: float = math.nan
    sum_max_dev: float = math.nan
    final_populations: tuple = ()

    def as_rows(self) -> list[dict]:
        return [{"quantity": k, "value": v} for k, v in self.__dict__.items() if k != "final_populations"] + [
            {"quantity": f"final_pop_e_{m}", "value": p} for m, p in enumerate(self.final_populations)
        ]


def _cos2(t, a, b, w, phi):
    return a + b * np.cos(2.0 * w * t + phi)


def two_qe_transfer_metrics(
    record: TrajectoryRecord,
    E_s: complex,
    im_gap: float,
    flat_tol: float = 1e-3,
) -> TransferReport:
    """Late-time two-emitter diagnostics.

    After ``t_transient = 10 / im_gap`` the first emitter's population is fitted
    to ``a + b cos(2 w t + phi)`` (the half-population cos^2 law with free
    phase and contrast). The strict law ``cos^2(Re E_s t) / 2`` is scored too.
    Flat late-time populations are reported as a single dominant state.
    """
    if record.num_emitters != 2:
        raise ValueError("two_qe_transfer_metrics needs a two-emitter record")
    E_s = complex(E_s)
    t_tr = TRANSIENT_FACTOR / im_gap if im_gap > 0 else math.inf
    if E_s.imag <= 0 or not math.isfinite(t_tr):
        return TransferReport(NO_DOMINANCE, t_tr)
    late = record.times >= t_tr
    if late.sum() < 10:
        raise ValueError(f"trajectory ends before the transient cutoff t={t_tr:.3g}")
    t = record.times[late]
    p1 = record.emitter_populations[0, late]
    p2 = record.emitter_populations[1, late]
    s = p1 + p2
    base = dict(
        t_transient=t_tr,
        sum_mean=float(s.mean()),
        sum_max_dev=float(np.max(np.abs(s - 0.5))),
        final_populations=(float(p1[-1]), float(p2[-1])),
        expected_frequency=abs(E_s.real),
    )
    if np.ptp(p1) < flat_tol and np.ptp(p2) < flat_tol:
        return TransferReport(SINGLE_DOMINANT, **base)

    w0 = abs(E_s.real) if abs(E_s.real) > 0 else math.pi / (t[-1] - t[0])
    best = None
    for phi0 in np.linspace(0, 2 * np.pi, 8, endpoint=False):
        try:
            with warnings.catch_warnings():
                # exact data gives a singular covariance; only the optimum is used
                warnings.simplefilter("ignore", OptimizeWarning)
                p, _ = curve_fit(_cos2, t, p1, p0=[p1.mean(), 0.5 * np.ptp(p1), w0, phi0], maxfev=20000)
        except RuntimeError:
            continue
        rms = float(np.sqrt(np.mean((_cos2(t, *p) - p1) ** 2)))
        if best is None or rms < best[1]:
            best = (p, rms)
    if best is None:
        raise DynamicsError("cos^2 fit did not converge")
    (a, b, w, phi), rms = best
    if b < 0:
        b, phi = -b, phi + np.pi
    strict = 0.5 * np.cos(abs(E_s.real) * t) ** 2
    return TransferReport(
        COHERENT_TRANSFER,
        frequency=abs(float(w)),
        amplitude=float(b),
        offset=float(a),
        phase=float(np.mod(phi, 2 * np.pi)),
        fit_rms=rms,
        strict_law_rms=float(np.sqrt(np.mean((strict - p1) ** 2))),
        **base,
    )


def default_times(t_max: float = 200.0, num: int = 2001) -> np.ndarray:
    return np.linspace(0.0, t_max, num)
