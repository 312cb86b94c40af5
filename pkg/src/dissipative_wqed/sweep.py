"""Parameter grids over detuning, coupling, dimerization and emitter separation.

Every grid point is independent: build the Hamiltonian, diagonalize, classify
and keep the requested observables. Points are evaluated in row-major order
(last axis fastest) and results are reassembled in that order whatever the
worker count, so the CSV output depends only on the plan.
"""

from __future__ import annotations

import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from typing import Sequence

import numpy as np
import scipy

from . import __version__
from .model import PERIODIC, SSH, UNIFORM, SpecError, SystemSpec, build_hamiltonian
from .spectral import (
    BROKEN,
    EPS_BAND,
    EPS_REAL_REL,
    RESIDUAL_TOL,
    UNBROKEN,
    EigensolverError,
    bound_state_table,
    eigendecompose,
    extract_bound_states,
    phase_of,
    phase_rigidity,
    rows_to_csv,
    sort_order,
)

DETUNING = "detuning"
COUPLING = "coupling"
DIMERIZATION = "delta"
SEPARATION = "separation"
AXIS_NAMES = (DETUNING, COUPLING, DIMERIZATION, SEPARATION)

PHASE = "phase"
EIGENVALUES = "eigenvalues"
BOUND_STATES = "bound_states"
EP_MARKERS = "ep_markers"
OUTPUT_NAMES = (PHASE, EIGENVALUES, BOUND_STATES, EP_MARKERS)

MAX_GRID_POINTS = 10**6

STATUS_OK = "ok"


class PlanError(ValueError):
    """Invalid sweep plan; the only error that aborts a sweep."""


@dataclass(frozen=True)
class Axis:
    name: str
    min: float
    max: float
    count: int

    def values(self) -> np.ndarray:
        v = np.linspace(self.min, self.max, self.count)
        if self.name == SEPARATION:
            v = np.rint(v)
        return v


@dataclass(frozen=True)
class SweepPlan:
    """Grid of 1 or 2 axes applied to a template system.

    ``resonant_twist`` sets, for every uniform periodic point whose detuning
    lies inside the band, the boundary twist that puts one ring mode exactly on
    resonance with the emitter. This removes the finite-size level spacing that
    otherwise keeps small couplings in the unbroken phase, mimicking the
    continuum of an infinite waveguide.
    """

    template: SystemSpec
    axes: tuple[Axis, ...]
    outputs: tuple[str, ...] = (PHASE,)
    resonant_twist: bool = False

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        self.validate()

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.count for a in self.axes)

    @property
    def num_points(self) -> int:
        return int(np.prod(self.shape))

    def validate(self) -> None:
        if not 1 <= len(self.axes) <= 2:
            raise PlanError(f"a sweep needs 1 or 2 axes, got {len(self.axes)}")
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise PlanError(f"duplicate axis in {names}")
        for a in self.axes:
            if a.name not in AXIS_NAMES:
                raise PlanError(f"unknown axis {a.name!r}; choose from {AXIS_NAMES}")
            if int(a.count) != a.count or a.count < 2:
                raise PlanError(f"axis {a.name}: count must be an integer >= 2, got {a.count}")
            if not a.max > a.min:
                raise PlanError(f"axis {a.name}: max ({a.max}) must exceed min ({a.min})")
            if a.name == SEPARATION:
                step = (a.max - a.min) / (a.count - 1)
                if a.min != int(a.min) or step != int(step):
                    raise PlanError("separation axis must step through integers")
        if self.num_points > MAX_GRID_POINTS:
            raise PlanError(f"grid of {self.num_points} points exceeds {MAX_GRID_POINTS}")
        if not self.outputs:
            raise PlanError("no outputs requested")
        for o in self.outputs:
            if o not in OUTPUT_NAMES:
                raise PlanError(f"unknown output {o!r}; choose from {OUTPUT_NAMES}")
        if EP_MARKERS in self.outputs and COUPLING not in names:
            raise PlanError("ep_markers need a coupling axis")
        if self.resonant_twist and (
            self.template.lattice.kind != UNIFORM or self.template.lattice.boundary != PERIODIC
        ):
            raise PlanError("resonant_twist applies to periodic uniform chains only")
        # every axis value must produce a valid system on its own
        for a in self.axes:
            for v in a.values():
                try:
                    apply_axis(self.template, a.name, float(v))
                except SpecError as exc:
                    raise PlanError(f"axis {a.name} = {v:g}: {exc}") from None

    def points(self) -> list[tuple[float, ...]]:
        return [tuple(float(x) for x in p) for p in product(*(a.values() for a in self.axes))]

    def spec_at(self, coords: Sequence[float]) -> SystemSpec:
        spec = self.template
        for a, v in zip(self.axes, coords):
            spec = apply_axis(spec, a.name, v)
        if self.resonant_twist:
            spec = with_resonant_twist(spec)
        return spec

    def to_dict(self) -> dict:
        return {
            "template": asdict(self.template),
            "axes": [asdict(a) for a in self.axes],
            "outputs": list(self.outputs),
            "resonant_twist": self.resonant_twist,
        }


def apply_axis(spec: SystemSpec, name: str, value: float) -> SystemSpec:
    if name == DETUNING:
        return spec.with_detuning(value)
    if name == COUPLING:
        if value < 0:
            raise SpecError(f"coupling must be >= 0, got {value}")
        return spec.with_coupling(value)
    if name == DIMERIZATION:
        if spec.lattice.kind != SSH:
            raise SpecError("the dimerization axis needs an SSH lattice")
        return replace(spec, lattice=replace(spec.lattice, delta=value))
    if name == SEPARATION:
        if spec.num_emitters != 2:
            raise SpecError("the separation axis needs exactly two emitters")
        first = spec.emitters[0]
        site = first.site + int(round(value))
        if spec.lattice.periodic:
            site %= spec.lattice.num_sites
        second = replace(spec.emitters[1], site=site)
        return replace(spec, emitters=(first, second))
    raise SpecError(f"unknown axis {name!r}")


def resonant_twist(detuning: float, num_sites: int, J: float = 1.0) -> float:
    """Twist theta in [0, 2pi) such that -2J cos((2 pi m + theta)/N) = detuning for some m."""
    k = math.acos(-detuning / (2.0 * J))
    return float(math.fmod(num_sites * k, 2.0 * math.pi))


def with_resonant_twist(spec: SystemSpec) -> SystemSpec:
    lat = spec.lattice
    detuning = spec.emitters[0].detuning
    if spec.coupling == 0 or not abs(detuning) < 2.0 * lat.J:
        return spec
    theta = resonant_twist(detuning, lat.num_sites, lat.J)
    return replace(spec, lattice=replace(lat, twist=theta))


@dataclass
class PointResult:
    index: int
    coords: tuple[float, ...]
    status: str = STATUS_OK
    phase: str = ""
    max_im: float = math.nan
    eigenvalues: np.ndarray | None = None
    bound_rows: list[dict] = field(default_factory=list)


def _evaluate(task) -> PointResult:
    index, coords, spec, outputs, tol = task
    res = PointResult(index, coords)
    try:
        H = build_hamiltonian(spec)
        J = spec.lattice.J
        if BOUND_STATES in outputs:
            S = eigendecompose(H, left=True, eps_real_rel=tol.eps_real_rel)
            w = S.eigenvalues
            states = extract_bound_states(S, H, tol.eps_band)
            rig = [phase_rigidity(S, s.index) for s in states]
            res.bound_rows = bound_state_table(states, spec.lattice, rig)
        else:
            w = np.linalg.eigvals(H.matrix)
            if not np.all(np.isfinite(w)):
                raise EigensolverError("non-finite eigenvalues")
            w = w[sort_order(w)]
        # kappa = 0 is the Hermitian control: unbroken by definition
        res.phase = UNBROKEN if spec.coupling == 0 else phase_of(w, J, tol.eps_real_rel)
        res.max_im = float(np.max(np.abs(w.imag)))
        if EIGENVALUES in outputs:
            res.eigenvalues = w
    except (EigensolverError, np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
        res.status = f"failed: {type(exc).__name__}: {exc}"
    return res


@dataclass
class RunManifest:
    plan: dict
    tolerances: dict
    lattice_size: int
    code_version: str
    wall_clock_seconds: float
    point_status: list[dict]
    notes: list[str] = field(default_factory=list)
    config: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def code_version() -> str:
    return (
        f"dissipative_wqed {__version__}; numpy {np.__version__}; scipy {scipy.__version__}; "
        f"python {platform.python_version()}"
    )


@dataclass(frozen=True)
class Tolerances:
    """Classification thresholds: relative reality tolerance and band margin (units of J)."""

    eps_real_rel: float = EPS_REAL_REL
    eps_band: float = EPS_BAND

    def as_dict(self) -> dict:
        return {**asdict(self), "eigen_residual": RESIDUAL_TOL}


@dataclass
class SweepResult:
    plan: SweepPlan
    points: list[PointResult]
    manifest: RunManifest

    @property
    def failures(self) -> list[PointResult]:
        return [p for p in self.points if p.status != STATUS_OK]

    def phase_grid(self) -> np.ndarray:
        """Array of shape plan.shape: 1 broken, 0 unbroken, -1 failed."""
        code = {BROKEN: 1, UNBROKEN: 0}
        vals = [code.get(p.phase, -1) if p.status == STATUS_OK else -1 for p in self.points]
        return np.array(vals, dtype=int).reshape(self.plan.shape)

    def _coord_names(self) -> list[str]:
        return [a.name for a in self.plan.axes]

    def phase_rows(self) -> list[dict]:
        names = self._coord_names()
        rows = []
        for p in self.points:
            row = dict(zip(names, p.coords))
            row.update(phase=p.phase or "NaN", max_abs_im_E=p.max_im, status=p.status)
            rows.append(row)
        return rows

    def eigenvalue_rows(self) -> list[dict]:
        names = self._coord_names()
        rows = []
        for p in self.points:
            base = dict(zip(names, p.coords))
            if p.eigenvalues is None:
                rows.append({**base, "index": -1, "re_E": math.nan, "im_E": math.nan, "status": p.status})
                continue
            for i, E in enumerate(p.eigenvalues):
                rows.append({**base, "index": i, "re_E": E.real, "im_E": E.imag, "status": p.status})
        return rows

    def bound_state_rows(self) -> list[dict]:
        names = self._coord_names()
        rows = []
        for p in self.points:
            base = dict(zip(names, p.coords))
            if p.status != STATUS_OK:
                rows.append({**base, "status": p.status})
            for k, r in enumerate(p.bound_rows):
                rows.append({**base, "state": k, **r, "status": p.status})
        return rows

    def ep_marker_rows(self) -> list[dict]:
        """Phase changes between neighbouring coupling values, per fixed other coordinates."""
        names = self._coord_names()
        ci = names.index(COUPLING)
        grid = self.phase_grid()
        kappas = self.plan.axes[ci].values()
        grid = np.moveaxis(grid, ci, -1)
        other = [a for i, a in enumerate(self.plan.axes) if i != ci]
        other_vals = [a.values() for a in other]
        rows = []
        for idx in np.ndindex(grid.shape[:-1]):
            line = grid[idx]
            for j in range(len(line) - 1):
                a, b = line[j], line[j + 1]
                if a < 0 or b < 0 or a == b:
                    continue
                row = {o.name: float(v[i]) for o, v, i in zip(other, other_vals, idx)}
                row.update(
                    kappa_lo=float(kappas[j]),
                    kappa_hi=float(kappas[j + 1]),
                    kappa_mid=0.5 * float(kappas[j] + kappas[j + 1]),
                    transition="unbroken->broken" if b == 1 else "broken->unbroken",
                )
                rows.append(row)
        return rows

    def tables(self) -> dict[str, str]:
        """CSV text per requested output, keyed by file name."""
        names = self._coord_names()
        out = {}
        if PHASE in self.plan.outputs:
            out["phase.csv"] = rows_to_csv(self.phase_rows(), names + ["phase", "max_abs_im_E", "status"])
        if EIGENVALUES in self.plan.outputs:
            out["eigenvalues.csv"] = rows_to_csv(
                self.eigenvalue_rows(), names + ["index", "re_E", "im_E", "status"]
            )
        if BOUND_STATES in self.plan.outputs:
            cols = names + [
                "state", "re_E", "im_E", "emitter_population", "lambda", "r_squared",
                "phase_rigidity", "w_A", "w_B", "w_left", "w_right", "status",
            ]
            out["bound_states.csv"] = rows_to_csv(self.bound_state_rows(), cols)
        if EP_MARKERS in self.plan.outputs:
            others = [n for n in names if n != COUPLING]
            cols = others + ["kappa_lo", "kappa_hi", "kappa_mid", "transition"]
            out["ep_markers.csv"] = rows_to_csv(self.ep_marker_rows(), cols)
        return out


def run_sweep(
    plan: SweepPlan,
    jobs: int = 1,
    tolerances: Tolerances = Tolerances(),
    notes: Sequence[str] = (),
) -> SweepResult:
    """Evaluate every grid point; per-point failures are recorded, never raised."""
    plan.validate()
    t0 = time.perf_counter()
    eval_outputs = set(plan.outputs)
    if EP_MARKERS in eval_outputs:
        eval_outputs.add(PHASE)
    tasks = [
        (i, coords, plan.spec_at(coords), frozenset(eval_outputs), tolerances)
        for i, coords in enumerate(plan.points())
    ]
    if jobs <= 1 or len(tasks) < 2:
        results = [_evaluate(t) for t in tasks]
    else:
        chunk = max(1, len(tasks) // (8 * jobs))
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_evaluate, tasks, chunksize=chunk))
    results.sort(key=lambda r: r.index)
    manifest = RunManifest(
        plan=plan.to_dict(),
        tolerances=tolerances.as_dict(),
        lattice_size=plan.template.lattice.num_sites,
        code_version=code_version(),
        wall_clock_seconds=round(time.perf_counter() - t0, 3),
        point_status=[
            {"index": r.index, "coords": list(r.coords), "status": r.status} for r in results
        ],
        notes=list(notes),
    )
    return SweepResult(plan, results, manifest)


def boundary_from_grid(result: SweepResult) -> list[tuple[float, float]]:
    """(detuning, first broken coupling) per detuning column of a detuning x coupling grid."""
    names = [a.name for a in result.plan.axes]
    if sorted(names) != sorted([DETUNING, COUPLING]):
        raise ValueError("boundary extraction needs a detuning x coupling grid")
    grid = result.phase_grid()
    if names[0] != DETUNING:
        grid = grid.T
    deltas = result.plan.axes[names.index(DETUNING)].values()
    kappas = result.plan.axes[names.index(COUPLING)].values()
    out = []
    for i, d in enumerate(deltas):
        broken = np.nonzero(grid[i] == 1)[0]
        out.append((float(d), float(kappas[broken[0]]) if len(broken) else math.nan))
    return out

