"""Command-line interface: ``dwqed <command> [options]``.

Energies are in units of the hopping J, times in units of 1/J. Every command
writes its CSV datasets, one ``manifest.json`` and one ``summary.txt`` under
``--out``. Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 validation failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import scipy.linalg

from . import config as cfgmod
from .analytic import (
    PoleProblem,
    bs_energy_zero_detuning,
    ep_coupling,
    ep_energy,
    pole_roots,
    ssh_ep3_coupling,
    vds_state,
)
from .config import AUTO, ConfigError, RunConfig
from .dynamics import (
    COHERENT_TRANSFER,
    DynamicsError,
    InitialState,
    default_times,
    dominant_gap,
    evolve_nojump_oracle,
    evolve_pure,
    long_time_dominant_state,
    snapshot_csv,
    two_qe_transfer_metrics,
)
from .model import UNIFORM, SpecError, SystemSpec, build_hamiltonian
from .spectral import (
    BROKEN,
    EigensolverError,
    EPSearchError,
    bound_state_from_vector,
    bound_state_table,
    eigendecompose,
    extract_bound_states,
    find_ep,
    phase_rigidity,
    rows_to_csv,
    spectrum_table,
    splitting_exponent,
    state_fidelity,
    sublattice_weights,
)
from .sweep import (
    COUPLING,
    DETUNING,
    Axis,
    PlanError,
    SweepPlan,
    boundary_from_grid,
    code_version,
    run_sweep,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_VALIDATION = 3

MANIFEST = "manifest.json"
SUMMARY = "summary.txt"


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors (exit 1), not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _use_color(stream) -> bool:
    return "NO_COLOR" not in os.environ and hasattr(stream, "isatty") and stream.isatty()


def _default_jobs() -> int:
    return os.cpu_count() or 1


# ---------------------------------------------------------------- outputs


def write_outputs(out: Path, files: dict[str, str], manifest: dict, summary: str) -> None:
    """Write datasets, manifest and summary; files listed by a previous manifest are removed first."""
    out.mkdir(parents=True, exist_ok=True)
    old = out / MANIFEST
    if old.exists():
        try:
            stale = json.loads(old.read_text()).get("files", [])
        except (OSError, ValueError):
            stale = []
        for name in stale:
            p = out / name
            if p.is_file() and name not in files and "/" not in name:
                p.unlink()
    for name, text in sorted(files.items()):
        (out / name).write_text(text, encoding="utf-8")
    manifest = dict(manifest)
    manifest["files"] = sorted(files) + [SUMMARY]
    (out / MANIFEST).write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8"
    )
    (out / SUMMARY).write_text(summary.rstrip("\n") + "\n", encoding="utf-8")


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _base_manifest(command: str, cfg: RunConfig, spec: SystemSpec | None, t0: float) -> dict:
    return {
        "command": command,
        "config": cfg.echo(),
        "tolerances": cfg.tolerances().as_dict(),
        "lattice_size": None if spec is None else spec.lattice.num_sites,
        "dimension": None if spec is None else spec.dim,
        "code_version": code_version(),
        "wall_clock_seconds": round(time.perf_counter() - t0, 3),
    }


def _fmt_E(E: complex) -> str:
    return f"{E.real:+.10f}{E.imag:+.10f}i"


def _kv_csv(rows: list[tuple[str, object]]) -> str:
    return rows_to_csv([{"quantity": k, "value": v} for k, v in rows], ["quantity", "value"])


# ---------------------------------------------------------------- config layering


def _layers(args, command_defaults: dict) -> RunConfig:
    layers = [command_defaults]
    if getattr(args, "preset", None):
        layers.append(cfgmod.preset(args.preset))
    if getattr(args, "config", None):
        layers.append(cfgmod.load_file(args.config))
    layers.append(_flag_layer(args))
    return RunConfig.build(*layers)


def _set(layer: dict, sec: str, key: str, value) -> None:
    if value is not None:
        layer.setdefault(sec, {})[key] = value


def _flag_layer(args) -> dict:
    layer: dict = {}
    g = lambda name: getattr(args, name, None)  # noqa: E731
    _set(layer, "system", "num_sites", g("num_sites"))
    _set(layer, "system", "J", g("J"))
    _set(layer, "system", "boundary", g("boundary"))
    _set(layer, "emitters", "coupling", g("kappa"))
    _set(layer, "emitters", "sites", g("sites"))
    if g("command") == "ssh":
        _set(layer, "system", "dimerization", g("delta"))
        _set(layer, "system", "num_sites", g("num_cells"))
        if g("cell") is not None:
            _set(layer, "emitters", "sites", [g("cell")])
        _set(layer, "ssh", "kappa_max", g("kappa_max"))
        _set(layer, "ssh", "kappa_count", g("kappa_count"))
    else:
        _set(layer, "emitters", "detuning", g("delta"))
    _set(layer, "dynamics", "t_max", g("t_max"))
    _set(layer, "dynamics", "num_times", g("num_times"))
    _set(layer, "dynamics", "method", g("method"))
    _set(layer, "dynamics", "couplings", g("couplings"))
    _set(layer, "dynamics", "separations", g("separations"))
    if g("oracle"):
        _set(layer, "dynamics", "oracle", True)
    if g("detuning_range") is not None or g("kappa_range") is not None:
        axes = []
        for name, rng in ((DETUNING, g("detuning_range")), (COUPLING, g("kappa_range"))):
            if rng is not None:
                axes.append({"name": name, "min": rng[0], "max": rng[1], "count": int(rng[2])})
        _set(layer, "sweep", "axes", axes)
    if g("no_resonant_twist"):
        _set(layer, "sweep", "resonant_twist", False)
    return layer


# ---------------------------------------------------------------- spectrum


def _analytic_notes(spec: SystemSpec) -> list[str]:
    lines = []
    if spec.num_emitters != 1 or spec.lattice.kind != UNIFORM:
        return lines
    J = spec.lattice.J
    D, k = spec.emitters[0].detuning, spec.coupling
    try:
        roots = pole_roots(PoleProblem(D, k, spec.lattice))
        lines.append("infinite-chain poles: " + (", ".join(_fmt_E(r) for r in roots) or "none"))
    except (ValueError, NotImplementedError):
        pass
    if abs(D) > 2 * J:
        lines.append(f"gap exceptional point: kappa_EP = {ep_coupling(D, J):.8f} J at E = "
                     f"{math.copysign(ep_energy(abs(D), J), D):.8f} J")
    if D == 0 and k > 0:
        Ep, _ = bs_energy_zero_detuning(k, J)
        lines.append(f"zero-detuning closed form: E = +-{Ep.imag:.8f}i J")
    return lines


def cmd_spectrum(args) -> int:
    t0 = time.perf_counter()
    cfg = _layers(args, {})
    spec = cfg.system_spec(400)
    tol = cfg.tolerances()
    H = build_hamiltonian(spec)
    S = eigendecompose(H, left=True, eps_real_rel=tol.eps_real_rel)
    states = extract_bound_states(S, H, tol.eps_band)
    rig = [phase_rigidity(S, s.index) for s in states]
    files = {
        "spectrum.csv": rows_to_csv(spectrum_table(S, H, tol.eps_band)),
        "bound_states.csv": rows_to_csv(bound_state_table(states, spec.lattice, rig)),
    }
    pairs = sorted({complex(S.eigenvalues[i]) for i in range(len(S)) if S.eigenvalues[i].imag > S.eps_real},
                   key=lambda z: (z.real, z.imag))
    summary = [
        f"system: {spec.lattice.kind} chain, {spec.lattice.num_sites} "
        f"{'cells' if spec.lattice.kind != UNIFORM else 'sites'} ({spec.lattice.boundary}), "
        f"{spec.num_emitters} emitter(s), Delta = {spec.emitters[0].detuning:g} J, kappa = {spec.coupling:g} J",
        f"phase: {S.phase} (eps_real = {S.eps_real:.3g} J)",
        f"complex-conjugate pairs: {len(pairs)}"
        + ("" if not pairs else " -> " + ", ".join(f"{round(z.real, 9) + 0.0:+.6f} +- {z.imag:.7f}i" for z in pairs)),
        f"bound states: {len(states)}",
    ]
    for s, r in zip(states, rig):
        summary.append(
            f"  E = {_fmt_E(s.energy)} J, emitter population {s.emitter_population:.6f}, "
            f"lambda = {s.localization_length:.4f} sites (R^2 {s.fit_quality:.6f}), rigidity {r:.3g}"
        )
    summary += _analytic_notes(spec)
    manifest = _base_manifest("spectrum", cfg, spec, t0)
    plan = cfg.sweep_plan(spec)
    if plan is not None:
        result = run_sweep(plan, jobs=args.jobs, tolerances=tol)
        for name, text in result.tables().items():
            files["sweep_" + name] = text
        manifest["sweep"] = _sweep_manifest(result)
        summary.append(_sweep_summary(result))
        markers = result.ep_marker_rows() if "ep_markers" in plan.outputs else []
        for m in markers:
            summary.append(f"  phase change {m['transition']} between kappa = {m['kappa_lo']:g} and {m['kappa_hi']:g} J")
    manifest["wall_clock_seconds"] = round(time.perf_counter() - t0, 3)
    write_outputs(Path(args.out), files, manifest, "\n".join(summary))
    _echo(args, summary)
    return EXIT_OK


def _sweep_manifest(result) -> dict:
    return asdict(result.manifest)


def _sweep_summary(result) -> str:
    axes = ", ".join(f"{a.name} in [{a.min:g}, {a.max:g}] x {a.count}" for a in result.plan.axes)
    return f"sweep: {axes}; {result.plan.num_points} points, {len(result.failures)} failed"


def _echo(args, lines) -> None:
    if not getattr(args, "quiet", False):
        print("\n".join(lines))
        print(f"outputs written to {args.out}")


# ---------------------------------------------------------------- phase diagram


PHASE_DIAGRAM_DEFAULTS = {
    "sweep": {
        "axes": [
            {"name": DETUNING, "min": -3.0, "max": 3.0, "count": 121},
            {"name": COUPLING, "min": 0.0, "max": 0.5, "count": 101},
        ],
        "outputs": ["phase", "ep_markers"],
        "resonant_twist": True,
    }
}


def cmd_phase_diagram(args) -> int:
    t0 = time.perf_counter()
    cfg = _layers(args, PHASE_DIAGRAM_DEFAULTS)
    spec = cfg.system_spec(200)
    plan = cfg.sweep_plan(spec)
    if plan is None:
        raise ConfigError("[sweep] axes must not be empty for a phase diagram")
    notes = [
        "axis ranges Delta/J in [-3, 3], kappa/J in [0, 0.5] are a display choice",
        "kappa = 0 is the Hermitian control column (unbroken by definition)",
    ]
    if plan.resonant_twist:
        notes.append("in-band points use the boundary twist that makes one ring mode resonant with the emitter")
    result = run_sweep(plan, jobs=args.jobs, tolerances=cfg.tolerances(), notes=notes)
    files = {name: text for name, text in result.tables().items()}
    J = spec.lattice.J
    summary = [_sweep_summary(result)] + notes
    names = [a.name for a in plan.axes]
    if sorted(names) == sorted([DETUNING, COUPLING]):
        deltas = plan.axes[names.index(DETUNING)].values()
        analytic = []
        for d in np.linspace(deltas.min(), deltas.max(), 601):
            k = ep_coupling(d, J) if abs(d) > 2 * J else 0.0
            analytic.append({"detuning": float(d), "kappa_ep": k})
        files["boundary_analytic.csv"] = rows_to_csv(analytic, ["detuning", "kappa_ep"])
        rows, worst = [], 0.0
        kappas = plan.axes[names.index(COUPLING)].values()
        dk = float(kappas[1] - kappas[0])
        for d, k in boundary_from_grid(result):
            ref = ep_coupling(d, J) if abs(d) > 2 * J else 0.0
            off = k - ref if math.isfinite(k) else math.nan
            if abs(d) > 2 * J and ref <= kappas.max() and math.isfinite(off):
                worst = max(worst, abs(off))
            rows.append({"detuning": d, "first_broken_kappa": k, "kappa_ep": ref, "offset": off})
        files["boundary_numeric.csv"] = rows_to_csv(
            rows, ["detuning", "first_broken_kappa", "kappa_ep", "offset"]
        )
        summary.append(f"gap-region boundary: worst |first broken kappa - kappa_EP| = {worst:.4f} J "
                       f"(grid step {dk:.4f} J)")
        strip = [r for r in rows if abs(r["detuning"]) < 2 * J]
        strip_ok = all(r["first_broken_kappa"] == kappas[1] for r in strip)
        summary.append(f"band strip |Delta| < 2J broken from the first kappa > 0: {'yes' if strip_ok else 'no'}")
    manifest = _base_manifest("phase-diagram", cfg, spec, t0)
    manifest["sweep"] = _sweep_manifest(result)
    write_outputs(Path(args.out), files, manifest, "\n".join(summary))
    _echo(args, summary)
    return EXIT_OK


# ---------------------------------------------------------------- dynamics


ORACLE_DEFAULTS = {
    "system": {"num_sites": 16},
    "emitters": {"coupling": 0.3},
    "dynamics": {"t_max": 50.0, "num_times": 501},
}
DYNAMICS_DEFAULTS = {"emitters": {"coupling": 0.3}}


def _initial(spec: SystemSpec, dyn: dict) -> InitialState:
    if dyn["initial"] == "emitter":
        return InitialState.emitter_excited(spec, 0)
    if dyn["initial"] == "amplitudes":
        amps = [complex(a) for a in dyn["amplitudes"]]
        if len(amps) != spec.num_emitters:
            raise ConfigError(
                f"[dynamics] amplitudes has {len(amps)} entries for {spec.num_emitters} emitter(s)"
            )
        v = np.zeros(spec.dim, dtype=complex)
        v[: len(amps)] = amps
        if not np.linalg.norm(v) > 0:
            raise ConfigError("[dynamics] amplitudes must not all vanish")
        return InitialState.custom(v)
    raise ConfigError(f'[dynamics] initial must be "emitter" or "amplitudes", got {dyn["initial"]!r}')


def _with_separation(spec: SystemSpec, n12: int) -> SystemSpec:
    if spec.num_emitters != 2:
        raise ConfigError("[dynamics] separations need exactly two emitters in [emitters] sites")
    first = spec.emitters[0]
    site = first.site + int(n12)
    if spec.lattice.periodic:
        site %= spec.lattice.num_sites
    try:
        return replace(spec, emitters=(first, replace(spec.emitters[1], site=site)))
    except SpecError as exc:
        raise ConfigError(f"separation {n12}: {exc}") from None


def cmd_dynamics(args) -> int:
    t0 = time.perf_counter()
    base = ORACLE_DEFAULTS if args.oracle else DYNAMICS_DEFAULTS
    cfg = _layers(args, base)
    dyn = cfg["dynamics"]
    spec0 = cfg.system_spec(16 if dyn["oracle"] else 400)
    times = default_times(float(dyn["t_max"]), int(dyn["num_times"]))
    tol = cfg.tolerances()
    if dyn["oracle"]:
        return _run_oracle(args, cfg, spec0, times, t0)

    runs = []
    couplings = dyn["couplings"] or [spec0.coupling]
    seps = dyn["separations"] or [None]
    for k in couplings:
        for n12 in seps:
            spec = spec0.with_coupling(float(k))
            if n12 is not None:
                spec = _with_separation(spec, int(n12))
            label = f"kappa_{float(k):.6g}" + ("" if n12 is None else f"_n12_{int(n12)}")
            runs.append((label, spec, n12))

    files, summary, metric_rows = {}, [], []
    for label, spec, n12 in runs:
        H = build_hamiltonian(spec)
        rec = evolve_pure(H, _initial(spec, dyn), times, method=dyn["method"],
                          snapshot_times=[float(x) for x in dyn["snapshot_times"]])
        files[f"trajectory_{label}.csv"] = rec.to_csv()
        for ts, state in sorted(rec.snapshots.items()):
            files[f"snapshot_{label}_t_{ts:g}.csv"] = snapshot_csv(state, spec)
        late = rec.times >= 0.5 * rec.times[-1]
        pops = ", ".join(f"{p:.6f}" for p in rec.emitter_populations[:, -1])
        summary.append(
            f"{label}: final emitter population(s) {pops}; late-half mean total "
            f"{rec.total_emitter_population[late].mean():.6f} ({rec.method})"
        )
        if spec.num_emitters == 2:
            S = eigendecompose(H, left=False, eps_real_rel=tol.eps_real_rel)
            if S.phase == BROKEN:
                _, Es = long_time_dominant_state(H, S)
                E_s = max(Es, key=lambda e: e.real)
                rep = two_qe_transfer_metrics(rec, E_s, dominant_gap(S), float(cfg["tolerances"]["flat_tol"]))
            else:
                rep = two_qe_transfer_metrics(rec, 0j, 0.0)
            for r in rep.as_rows():
                metric_rows.append({"run": label, **r})
            line = f"  transfer: {rep.kind}, late sum {rep.sum_mean:.6f}"
            if rep.kind == COHERENT_TRANSFER:
                line += f", frequency {rep.frequency:.6f} vs Re E_s {rep.expected_frequency:.6f}"
            summary.append(line)
    if metric_rows:
        files["transfer_metrics.csv"] = rows_to_csv(metric_rows, ["run", "quantity", "value"])
    manifest = _base_manifest("dynamics", cfg, spec0, t0)
    write_outputs(Path(args.out), files, manifest, "\n".join(summary))
    _echo(args, summary)
    return EXIT_OK


def _run_oracle(args, cfg: RunConfig, spec: SystemSpec, times, t0) -> int:
    dyn = cfg["dynamics"]
    psi0 = _initial(spec, dyn)
    a = evolve_pure(build_hamiltonian(spec), psi0, times, method=dyn["method"])
    b = evolve_nojump_oracle(spec, psi0, times)
    M = spec.num_emitters
    rows = []
    for k, t in enumerate(times):
        row = {"t": float(t)}
        for m in range(M):
            row[f"pop_e_{m}"] = float(a.emitter_populations[m, k])
            row[f"pop_e_{m}_oracle"] = float(b.emitter_populations[m, k])
        row["photon_weight"] = float(a.photon_weight[k])
        row["photon_weight_oracle"] = float(b.photon_weight[k])
        row["sector_trace"] = float(b.sector_trace[k])
        rows.append(row)
    dev = max(
        float(np.max(np.abs(a.emitter_populations - b.emitter_populations))),
        float(np.max(np.abs(a.photon_weight - b.photon_weight))),
    )
    ok = dev <= 1e-8
    summary = [
        f"no-jump oracle vs normalized effective-Hamiltonian evolution, D = {spec.dim}, "
        f"tJ in [0, {times[-1]:g}]",
        f"max population deviation {dev:.3e} ({'within' if ok else 'exceeds'} 1e-8)",
        f"unnormalized single-excitation trace at the end: {b.sector_trace[-1]:.6e}",
    ]
    files = {"oracle_comparison.csv": rows_to_csv(rows)}
    manifest = _base_manifest("dynamics --oracle", cfg, spec, t0)
    manifest["oracle_max_deviation"] = dev
    write_outputs(Path(args.out), files, manifest, "\n".join(summary))
    _echo(args, summary)
    return EXIT_OK if ok else EXIT_NUMERICAL


# ---------------------------------------------------------------- ssh


SSH_DEFAULTS = {
    "system": {"lattice": "ssh", "dimerization": 0.25},
    "emitters": {"detuning": 0.0, "coupling": 0.0, "sites": AUTO, "sublattice": "A"},
}


def cmd_ssh(args) -> int:
    t0 = time.perf_counter()
    cfg = _layers(args, SSH_DEFAULTS)
    if cfg["system"]["lattice"] != "ssh":
        raise ConfigError('the ssh command needs [system] lattice = "ssh"')
    spec = cfg.system_spec()
    if spec.num_emitters != 1 or spec.emitters[0].sublattice != "A":
        raise ConfigError("the ssh analysis covers one emitter on sublattice A")
    tol = cfg.tolerances()
    sh = cfg["ssh"]
    lat = spec.lattice
    delta, j0, cells = lat.delta, spec.emitters[0].site, lat.num_sites
    try:
        vds = vds_state(delta, j0, cells)
    except ValueError as exc:
        raise ConfigError(f"[system] num_sites too small: {exc}") from None
    k3 = ssh_ep3_coupling(delta, lat.J)
    kmax = 1.6 * k3 if sh["kappa_max"] == AUTO else float(sh["kappa_max"])
    plan = SweepPlan(spec, (Axis(COUPLING, 0.0, kmax, int(sh["kappa_count"])),), ("phase", "eigenvalues"))
    result = run_sweep(plan, jobs=args.jobs, tolerances=tol)
    files = {"spectrum_vs_kappa.csv": result.tables()["eigenvalues.csv"]}

    w0, w1 = (float(x) for x in sh["ep_window"])
    ep = find_ep(spec, (w0 * k3, w1 * k3), expected_order=3)
    H = build_hamiltonian(spec.with_coupling(ep.coupling))
    S = eigendecompose(H, left=False, eps_real_rel=tol.eps_real_rel)
    v_ref = vds.to_vector()
    fids = [state_fidelity(v_ref, S.right_vectors[:, i]) for i in ep.cluster]
    _, _, vh = scipy.linalg.svd(np.array(H.matrix) - ep.energy * np.eye(H.dim))
    v_ep = vh[-1].conj()
    state = bound_state_from_vector(v_ep, ep.energy, H)
    wa, wb, wl, wr = sublattice_weights(state, lat)
    right = wr / (wl + wr)
    expo, r2, _, _ = splitting_exponent(spec, ep.coupling, 3, ep.energy)
    files["ep3.csv"] = _kv_csv([
        ("kappa_ep3", ep.coupling),
        ("kappa_ep3_closed_form", k3),
        ("energy_re", ep.energy.real),
        ("energy_im", ep.energy.imag),
        ("order", ep.order),
        ("method", ep.method),
        ("cluster_spread", ep.residual),
        ("min_phase_rigidity", ep.rigidity),
        ("splitting_exponent", expo),
        ("splitting_fit_r_squared", r2),
    ])
    vds_rows = [(f"fidelity_eigvec_{k}", f) for k, f in enumerate(fids)] + [
        ("w_A", wa), ("w_B", wb), ("w_left", wl), ("w_right", wr), ("right_fraction", right),
    ]
    for kappa in (float(x) for x in sh["kappas_vds"]):
        A = np.array(build_hamiltonian(spec.with_coupling(kappa)).matrix)
        vds_rows.append((f"sigma_min_kappa_{kappa:g}", float(scipy.linalg.svdvals(A)[-1])))
    files["vds_report.csv"] = _kv_csv(vds_rows)
    prof = []
    ref_prof = v_ref[1:]
    g = v_ep[0] / abs(v_ep[0]) if abs(v_ep[0]) > 0 else 1.0
    for p, c in enumerate(v_ep[1:] / g):
        prof.append({
            "cell": p // 2, "sublattice": "AB"[p % 2], "re_c": c.real, "im_c": c.imag,
            "abs2": abs(c) ** 2, "abs2_closed_form": abs(ref_prof[p]) ** 2,
        })
    files["profile_at_ep3.csv"] = rows_to_csv(prof)
    summary = [
        f"SSH chain: delta = {delta:g}, {cells} cells (open), emitter on A of cell {j0}",
        _sweep_summary(result),
        f"EP3: kappa* = {ep.coupling:.6f} J (2J sqrt(delta) = {k3:.6f} J), order {ep.order}, "
        f"E = {_fmt_E(ep.energy)} J ({ep.method})",
        f"vds fidelity of the coalescing eigenvectors: min {min(fids):.10f}",
        f"profile at the EP: w_A = {wa:.2e}, w_B = {wb:.6f}, right-side fraction {right:.12f}",
        f"splitting exponent {expo:.4f} (R^2 {r2:.6f})",
        "smallest singular value of H (zero mode): "
        + ", ".join(f"kappa = {k[len('sigma_min_kappa_'):]} J -> {v:.1e}" for k, v in vds_rows
                    if k.startswith("sigma_min")),
    ]
    manifest = _base_manifest("ssh", cfg, spec, t0)
    manifest["sweep"] = _sweep_manifest(result)
    write_outputs(Path(args.out), files, manifest, "\n".join(summary))
    _echo(args, summary)
    return EXIT_OK


# ---------------------------------------------------------------- validate


def cmd_validate(args) -> int:
    from .validation import run_all

    t0 = time.perf_counter()
    color = _use_color(sys.stdout)
    numbers = set(args.only) if args.only else None
    results = run_all(jobs=args.jobs, numbers=numbers,
                      on_result=lambda r: print(r.line(color), flush=True))
    n_fail = sum(not r.passed for r in results)
    total = time.perf_counter() - t0
    print(f"{len(results) - n_fail}/{len(results)} criteria passed in {total:.0f} s")
    if args.out:
        rows = [{"criterion": r.number, "name": r.name, "passed": r.passed, "detail": r.detail} for r in results]
        manifest = {
            "command": "validate",
            "code_version": code_version(),
            "wall_clock_seconds": round(total, 3),
            "seconds_per_criterion": {str(r.number): round(r.seconds, 3) for r in results},
        }
        write_outputs(Path(args.out), {"validation.csv": rows_to_csv(rows)}, manifest,
                      "\n".join(r.line() for r in results))
    return EXIT_OK if n_fail == 0 else EXIT_VALIDATION


# ---------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser, out_default: str) -> None:
    p.add_argument("--config", metavar="FILE", help="TOML run configuration (see the config module docs)")
    p.add_argument("--preset", choices=sorted(cfgmod.PRESETS), help="named parameter set (applied before --config)")
    p.add_argument("--out", default=out_default, metavar="DIR", help=f"output directory (default: {out_default})")
    p.add_argument("--jobs", type=int, default=_default_jobs(), metavar="N",
                   help="worker processes for sweeps (default: available cores)")
    p.add_argument("--quiet", action="store_true", help="do not echo the summary")


def _system_flags(p, num_sites_default: str, delta_help: str | None = None) -> None:
    p.add_argument("--num-sites", type=int, metavar="N", help=f"lattice sites (default: {num_sites_default})")
    p.add_argument("--J", type=float, help="hopping; sets the energy unit (default: 1)")
    p.add_argument("--boundary", choices=["periodic", "open"], help="boundary condition (default: periodic)")
    p.add_argument("--delta", type=float, metavar="D",
                   help=delta_help or "emitter detuning Delta in units of J (default: 0)")
    p.add_argument("--sites", type=int, nargs="+", metavar="N",
                   help="site index of each emitter (default: 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="dwqed",
        description="Emitters dissipatively coupled to 1D photonic lattices. Energies in units of J, "
        "times in units of 1/J.",
        epilog="Exit codes: 0 success, 1 configuration error, 2 numerical failure, 3 validation failure.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("spectrum", help="diagonalize one system (optionally a coupling sweep)",
                       description="Spectrum, phase and bound states of one system. Defaults: uniform "
                       "periodic chain of 400 sites, one emitter at site 0, Delta = 0, kappa = 0.1 J. "
                       "A [sweep] section (or --preset fig2) adds spectra over a parameter grid.")
    _common(p, "out/spectrum")
    _system_flags(p, "400")
    p.add_argument("--kappa", type=float, metavar="K", help="dissipative coupling kappa in units of J (default: 0.1)")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("phase-diagram", help="broken/unbroken map over detuning and coupling",
                       description="Phase diagram over Delta x kappa. Defaults: Delta/J in [-3, 3] (121 points), "
                       "kappa/J in [0, 0.5] (101 points), periodic chain of 200 sites, resonant boundary twist "
                       "for in-band detunings. Writes the grid, the phase-change markers and the closed-form "
                       "kappa_EP(Delta) curve.")
    _common(p, "out/phase_diagram")
    _system_flags(p, "200")
    p.add_argument("--detuning-range", type=float, nargs=3, metavar=("MIN", "MAX", "COUNT"),
                   help="Delta axis in units of J (default: -3 3 121)")
    p.add_argument("--kappa-range", type=float, nargs=3, metavar=("MIN", "MAX", "COUNT"),
                   help="kappa axis in units of J (default: 0 0.5 101)")
    p.add_argument("--no-resonant-twist", action="store_true",
                   help="use the plain ring for in-band detunings (finite-size pockets then appear)")
    p.set_defaults(func=cmd_phase_diagram)

    p = sub.add_parser("dynamics", help="normalized emitter population dynamics",
                       description="Evolve under the effective Hamiltonian with renormalization. Defaults: "
                       "periodic chain of 400 sites, Delta = 0, kappa = 0.3 J, emitter 0 excited, "
                       "tJ in [0, 200] with 2001 samples. --oracle compares with the no-jump master "
                       "equation on a 16-site chain over tJ in [0, 50].")
    _common(p, "out/dynamics")
    _system_flags(p, "400 (16 with --oracle)")
    p.add_argument("--kappa", type=float, metavar="K", help="coupling in units of J (default: 0.3)")
    p.add_argument("--couplings", type=float, nargs="+", metavar="K",
                   help="one trajectory per coupling, units of J (default: --kappa)")
    p.add_argument("--separations", type=int, nargs="+", metavar="N12",
                   help="two-emitter runs: one trajectory per emitter separation in sites")
    p.add_argument("--t-max", type=float, metavar="T", help="final time in units of 1/J (default: 200)")
    p.add_argument("--num-times", type=int, metavar="N", help="number of time samples (default: 2001)")
    p.add_argument("--method", choices=["auto", "spectral", "expm"], help="propagator (default: auto)")
    p.add_argument("--oracle", action="store_true", help="run the master-equation cross-check")
    p.set_defaults(func=cmd_dynamics)

    p = sub.add_parser("ssh", help="emitter on a dimerized (SSH) chain: EP3 and the vacancy-like state",
                       description="Spectrum vs kappa, third-order EP, vacancy-like dressed state fidelity, "
                       "chirality and photon profile. Defaults: delta = 0.25, open chain sized so the zero-mode "
                       "tail fits (at least 100 cells), emitter on sublattice A of cell 40, Delta = 0, "
                       "kappa in [0, 1.6 x 2J sqrt(delta)] with 161 points.")
    _common(p, "out/ssh")
    p.add_argument("--delta", type=float, metavar="D", help="dimerization, 0 < delta < 1 (default: 0.25)")
    p.add_argument("--num-cells", type=int, metavar="L", help="unit cells (default: automatic)")
    p.add_argument("--cell", type=int, metavar="J0", help="unit cell of the emitter (default: 40)")
    p.add_argument("--J", type=float, help="mean hopping; sets the energy unit (default: 1)")
    p.add_argument("--kappa-max", type=float, metavar="K", help="sweep upper end in units of J (default: 1.6 x 2J sqrt(delta))")
    p.add_argument("--kappa-count", type=int, metavar="N", help="sweep points (default: 161)")
    p.set_defaults(func=cmd_ssh)

    p = sub.add_parser("validate", help="run the acceptance suite and print PASS/FAIL per criterion",
                       description="Runs every acceptance criterion; exit code 3 if any fails.")
    p.add_argument("--jobs", type=int, default=_default_jobs(), metavar="N",
                   help="worker processes for the phase-diagram check (default: available cores)")
    p.add_argument("--only", type=int, nargs="+", metavar="K", help="run only these criterion numbers")
    p.add_argument("--out", metavar="DIR", help="also write validation.csv, manifest and summary here")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (EigensolverError, EPSearchError, DynamicsError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, PlanError, SpecError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
