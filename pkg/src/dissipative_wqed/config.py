"""Run configuration: a small TOML schema, named presets and layered overrides.

Layers are merged in order: built-in defaults, command defaults, preset,
config file, command-line flags. Unknown sections or keys are rejected with
the line they appear on.

Grammar (all keys optional)::

    [system]
    lattice = "uniform"        # "uniform" or "ssh"
    num_sites = "auto"         # sites (uniform) or unit cells (ssh); "auto" picks per command
    J = 1.0                    # hopping, the energy unit
    boundary = "auto"          # "periodic", "open"; "auto": periodic uniform, open ssh
    twist = 0.0                # boundary phase on the wrap-around bond (rad)
    dimerization = 0.25        # ssh delta, 0 < delta < 1

    [emitters]
    detuning = 0.0             # J
    coupling = 0.1             # J
    sites = [0]                # one entry per emitter; unit-cell index on ssh; "auto" centres it
    sublattice = "A"

    [sweep]
    axes = [{name = "coupling", min = 0.0, max = 0.3, count = 301}]
    outputs = ["phase", "eigenvalues", "bound_states", "ep_markers"]
    resonant_twist = false

    [dynamics]
    t_max = 200.0              # 1/J
    num_times = 2001
    initial = "emitter"        # "emitter" (emitter 0 excited) or "amplitudes"
    amplitudes = [1.0, 0.0]    # emitter amplitudes for initial = "amplitudes"
    couplings = []             # one trajectory per coupling; empty: emitters.coupling
    separations = []           # two-emitter runs: one trajectory per n12
    method = "auto"            # "auto", "spectral", "expm"
    snapshot_times = []
    oracle = false
    oracle_configs = 10

    [ssh]
    kappa_max = "auto"         # spectrum sweep upper end; "auto": 1.6 x 2J sqrt(delta)
    kappa_count = 161
    ep_window = [0.5, 1.5]     # EP3 search range in units of 2J sqrt(delta)
    kappas_vds = [0.2, 1.0, 1.7]

    [tolerances]
    eps_real_rel = 1e-9
    eps_band = 1e-8
    flat_tol = 1e-3
"""

from __future__ import annotations

import copy
import math
import re
import sys
from dataclasses import dataclass
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .analytic import vds_cells_needed
from .model import OPEN, PERIODIC, SSH, UNIFORM, EmitterSpec, LatticeSpec, SpecError, SystemSpec
from .spectral import EPS_BAND, EPS_REAL_REL
from .sweep import Axis, SweepPlan, Tolerances

AUTO = "auto"


class ConfigError(ValueError):
    """Invalid configuration; the message carries file and line when known."""


# section -> key -> (accepted types, default)
_NUM = (int, float)
SCHEMA: dict[str, dict[str, tuple[tuple, Any]]] = {
    "system": {
        "lattice": ((str,), UNIFORM),
        "num_sites": ((int, str), AUTO),
        "J": (_NUM, 1.0),
        "boundary": ((str,), AUTO),
        "twist": (_NUM, 0.0),
        "dimerization": (_NUM, 0.25),
    },
    "emitters": {
        "detuning": (_NUM, 0.0),
        "coupling": (_NUM, 0.1),
        "sites": ((list, str), [0]),
        "sublattice": ((str,), "A"),
    },
    "sweep": {
        "axes": ((list,), []),
        "outputs": ((list,), ["phase", "eigenvalues", "ep_markers"]),
        "resonant_twist": ((bool,), False),
    },
    "dynamics": {
        "t_max": (_NUM, 200.0),
        "num_times": ((int,), 2001),
        "initial": ((str,), "emitter"),
        "amplitudes": ((list,), [1.0, 0.0]),
        "couplings": ((list,), []),
        "separations": ((list,), []),
        "method": ((str,), "auto"),
        "snapshot_times": ((list,), []),
        "oracle": ((bool,), False),
        "oracle_configs": ((int,), 10),
    },
    "ssh": {
        "kappa_max": ((int, float, str), AUTO),
        "kappa_count": ((int,), 161),
        "ep_window": ((list,), [0.5, 1.5]),
        "kappas_vds": ((list,), [0.2, 1.0, 1.7]),
    },
    "tolerances": {
        "eps_real_rel": (_NUM, EPS_REAL_REL),
        "eps_band": (_NUM, EPS_BAND),
        "flat_tol": (_NUM, 1e-3),
    },
}

_AXIS_KEYS = {"name", "min", "max", "count"}


def defaults() -> dict:
    return {sec: {k: copy.deepcopy(v[1]) for k, v in keys.items()} for sec, keys in SCHEMA.items()}


# Named presets. Each pins the parameters its dataset depends on.
PRESETS: dict[str, dict] = {
    "fig1c": {
        "system": {"lattice": UNIFORM, "num_sites": 400},
        "emitters": {"sites": [0]},
        "sweep": {
            "axes": [
                {"name": "detuning", "min": -3.0, "max": 3.0, "count": 121},
                {"name": "coupling", "min": 0.0, "max": 0.5, "count": 101},
            ],
            "outputs": ["phase", "ep_markers"],
            "resonant_twist": True,
        },
    },
    "fig2": {
        "system": {"lattice": UNIFORM, "num_sites": 400},
        "emitters": {"detuning": 2.1, "coupling": 0.1, "sites": [0]},
        "sweep": {
            "axes": [{"name": "coupling", "min": 0.0, "max": 0.3, "count": 301}],
            "outputs": ["phase", "eigenvalues", "ep_markers"],
        },
    },
    "fig2d": {
        "system": {"lattice": UNIFORM, "num_sites": 400},
        "emitters": {"detuning": 2.1, "sites": [0]},
        "dynamics": {"couplings": [0.05, 0.1563480835, 0.3], "t_max": 200.0, "num_times": 2001},
    },
    "fig3": {
        "system": {"lattice": UNIFORM, "num_sites": 400},
        "emitters": {"detuning": 0.0, "coupling": 0.3, "sites": [0, 41]},
        "sweep": {
            "axes": [{"name": "separation", "min": 1, "max": 60, "count": 60}],
            "outputs": ["phase", "eigenvalues"],
        },
    },
    "fig3cd": {
        "system": {"lattice": UNIFORM, "num_sites": 400},
        "emitters": {"detuning": 0.0, "coupling": 0.3, "sites": [0, 41]},
        "dynamics": {
            "initial": "amplitudes",
            "amplitudes": [1.0, 0.0],
            "separations": [41, 40],
            "t_max": 600.0,
            "num_times": 3001,
        },
    },
    "fig4": {
        "system": {"lattice": SSH, "num_sites": 100, "dimerization": 0.25, "boundary": OPEN},
        "emitters": {"detuning": 0.0, "sites": [40], "sublattice": "A"},
        "ssh": {"kappa_max": 1.6, "kappa_count": 161, "ep_window": [0.5, 1.5]},
    },
}
PRESETS["fig3c"] = PRESETS["fig3cd"]
PRESETS["fig3d"] = PRESETS["fig3cd"]


def _line_of(text: str, section: str | None, key: str | None) -> int | None:
    """1-based line of ``key`` inside ``[section]`` (or of the header itself)."""
    current = None
    header = re.compile(r"^\s*\[\s*([A-Za-z0-9_.\-]+)\s*\]")
    for n, line in enumerate(text.splitlines(), 1):
        m = header.match(line)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return n
            continue
        if key is not None and current == section and re.match(rf"^\s*{re.escape(key)}\s*=", line):
            return n
    return None


def _where(origin: str, line: int | None) -> str:
    return f"{origin}:{line}" if line else origin


def _check_type(value, types: tuple, sec: str, key: str, origin: str, line: int | None):
    ok = isinstance(value, types) and not (isinstance(value, bool) and bool not in types)
    if not ok:
        names = " or ".join(t.__name__ for t in types)
        raise ConfigError(
            f"{_where(origin, line)}: [{sec}] {key} must be {names}, got {type(value).__name__} {value!r}"
        )
    if isinstance(value, str) and types != (str,) and value != AUTO:
        raise ConfigError(f'{_where(origin, line)}: [{sec}] {key} must be a number or "auto", got {value!r}')


def validate_layer(layer: dict, origin: str = "<config>", text: str | None = None) -> dict:
    """Check a (partial) nested dict against the schema; returns it unchanged."""
    for sec, keys in layer.items():
        if sec not in SCHEMA:
            line = _line_of(text, sec, None) if text else None
            raise ConfigError(
                f"{_where(origin, line)}: unknown section [{sec}]; expected one of {sorted(SCHEMA)}"
            )
        if not isinstance(keys, dict):
            raise ConfigError(f"{origin}: [{sec}] must be a table")
        for key, value in keys.items():
            line = _line_of(text, sec, key) if text else None
            if key not in SCHEMA[sec]:
                raise ConfigError(
                    f"{_where(origin, line)}: unknown key {key!r} in [{sec}]; "
                    f"expected one of {sorted(SCHEMA[sec])}"
                )
            _check_type(value, SCHEMA[sec][key][0], sec, key, origin, line)
            if sec == "sweep" and key == "axes":
                for ax in value:
                    if not isinstance(ax, dict) or set(ax) != _AXIS_KEYS:
                        raise ConfigError(
                            f"{_where(origin, line)}: each sweep axis needs exactly the keys "
                            f"{sorted(_AXIS_KEYS)}, got {ax!r}"
                        )
    return layer


def parse_toml(text: str, origin: str = "<config>") -> dict:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    return validate_layer(data, origin, text)


def load_file(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_toml(text, path)


def merge(base: dict, layer: dict) -> dict:
    out = copy.deepcopy(base)
    for sec, keys in layer.items():
        out.setdefault(sec, {}).update(copy.deepcopy(keys))
    return out


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return copy.deepcopy(PRESETS[name])


@dataclass
class RunConfig:
    """Resolved configuration (all sections present)."""

    values: dict

    @classmethod
    def build(cls, *layers: dict) -> "RunConfig":
        v = defaults()
        for layer in layers:
            if layer:
                v = merge(v, validate_layer(layer))
        return cls(v)

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def echo(self) -> dict:
        return copy.deepcopy(self.values)

    def tolerances(self) -> Tolerances:
        t = self.values["tolerances"]
        return Tolerances(eps_real_rel=float(t["eps_real_rel"]), eps_band=float(t["eps_band"]))

    def system_spec(self, num_sites_auto: int = 400) -> SystemSpec:
        """Build the SystemSpec; ``"auto"`` entries resolve per lattice kind."""
        s, e = self.values["system"], self.values["emitters"]
        kind = s["lattice"]
        if kind not in (UNIFORM, SSH):
            raise ConfigError(f'[system] lattice must be "uniform" or "ssh", got {kind!r}')
        boundary = s["boundary"]
        if boundary == AUTO:
            boundary = PERIODIC if kind == UNIFORM else OPEN
        delta = float(s["dimerization"]) if kind == SSH else 0.0
        if kind == SSH and not 0 < delta < 1:
            raise ConfigError(
                f"[system] dimerization = {delta:g}: the SSH analysis needs 0 < delta < 1; "
                "delta = 0 closes the gap (uniform chain, no in-gap or zero-energy states) "
                "and delta < 0 moves the edge state to the other side"
            )
        sites = e["sites"]
        if sites == AUTO:
            sites = [40] if kind == SSH else [0]
        if not sites or not all(isinstance(x, int) and not isinstance(x, bool) for x in sites):
            raise ConfigError(f"[emitters] sites must be a non-empty list of integers, got {sites!r}")
        N = s["num_sites"]
        if N == AUTO:
            N = num_sites_auto
            if kind == SSH:
                # room for the vds tail to the right of the emitter
                N = max(100, max(sites) + vds_cells_needed(delta) + 10)
        try:
            lattice = LatticeSpec(
                kind, J=float(s["J"]), delta=delta, num_sites=int(N), boundary=boundary,
                twist=float(s["twist"]),
            )
            emitters = tuple(
                EmitterSpec(float(e["detuning"]), int(n), float(e["coupling"]), e["sublattice"])
                for n in sites
            )
            return SystemSpec(lattice, emitters)
        except SpecError as exc:
            raise ConfigError(f"invalid system: {exc}") from None

    def sweep_plan(self, spec: SystemSpec) -> SweepPlan | None:
        sw = self.values["sweep"]
        if not sw["axes"]:
            return None
        axes = tuple(Axis(a["name"], float(a["min"]), float(a["max"]), int(a["count"])) for a in sw["axes"])
        try:
            return SweepPlan(spec, axes, tuple(sw["outputs"]), bool(sw["resonant_twist"]))
        except ValueError as exc:
            raise ConfigError(f"invalid sweep: {exc}") from None


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int,)):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v) or math.isinf(v):
            raise ConfigError("non-finite values are not representable")
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k} = {_toml_value(x)}" for k, x in v.items()) + "}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot write {type(v).__name__} to the config format")


def dump_toml(values: dict) -> str:
    """Serialize a nested config dict (round-trips through parse_toml)."""
    lines = []
    for sec in SCHEMA:
        if sec not in values:
            continue
        lines.append(f"[{sec}]")
        for k, v in values[sec].items():
            lines.append(f"{k} = {_toml_value(v)}")
        lines.append("")
    return "\n".join(lines)
