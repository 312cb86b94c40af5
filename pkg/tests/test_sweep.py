import json
import math

import numpy as np
import pytest

from dissipative_wqed import sweep
from dissipative_wqed.analytic import ep_coupling
from dissipative_wqed.model import ssh_chain, uniform_chain
from dissipative_wqed.sweep import (
    BOUND_STATES,
    COUPLING,
    DETUNING,
    DIMERIZATION,
    EIGENVALUES,
    EP_MARKERS,
    PHASE,
    SEPARATION,
    Axis,
    PlanError,
    SweepPlan,
    boundary_from_grid,
    resonant_twist,
    run_sweep,
    with_resonant_twist,
)


def small_plan(**kw):
    return SweepPlan(
        uniform_chain(40, 0.0, 0.1),
        (Axis(DETUNING, -3, 3, 7), Axis(COUPLING, 0, 0.4, 5)),
        **kw,
    )


def test_points_are_row_major():
    plan = small_plan()
    pts = plan.points()
    assert plan.shape == (7, 5) and plan.num_points == 35
    assert pts[0] == (-3.0, 0.0) and pts[1] == (-3.0, 0.1) and pts[5] == (-2.0, 0.0)


@pytest.mark.parametrize(
    "axes,kw,match",
    [
        ((), {}, "1 or 2 axes"),
        ((Axis(COUPLING, 0, 1, 3), Axis(COUPLING, 0, 1, 3)), {}, "duplicate"),
        ((Axis("mass", 0, 1, 3),), {}, "unknown axis"),
        ((Axis(COUPLING, 0, 1, 1),), {}, "count"),
        ((Axis(COUPLING, 1, 0, 3),), {}, "must exceed"),
        ((Axis(COUPLING, -1, 1, 3),), {}, "coupling = -1"),
        ((Axis(DETUNING, 0, 1, 3),), {"outputs": (EP_MARKERS,)}, "coupling axis"),
        ((Axis(DETUNING, 0, 1, 3),), {"outputs": ("spectra",)}, "unknown output"),
        ((Axis(DETUNING, 0, 1, 2000), Axis(COUPLING, 0, 1, 1000)), {}, "exceeds"),
        ((Axis(DIMERIZATION, 0.1, 0.5, 3),), {}, "SSH"),
        ((Axis(SEPARATION, 1, 3, 3),), {}, "two emitters"),
    ],
)
def test_plan_validation(axes, kw, match):
    with pytest.raises(PlanError, match=match):
        SweepPlan(uniform_chain(40, 0.0, 0.1), axes, **kw)


def test_resonant_twist_needs_periodic_uniform_chain():
    with pytest.raises(PlanError, match="periodic uniform"):
        SweepPlan(ssh_chain(20, 0.2, 0.5, 5), (Axis(COUPLING, 0, 1, 3),), resonant_twist=True)


def test_separation_axis_steps_through_integers():
    tmpl = uniform_chain(60, 0.0, 0.2, sites=(0, 10))
    with pytest.raises(PlanError, match="integers"):
        SweepPlan(tmpl, (Axis(SEPARATION, 1, 4, 3),))
    plan = SweepPlan(tmpl, (Axis(SEPARATION, 1, 4, 4),))
    assert [plan.spec_at(p).emitters[1].site for p in plan.points()] == [1, 2, 3, 4]


def test_sweep_is_deterministic_and_parallel_invariant():
    plan = small_plan(outputs=(PHASE, EIGENVALUES, BOUND_STATES, EP_MARKERS))
    a = run_sweep(plan, jobs=1)
    b = run_sweep(plan, jobs=1)
    c = run_sweep(plan, jobs=2)
    assert a.tables() == b.tables() == c.tables()
    assert set(a.tables()) == {"phase.csv", "eigenvalues.csv", "bound_states.csv", "ep_markers.csv"}


def test_hermitian_control_column_is_unbroken():
    grid = run_sweep(small_plan()).phase_grid()
    assert np.all(grid[:, 0] == 0)
    # in-band emitters on a finite ring: broken once the coupling beats the level spacing
    assert grid[3, -1] == 1


def test_failed_point_is_isolated(monkeypatch):
    real = sweep.build_hamiltonian

    def flaky(spec):
        if spec.coupling == pytest.approx(0.2) and spec.emitters[0].detuning == 1.0:
            raise np.linalg.LinAlgError("injected")
        return real(spec)

    monkeypatch.setattr(sweep, "build_hamiltonian", flaky)
    res = run_sweep(small_plan(outputs=(PHASE, EP_MARKERS)), jobs=1)
    assert len(res.failures) == 1
    bad = res.failures[0]
    assert bad.coords == (1.0, 0.2) and "LinAlgError: injected" in bad.status
    assert res.phase_grid()[4, 2] == -1
    assert (res.phase_grid() >= 0).sum() == 34
    manifest = json.loads(res.manifest.to_json())
    assert [p["status"] for p in manifest["point_status"]].count("ok") == 34
    # markers never straddle a failed point
    for row in res.ep_marker_rows():
        if row[DETUNING] == 1.0:
            assert not (row["kappa_lo"] <= 0.2 <= row["kappa_hi"])


def test_ep_markers_bracket_gap_transition():
    plan = SweepPlan(uniform_chain(200, 2.1, 0.0), (Axis(COUPLING, 0.1, 0.2, 21),), outputs=(EP_MARKERS,))
    rows = run_sweep(plan).ep_marker_rows()
    assert len(rows) == 1
    assert rows[0]["kappa_lo"] <= ep_coupling(2.1) <= rows[0]["kappa_hi"]
    assert rows[0]["transition"] == "unbroken->broken"


def test_resonant_twist_puts_a_mode_on_resonance():
    for d in (-1.7, 0.0, 0.3, 1.9):
        spec = with_resonant_twist(uniform_chain(50, d, 0.1))
        k = 2 * np.pi * np.arange(50) / 50 + spec.lattice.twist / 50
        assert np.min(np.abs(-2 * np.cos(k) - d)) < 1e-12
    assert with_resonant_twist(uniform_chain(50, 2.5, 0.1)).lattice.twist == 0.0
    assert with_resonant_twist(uniform_chain(50, 0.3, 0.0)).lattice.twist == 0.0
    assert 0 <= resonant_twist(0.3, 400) < 2 * math.pi


def test_resonant_twist_breaks_weak_coupling():
    # detuning midway between two ring modes
    tmpl = uniform_chain(100, -2 * math.cos(2 * math.pi * 29.5 / 100), 0.0)
    axes = (Axis(COUPLING, 0, 0.02, 3),)
    plain = run_sweep(SweepPlan(tmpl, axes)).phase_grid()
    twisted = run_sweep(SweepPlan(tmpl, axes, resonant_twist=True)).phase_grid()
    assert list(plain) == [0, 0, 0]
    assert list(twisted) == [0, 1, 1]


def test_boundary_from_grid():
    res = run_sweep(small_plan(resonant_twist=True))
    bnd = dict(boundary_from_grid(res))
    assert bnd[0.0] == pytest.approx(0.1)
    assert math.isnan(bnd[3.0]) or bnd[3.0] > 0.3
    one_axis = run_sweep(SweepPlan(uniform_chain(20), (Axis(COUPLING, 0, 1, 2),)))
    with pytest.raises(ValueError):
        boundary_from_grid(one_axis)


def test_manifest_records_run_context():
    res = run_sweep(small_plan(), notes=("hello",))
    m = json.loads(res.manifest.to_json())
    assert m["lattice_size"] == 40
    assert m["notes"] == ["hello"]
    assert set(m["tolerances"]) >= {"eps_real_rel", "eps_band"}
    assert m["plan"]["axes"][0]["name"] == DETUNING
    assert len(m["point_status"]) == 35
