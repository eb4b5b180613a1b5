import math

import numpy as np
import pytest

from instances import BUNDLED, bundled, bundled_run, single_bar
from proxplast import tensor
from proxplast.constitutive import Elastic
from proxplast.solver import (AccelerationState, SolverConfig, StepMonitor, collapse_certificate,
                              objective_noise, pg_step, restart_check, solve)
from proxplast.state import IterateState, evaluate, objective, zeros
from proxplast.verification import kkt_check


def step_model(name, i=-1):
    """The model of step ``i`` of a bundled run, with its committed sigma0 and load."""
    step = bundled_run(name).steps[i]
    return bundled(name).model.replace(sigma0=step.sigma0, load=step.load), step


# objective


def test_objective_zero_state():
    model = single_bar(q=0.0)
    assert objective(model, zeros(model)) == 0.0


def test_objective_single_bar_by_hand():
    model = single_bar(q=0.3)
    state = IterateState(np.array([0.3]), np.zeros((1, 1)))
    assert objective(model, state) == pytest.approx(0.5 * 0.3 ** 2 - 0.3 * 0.3, abs=1e-16)
    assert objective(model, state) == pytest.approx(-0.045, abs=1e-16)


def test_objective_infinite_off_dissipation_domain():
    model = bundled("vm_patch").model
    eps = np.zeros((model.m, 6))
    eps[0] = tensor.identity() * 1e-3
    assert objective(model, IterateState(np.zeros(model.d), eps)) == np.inf


def test_objective_unbounded_above_limit_load():
    # du = t, eps_p = t - 0.5: f(t) = 1/8 + 0.5 (t - 0.5) - 0.8 t -> -inf
    model = single_bar(q=0.8)
    values = [objective(model, IterateState(np.array([t]), np.array([[t - 0.5]])))
              for t in (1.0, 10.0, 1e3, 1e6)]
    assert all(b < a for a, b in zip(values, values[1:]))
    assert values[-1] == pytest.approx(0.125 - 0.25 - 0.3 * 1e6, rel=1e-12)


# pg_step


def test_pg_step_hand_trace():
    model = single_bar(q=0.3)
    cfg = SolverConfig(alpha=0.5, lipschitz=2.0).resolve(model)
    new = pg_step(model, zeros(model), cfg)
    assert new.du[0] == pytest.approx(0.15, abs=1e-16)
    assert new.eps_p[0, 0] == 0.0


def test_pg_step_fixed_at_exact_solution():
    model = single_bar(q=0.3)
    cfg = SolverConfig(alpha=0.5, lipschitz=2.0).resolve(model)
    exact = evaluate(model, np.array([0.3]), np.zeros((1, 1)))
    new = pg_step(model, exact, cfg)
    np.testing.assert_array_equal(new.du, exact.du)
    np.testing.assert_array_equal(new.eps_p, exact.eps_p)


def test_pg_step_elastic_is_steepest_descent():
    base = bundled("tenbar").model
    model = base.replace(criteria=type(base.criteria)([Elastic()] * base.m))
    cfg = SolverConfig().resolve(model)
    rng = np.random.default_rng(0)
    du = rng.normal(size=model.d)
    new = pg_step(model, evaluate(model, du, np.zeros((model.m, 1))), cfg)
    K = model.stiffness()
    np.testing.assert_allclose(new.du, du - cfg.alpha * (K @ du - model.load), rtol=1e-12)
    np.testing.assert_array_equal(new.eps_p, 0.0)


@pytest.mark.parametrize("name", BUNDLED)
def test_pg_step_total_on_wild_inputs(name):
    model = bundled(name).model
    cfg = SolverConfig().resolve(model)
    rng = np.random.default_rng(1)
    for scale in (1e-300, 1.0, 1e6, 1e150):
        state = IterateState(rng.normal(size=model.d) * scale,
                             rng.normal(size=(model.m, model.ncomp)) * scale)
        new = pg_step(model, state, cfg)
        assert np.all(np.isfinite(new.du)) and np.all(np.isfinite(new.eps_p))
        if model.ncomp == 6:
            assert np.all(np.isfinite(model.criteria.dissipation(new.eps_p)))


@pytest.mark.parametrize("name", BUNDLED)
def test_fixed_point_equivalence(name):
    # KKT residual and prox-gradient step size bound each other by constants
    # of order one, both at converged and at perturbed states
    model, step = step_model(name)
    cfg = SolverConfig().resolve(model)
    rng = np.random.default_rng(2)
    ratios = []
    for pert in (0.0, 1e-9, 1e-6, 1e-3):
        eps = step.eps_p + pert * rng.normal(size=step.eps_p.shape)
        if model.ncomp == 6:
            eps = tensor.dev(eps)
        x = evaluate(model, step.du + pert * rng.normal(size=model.d), eps)
        y = pg_step(model, x, cfg)
        moved = max(np.linalg.norm(y.du - x.du), np.max(tensor.frobenius(y.eps_p - x.eps_p)))
        ratios.append(moved / kkt_check(model, x).max_residual)
    assert 1e-2 <= min(ratios) and max(ratios) <= 10.0, ratios


# momentum and restart


def test_restart_check_decreasing_sequence():
    accel = AccelerationState()
    ts = [accel.t]
    f = 10.0
    for k in range(50):
        accel = restart_check(f, f - 1.0 / (k + 1), accel)
        f -= 1.0 / (k + 1)
        ts.append(accel.t)
        assert 0.0 <= accel.omega < 1.0
    assert accel.restarts == 0
    assert all(b > a for a, b in zip(ts, ts[1:]))
    assert ts[1] == pytest.approx((1 + math.sqrt(5)) / 2)


def test_restart_check_fires_on_increase():
    accel = restart_check(1.0, 0.5, AccelerationState())
    accel = restart_check(0.5, 0.5 + 1e-12, accel)
    assert accel.restarted and accel.restarts == 1
    assert accel.t == 1.0 and accel.omega == 0.0


def test_restart_check_without_restart_keeps_momentum():
    accel = restart_check(0.5, 2.0, AccelerationState(t=3.0), restart=False)
    assert not accel.restarted and accel.t > 3.0


def test_restart_check_noise_band_uses_direction():
    f = 1e6
    noise = objective_noise(f)
    assert not restart_check(f, f + 0.5 * noise, AccelerationState(t=2.0)).restarted
    assert restart_check(f, f + 0.5 * noise, AccelerationState(t=2.0),
                         momentum_opposes=True).restarted


def test_step_monitor_geometric_tail():
    # steps r^k with r = 0.5 reach the tolerance when r^k r/(1-r) <= 1
    mon = StepMonitor(window=4)
    k = 0
    while not mon.update(100.0 * 0.5 ** k):
        k += 1
    assert 100.0 * 0.5 ** k <= 1.0
    assert mon.rate == pytest.approx(0.5)


def test_step_monitor_slow_contraction_waits():
    mon = StepMonitor(window=4)
    stopped = [mon.update(0.9 * 0.999 ** k) for k in range(100)]
    assert not any(stopped)


def test_step_monitor_oscillation_amplitude():
    # x_k = A r^k cos(theta k): steps stay below 1 while |x| is still about 10
    theta, r, A = 2 * np.pi / 180, 0.99995, 10.0
    x = A * r ** np.arange(4000) * np.cos(theta * np.arange(4000))
    steps = np.abs(np.diff(x))
    assert steps.max() < 0.5
    plain, osc = StepMonitor(window=10), StepMonitor(window=10, oscillatory=True)
    stop_plain = next(k for k, s in enumerate(steps) if plain.update(s))
    assert abs(x[stop_plain + 1]) > 1.0  # the rate estimate alone stops far out
    assert not any(osc.update(s) for s in steps)
    assert osc.amplitude() == pytest.approx(A * r ** 4000, rel=0.05)


def test_step_monitor_without_window():
    mon = StepMonitor(window=0)
    assert not mon.update(2.0)
    assert mon.update(0.5)


# solve


@pytest.mark.parametrize("mode", ["plain", "accelerated", "accelerated_restart"])
def test_single_bar_elastic(mode):
    model = single_bar(q=0.3)
    state, report = solve(model, config=SolverConfig(mode=mode, tol_du=1e-12, tol_eps=1e-12))
    assert report.converged and report.kkt.passed
    assert state.du[0] == pytest.approx(0.3, abs=1e-10)
    assert state.sigma[0, 0] == pytest.approx(0.3, abs=1e-10)
    assert state.eps_p[0, 0] == 0.0


@pytest.mark.parametrize("mode", ["plain", "accelerated", "accelerated_restart"])
def test_single_bar_collapse(mode):
    state, report = solve(single_bar(q=0.8), config=SolverConfig(mode=mode))
    assert report.collapsed and not report.converged
    assert report.message == "unbounded (plastic collapse suspected)"
    assert report.iterations < 1000


def test_collapse_certificate_on_single_bar():
    model = single_bar(q=0.8)
    state = evaluate(model, np.array([1.0]), np.array([[0.5]]))
    assert collapse_certificate(model, state, np.array([1.0]), np.array([[1.0]]))
    # below the limit the same ray is bounded
    model = single_bar(q=0.3)
    state = evaluate(model, np.array([1.0]), np.array([[0.5]]))
    assert not collapse_certificate(model, state, np.array([1.0]), np.array([[1.0]]))


def test_max_iters_returns_best():
    model, _ = step_model("tenbar")
    state, report = solve(model, config=SolverConfig(max_iters=5, mode="plain"))
    assert report.status == "max_iters" and report.iterations == 5
    assert state.objective == min(report.history["objective"])


def test_restart_mode_not_slower_than_plain():
    plain = bundled_run("tenbar", "plain", 1e-8)
    fast = bundled_run("tenbar", "accelerated_restart", 1e-8)
    assert sum(s.iterations for s in fast.steps) <= sum(s.iterations for s in plain.steps)


@pytest.mark.parametrize("name", BUNDLED)
def test_plain_mode_descends(name):
    for step in bundled_run(name, "plain").steps:
        f = np.array(step.report.history["objective"])
        assert np.all(np.diff(f) <= 1e-12 * (1 + np.abs(f[:-1])))


@pytest.mark.parametrize("name", BUNDLED)
def test_restart_mode_monotone_between_restarts(name):
    for step in bundled_run(name).steps:
        f = np.array(step.report.history["objective"])
        restarted = np.array(step.report.history["restarted"][1:], dtype=bool)
        rises = np.diff(f) > 1e-12 * (1 + np.abs(f[:-1]))
        assert not np.any(rises & ~restarted)


@pytest.mark.parametrize("name", BUNDLED)
@pytest.mark.parametrize("mode", ["accelerated", "accelerated_restart"])
def test_accelerated_modes_agree_with_plain(name, mode):
    tol = bundled(name).solver["tol"]
    ref, other = bundled_run(name, "plain"), bundled_run(name, mode)
    assert ref.completed and other.completed
    for a, b in zip(ref.steps, other.steps):
        assert np.linalg.norm(a.du - b.du) <= 10 * tol
        assert np.max(tensor.frobenius(a.eps_p - b.eps_p)) <= 10 * tol


def test_threads_do_not_change_results():
    model, _ = step_model("vm_patch")
    one, r1 = solve(model, config=SolverConfig(threads=1))
    many, r3 = solve(model, config=SolverConfig(threads=3))
    assert r1.iterations == r3.iterations
    np.testing.assert_array_equal(one.du, many.du)
    np.testing.assert_array_equal(one.eps_p, many.eps_p)


def test_solver_config_validation():
    model = single_bar()
    with pytest.raises(ValueError):
        SolverConfig(mode="newton").resolve(model)
    with pytest.raises(ValueError):
        SolverConfig(alpha_scale=1.5).resolve(model)
    with pytest.raises(ValueError):
        SolverConfig(alpha=1.0, lipschitz=2.0).resolve(model)
    with pytest.raises(ValueError):
        SolverConfig(threads=0).resolve(model)
    cfg = SolverConfig(lipschitz=2.0).resolve(model)
    assert cfg.alpha == 0.5
    assert cfg.tol_du == pytest.approx(1e-8 * (0.3 * 0.5 + 1))
    np.testing.assert_array_equal(cfg.beta(model), model.rho * 0.5)


def test_solve_rejects_bad_init():
    model = single_bar()
    with pytest.raises(ValueError):
        solve(model, init=IterateState(np.zeros(2), np.zeros((1, 1))))


def test_report_serialization(tmp_path):
    _, report = solve(single_bar(), config=SolverConfig(tol_du=1e-12, tol_eps=1e-12))
    d = report.to_dict()
    assert d["converged"] and d["kkt"]["passed"]
    assert len(d["history"]["objective"]) == report.iterations
    report.write_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0].startswith("iter,objective") and len(lines) == report.iterations + 1


def test_von_mises_plastic_flow_is_deviatoric():
    step = bundled_run("vm_patch").final
    plastic = tensor.frobenius(step.eps_p) > 1e-6
    assert plastic.sum() >= 3
    assert np.all(np.abs(tensor.trace(step.eps_p)) <= 1e-12 * (1 + tensor.frobenius(step.eps_p)))
    assert np.all(np.isfinite(bundled("vm_patch").model.criteria.dissipation(step.eps_p)))
