import csv

import numpy as np
import pytest

from instances import BUNDLED, bundled, bundled_run, single_bar
from proxplast import tensor
from proxplast.driver import LoadPath, elastic_reference, run_path
from proxplast.fem import ModelError, assemble_truss
from proxplast.solver import SolverConfig, pg_step
from proxplast.state import evaluate

TIGHT = SolverConfig(tol_du=1e-11, tol_eps=1e-11)


def unit_bar():
    return single_bar(R=0.5, q=1.0)


def test_single_bar_elastic_path():
    record = run_path(unit_bar(), [0.2, 0.4], TIGHT)
    assert record.completed and not record.collapsed
    assert [s.u[0] for s in record.steps] == pytest.approx([0.2, 0.4], abs=1e-9)
    assert record.final.sigma[0, 0] == pytest.approx(0.4, abs=1e-9)
    assert np.all(record.final.plastic_strain == 0.0)


def test_single_bar_just_below_limit():
    record = run_path(unit_bar(), [0.4, 0.49999], TIGHT)
    assert record.completed
    assert record.final.sigma[0, 0] == pytest.approx(0.49999, abs=1e-9)


def test_single_bar_collapse_truncates_path():
    record = run_path(unit_bar(), [0.4, 0.6, 0.7], TIGHT)
    assert record.truncated and record.collapsed
    assert record.failed_factor == 0.6
    assert len(record.steps) == 2
    assert [s.committed for s in record.steps] == [True, False]
    assert len(record.committed_steps()) == 1


def test_unconverged_step_truncates():
    record = run_path(unit_bar(), [0.2, 0.4], SolverConfig(max_iters=1, mode="plain"))
    assert record.truncated and not record.collapsed
    assert record.failure == "max_iters"
    assert len(record.steps) == 1


def test_elastic_reference_single_bar():
    assert elastic_reference(single_bar(q=0.3))[0] == pytest.approx(0.3, rel=1e-15)
    assert elastic_reference(single_bar(q=0.3, E=2.0, A=3.0, length=4.0))[0] == pytest.approx(0.2)


def test_elastic_reference_subtracts_initial_stress():
    model = single_bar(q=0.3).replace(sigma0=np.array([[0.1]]))
    assert elastic_reference(model)[0] == pytest.approx(0.2)


def test_elastic_reference_matches_dense_solve_on_tenbar():
    model = bundled("tenbar").model
    K = model.stiffness().toarray()
    np.testing.assert_allclose(elastic_reference(model), np.linalg.solve(K, model.load),
                               rtol=1e-12, atol=1e-14)


def test_elastic_reference_rejects_singular():
    model = assemble_truss([[0, 0], [1, 0]], [dict(nodes=[0, 1], E=1.0, A=1.0, R=1.0)],
                           [(0, 0), (0, 1), (1, 1)], [(1, 0, 1.0)])
    singular = model.replace(elasticity=type(model.elasticity)(E=np.array([1e-300])))
    with pytest.raises(ModelError):
        elastic_reference(singular.replace(load=np.array([1e300])))


def test_load_path_validation():
    with pytest.raises(ValueError):
        LoadPath([])
    with pytest.raises(ValueError):
        LoadPath([1.0, 2.0], loads=[np.zeros(1)])
    with pytest.raises(ValueError):
        LoadPath([1.0], overrides=[{}, {}])
    assert LoadPath([0.5], q_ref=np.array([2.0])).load(0, unit_bar())[0] == 1.0


def test_explicit_loads_start_cold():
    path = LoadPath([1, 2], loads=[np.array([0.1]), np.array([0.2])])
    record = run_path(unit_bar(), path, TIGHT)
    assert [s.warm_start for s in record.steps] == ["zeros", "zeros"]
    assert record.final.u[0] == pytest.approx(0.2, abs=1e-9)


def test_warm_start_scales_previous_increment():
    record = run_path(unit_bar(), [0.1, 0.2, 0.4], TIGHT)
    assert record.steps[1].warm_start.startswith("scaled previous x1")
    assert record.steps[2].warm_start == "scaled previous x2"


def test_per_step_overrides_apply():
    path = LoadPath([0.1, 0.2], overrides=[None, {"mode": "plain"}])
    record = run_path(unit_bar(), path, TIGHT)
    assert [s.report.mode for s in record.steps] == ["accelerated_restart", "plain"]


def test_elastic_unloading_leaves_plastic_strain():
    # two collinear bars: yield the short one, then unload to zero
    model = bundled("twobar").model
    record = run_path(model, [1.8, 0.0], TIGHT)
    assert record.completed
    loaded, unloaded = record.steps
    assert np.max(np.abs(loaded.eps_p)) > 0.1
    np.testing.assert_allclose(unloaded.eps_p, 0.0, atol=1e-9)
    np.testing.assert_allclose(unloaded.plastic_strain, loaded.plastic_strain, atol=1e-9)
    # residual stress is self-equilibrated
    np.testing.assert_allclose(model.internal_force(unloaded.sigma), 0.0, atol=1e-8)


@pytest.mark.parametrize("name", BUNDLED)
def test_committed_states_are_fixed_points(name):
    mf = bundled(name)
    record = bundled_run(name)
    assert record.completed
    for step in record.steps:
        model = mf.model.replace(sigma0=step.sigma0, load=step.load)
        state = evaluate(model, step.du, step.eps_p)
        cfg = SolverConfig().resolve(model)
        nxt = pg_step(model, state, cfg)
        assert np.linalg.norm(nxt.du - state.du) <= 1e-6
        assert np.max(tensor.frobenius(nxt.eps_p - state.eps_p)) <= 1e-6
        assert np.max(model.criteria.distance(step.sigma)) <= 1e-8


def test_twobar_matches_analytic_path():
    # elastic until P = 1.5 (u = P / 1.5), then u = 2 (P - 1) until the limit P = 2
    record = bundled_run("twobar")
    lam = np.array([s.factor for s in record.steps])
    u = np.array([s.u[0] for s in record.steps])
    expected = np.where(lam <= 1.5, lam / 1.5, 2.0 * (lam - 1.0))
    np.testing.assert_allclose(u, expected, atol=1e-8)


def test_path_csv(tmp_path):
    mf = bundled("twobar")
    record = bundled_run("twobar")
    out = tmp_path / "path.csv"
    record.write_csv(out, mf.model, [(1, 0)])
    rows = list(csv.DictReader(out.open()))
    assert list(rows[0]) == ["step", "lambda", "u_1_0", "iterations", "max_kkt", "converged",
                             "collapsed"]
    assert len(rows) == len(record.steps)
    assert float(rows[-1]["u_1_0"]) == pytest.approx(1.9, abs=1e-8)
    assert rows[-1]["converged"] == "1" and rows[-1]["collapsed"] == "0"
