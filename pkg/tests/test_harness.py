import csv
import io
import json
import statistics

import numpy as np
import pytest

from prioritized_control import harness
from prioritized_control.bounce_sim import FAILURE_REASONS
from prioritized_control.harness import (
    SINGLE_MODEL, DominanceResult, ExperimentConfig, collect_primitive_data, load_study,
    rank_results, report, run_dominance_study, write_study,
)


def small_config(**kw):
    base = dict(collection_duration=2.0, n_trials=2, max_time=1.5, seed=5)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def small_study():
    cfg = small_config()
    return cfg, run_dominance_study(cfg)


def test_thirty_seconds_give_thirty_thousand_rows():
    ds = collect_primitive_data("orient", 30.0, 0)
    assert len(ds) == 30000
    assert ds.task_dim == 1 and ds.n_joints == 4
    assert ds.meta["rest_convention"] == harness.REST_CONVENTION


def test_collection_rejects_bad_arguments():
    with pytest.raises(ValueError):
        collect_primitive_data("hit", 0.0, 0)
    with pytest.raises(ValueError):
        collect_primitive_data("hit", 1.0, 0, mode="sometimes")
    with pytest.raises(KeyError):
        collect_primitive_data("spin", 1.0, 0)


@pytest.mark.parametrize("mode", harness.COLLECTION_MODES)
def test_collection_is_bit_identical_per_seed(mode):
    a = collect_primitive_data("move", 1.0, 3, mode=mode)
    b = collect_primitive_data("move", 1.0, 3, mode=mode)
    assert a.phi.tobytes() == b.phi.tobytes()
    assert a.u.tobytes() == b.u.tobytes()
    c = collect_primitive_data("move", 1.0, 4, mode=mode)
    assert not np.array_equal(a.phi, c.phi)


def test_hold_mode_keeps_other_tasks_still():
    from prioritized_control.robot import reference_arm
    arm = reference_arm()
    ds = collect_primitive_data("hit", 0.5, 1)
    # the demonstrated control realizes zero acceleration of the held tasks
    for k in range(0, len(ds), 50):
        q, qd, u = ds.q[k], ds.qd[k], ds.u[k]
        acc = arm.full_jacobian(q) @ u + arm.jdot_qdot(q, qd)
        np.testing.assert_allclose(acc[[0, 1, 3]], 0.0, atol=1e-6)
        assert acc[2] == pytest.approx(ds.xdd[k, 0], abs=1e-6)


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        ExperimentConfig(n_trials=0)
    with pytest.raises(ValueError):
        ExperimentConfig(collection_duration=0)
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"trials": 3})
    cfg = small_config(strategy={"racket_radius": 0.05})
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    back = ExperimentConfig.load(tmp_path / "c.json")
    assert back.strategy.racket_radius == 0.05
    assert back.to_dict() == cfg.to_dict()


def test_study_has_six_orderings_and_single_model(small_study):
    _, results = small_study
    assert len(results) == 7
    labels = {r.label for r in results}
    assert SINGLE_MODEL in labels
    assert len(labels) == 7
    assert sum(r.best for r in results) == 1
    means = [r.mean for r in results if not r.failed]
    assert means == sorted(means, reverse=True)


def test_stats_match_per_trial_counts(small_study):
    _, results = small_study
    for r in results:
        assert len(r.hits) == 2
        assert abs(r.mean - sum(r.hits) / len(r.hits)) < 1e-12
        assert abs(r.std - statistics.stdev(r.hits)) < 1e-12
        assert sum(r.failures.values()) == len(r.hits)


def test_failed_training_is_reported_not_raised():
    rows = [DominanceResult("a", [3, 5], {k: 0 for k in FAILURE_REASONS}),
            DominanceResult("b", [], {k: 0 for k in FAILURE_REASONS}, failed=True, error="singular"),
            DominanceResult("c", [9, 9], {k: 0 for k in FAILURE_REASONS})]
    ranked = rank_results(rows)
    assert [r.label for r in ranked] == ["c", "a", "b"]
    assert ranked[0].best and not ranked[2].best
    assert "failed" in report(ranked, "table")


def test_report_table_layout(small_study):
    _, results = small_study
    text = report(results, "table")
    lines = text.splitlines()
    assert lines[0].startswith("Dominance Structure")
    assert "Hits (mean±std)" in lines[0]
    assert set(lines[1]) == {"-"}
    assert len(lines) == 9
    assert lines[2].endswith("best")


def test_report_csv_round_trip(small_study):
    _, results = small_study
    rows = list(csv.DictReader(io.StringIO(report(results, "csv"))))
    assert len(rows) == 7
    for row, r in zip(rows, results):
        assert row["ordering"] == r.label
        assert float(row["mean"]) == r.mean
        assert float(row["std"]) == r.std
        assert int(row["n_trials"]) == len(r.hits)
        assert sum(int(row[k]) for k in FAILURE_REASONS) == len(r.hits)


def test_report_plot_data(small_study):
    _, results = small_study
    doc = json.loads(report(results, "plot-data"))
    assert [o["label"] for o in doc["orderings"]] == [r.label for r in results]
    assert [o["hits"] for o in doc["orderings"]] == [r.hits for r in results]


def test_report_empty_and_unknown():
    assert report([], "csv").strip() == ",".join(
        ["ordering", "mean", "std", "n_trials", "best", "failed", *FAILURE_REASONS])
    assert len(report([], "table").splitlines()) == 2
    with pytest.raises(ValueError):
        report([], "xlsx")


def test_write_and_load_study(small_study, tmp_path):
    cfg, results = small_study
    write_study(results, cfg, tmp_path)
    for name in ("results.json", "report.txt", "report.csv", "hits.json"):
        assert (tmp_path / name).exists()
    meta = json.loads((tmp_path / "results.json").read_text())["metadata"]
    assert meta["n_trials"] == 2 and meta["trial_seeds"] == [5, 6]
    assert meta["note"]
    back = load_study(tmp_path)
    assert report(back, "csv") == report(results, "csv")


def test_parallel_study_matches_serial(small_study):
    cfg, results = small_study
    par = run_dominance_study(small_config(workers=2))
    assert report(par, "csv") == report(results, "csv")


def test_kernel_study_runs():
    cfg = small_config(kernel=True, kernel_subsample=50, n_trials=1, max_time=0.5)
    results = run_dominance_study(cfg)
    assert len(results) == 7
