import csv
import math

import numpy as np
import pytest

from sfm_domset.correspondence import NoiseConfig, OracleProvider, QueryView, make_provider
from sfm_domset.errors import ValidationError
from sfm_domset.evaluation import (
    QueryResult,
    compare,
    comparison_to_dict,
    estimate_query_pose,
    evaluate,
    report_from_dict,
    report_to_dict,
    success_add_01d,
    success_n_deg_n_cm,
    timings_to_dict,
    write_per_query_csv,
)
from sfm_domset.geometry import EstimatorConfig, PoseEstimate, look_at
from sfm_domset.model import Pose, filter_by_dominating_set
from sfm_domset.synth import Query, SynthConfig, generate_scene

OK = PoseEstimate(Pose.identity(), frozenset(), 1, True)
FAILED = PoseEstimate(None, frozenset(), 1, False)


def result(e_loc, e_theta_deg, add=0.0, estimate=OK):
    return QueryResult(0, estimate, e_loc, math.radians(e_theta_deg), add)


@pytest.fixture(scope="module")
def scene():
    cfg = SynthConfig(num_points=200, num_ref_cameras=8, num_query_cameras=12, visibility_fraction=0.6,
                      point_distribution="sphere_surface", max_incidence_deg=75, rng_seed=5)
    return generate_scene(cfg)


def test_success_thresholds():
    assert success_n_deg_n_cm(result(0.005, 0.5), 1, 1)
    r = result(0.02, 0.5)
    assert not success_n_deg_n_cm(r, 1, 1) and success_n_deg_n_cm(r, 3, 3)
    for n in (1, 3, 5):
        assert not success_n_deg_n_cm(QueryResult(0, FAILED), n, n)
    # a scene in millimetres: 5 mm is below 1 cm
    assert success_n_deg_n_cm(result(5.0, 0.5), 1, 1, unit_scale=1000.0)


def test_success_add():
    assert success_add_01d(result(0, 0, 0.05))
    assert not success_add_01d(result(0, 0, 0.2))
    assert not success_add_01d(result(0, 0, 0.1))
    assert not success_add_01d(QueryResult(0, FAILED))


def test_zero_noise_oracle_full_model_is_exact(scene):
    r = estimate_query_pose(scene.model, scene.queries[0], OracleProvider(), EstimatorConfig())
    assert r.converged
    assert r.e_loc < 1e-8 and r.e_theta < 1e-6


def test_empty_match_set_is_failed(scene):
    q = scene.queries[0]
    away = Query(QueryView(q.view.camera), look_at(np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, 2.0])))
    r = estimate_query_pose(scene.model, away, OracleProvider(), EstimatorConfig())
    assert not r.converged and r.num_matches == 0 and r.e_loc is None


def test_evaluate_all_exact(scene):
    rep = evaluate(scene.model, scene.queries, OracleProvider())
    assert rep.rates() == {"success_1deg1cm": 1.0, "success_3deg3cm": 1.0, "success_5deg5cm": 1.0,
                           "success_add01d": 1.0}
    assert rep.num_images == 8 and rep.num_points == scene.model.num_points


def test_evaluate_blind_queries(scene):
    q = scene.queries[0]
    away = Query(QueryView(q.view.camera), look_at(np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, 2.0])))
    rep = evaluate(scene.model, [away, away], OracleProvider())
    assert set(rep.rates().values()) == {0.0}


def test_evaluate_rejects_empty_query_list(scene):
    with pytest.raises(ValidationError):
        evaluate(scene.model, [], OracleProvider())


@pytest.fixture(scope="module")
def noisy_reports(scene):
    provider = make_provider("descriptor-nn", NoiseConfig(1.0, 0.1, 0.0, 3))
    full = evaluate(scene.model, scene.queries, provider, variant_name="full")
    small = filter_by_dominating_set(scene.model, [1, 5])
    dom = evaluate(small, scene.queries, provider, variant_name="domset")
    return full, dom, small


def test_rates_monotone_and_deterministic(scene, noisy_reports):
    full, _, _ = noisy_reports
    assert full.success_1deg1cm <= full.success_3deg3cm <= full.success_5deg5cm
    provider = make_provider("descriptor-nn", NoiseConfig(1.0, 0.1, 0.0, 3))
    again = evaluate(scene.model, scene.queries, provider, variant_name="full", workers=3)
    assert report_to_dict(again) == report_to_dict(full)


def test_candidate_comparisons_linear_in_points(scene, noisy_reports):
    full, dom, small = noisy_reports
    assert small.num_points < scene.model.num_points
    for a, b in zip(full.per_query, dom.per_query):
        assert a.candidate_comparisons * small.num_points == b.candidate_comparisons * scene.model.num_points
        assert b.candidate_comparisons < a.candidate_comparisons or a.candidate_comparisons == 0


def test_compare_factors(noisy_reports):
    full, dom, small = noisy_reports
    c = compare(full, dom, [dom])
    assert c.image_reduction_factor == 4.0
    assert c.point_reduction_factor == full.num_points / small.num_points
    assert c.speedup_factor == dom.mean_fps / full.mean_fps
    assert c.domset_vs_random_delta == {k: 0.0 for k in c.domset_vs_random_delta}


def test_compare_identical_reports_is_unit(noisy_reports):
    full, _, _ = noisy_reports
    c = compare(full, full, [full])
    assert c.image_reduction_factor == c.point_reduction_factor == c.speedup_factor == 1.0
    assert set(c.domset_vs_random_delta.values()) == {0.0}
    assert set(c.random_std.values()) == {0.0}


def test_compare_rejects_different_query_sets(scene, noisy_reports):
    full, _, _ = noisy_reports
    other = evaluate(scene.model, scene.queries[:3], OracleProvider())
    with pytest.raises(ValidationError, match="different query set"):
        compare(full, other)


def test_report_round_trip_and_csv(tmp_path, noisy_reports):
    full, dom, _ = noisy_reports
    doc = report_to_dict(full)
    assert "mean_fps" not in doc and "pipeline_fps(match+pnp)" in timings_to_dict(full)
    back = report_from_dict(doc, timings_to_dict(full))
    assert report_to_dict(back) == doc
    assert back.mean_fps == full.mean_fps
    assert comparison_to_dict(compare(back, report_from_dict(report_to_dict(dom)))) == comparison_to_dict(
        compare(full, dom))
    write_per_query_csv(full, tmp_path / "q.csv")
    with open(tmp_path / "q.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["query_index", "e_loc", "e_theta_deg", "add_ratio", "match_ms", "pnp_ms", "converged"]
    assert len(rows) == len(full.per_query)
