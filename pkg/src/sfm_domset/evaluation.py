"""Query-set evaluation of a model variant and comparison across variants.

Wall-clock timings are kept apart from the deterministic part of a report:
``report_to_dict`` never contains them, ``timings_to_dict`` holds only them.
"""

from __future__ import annotations

import csv
import hashlib
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence


from .errors import TooFewCorrespondencesError, ValidationError
from .geometry import EstimatorConfig, PoseEstimate, bbox_add_error, geodesic_error, loc_error, ransac_pnp
from .model import SfmModel
from .seeding import sub_seed
from .synth import Query, queries_to_list
from .model_io import dumps_canonical

METRICS = ("success_1deg1cm", "success_3deg3cm", "success_5deg5cm", "success_add01d")
ADD_THRESHOLD = 0.1


@dataclass
class QueryResult:
    query_index: int
    estimate: PoseEstimate
    e_loc: float | None = None
    e_theta: float | None = None
    add_ratio: float | None = None
    match_time: float = 0.0
    pnp_time: float = 0.0
    candidate_comparisons: int = 0
    num_matches: int = 0

    @property
    def converged(self) -> bool:
        return self.estimate.converged


@dataclass
class EvalReport:
    variant_name: str
    num_images: int
    num_points: int
    success_1deg1cm: float
    success_3deg3cm: float
    success_5deg5cm: float
    success_add01d: float
    mean_fps: float
    per_query: list[QueryResult] = field(default_factory=list)
    query_digest: str = ""

    @property
    def total_match_time(self) -> float:
        return sum(r.match_time for r in self.per_query)

    @property
    def total_pnp_time(self) -> float:
        return sum(r.pnp_time for r in self.per_query)

    @property
    def total_candidate_comparisons(self) -> int:
        return sum(r.candidate_comparisons for r in self.per_query)

    def rates(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}


@dataclass
class ComparisonReport:
    image_reduction_factor: float
    point_reduction_factor: float
    speedup_factor: float
    match_speedup_factor: float
    comparison_reduction_factor: float | None
    full: EvalReport
    domset: EvalReport
    random: list[EvalReport]
    domset_vs_random_delta: dict[str, float] | None
    random_mean: dict[str, float] | None
    random_std: dict[str, float] | None


def query_set_digest(queries: Sequence[Query]) -> str:
    return hashlib.sha256(dumps_canonical(queries_to_list(list(queries))).encode("utf-8")).hexdigest()


def estimate_query_pose(
    model: SfmModel, query: Query, provider, estimator: EstimatorConfig, query_index: int = 0
) -> QueryResult:
    """Match one query against ``model`` and solve its pose.

    Provider noise is keyed by ``query_index`` alone, so every model variant
    sees the same perturbed query.  Estimation failures yield an unconverged
    result rather than an exception.
    """
    matches = provider(model, query.view, query.pose_gt, seed_key=(query_index,))
    config = replace(estimator, rng_seed=sub_seed(estimator.rng_seed, query_index))
    start = time.perf_counter()
    try:
        est = ransac_pnp(matches.correspondences, query.view.camera, config)
    except TooFewCorrespondencesError:
        est = PoseEstimate(None, frozenset(), 0, False)
    pnp_time = time.perf_counter() - start
    result = QueryResult(
        query_index,
        est,
        match_time=matches.elapsed,
        pnp_time=pnp_time,
        candidate_comparisons=matches.candidate_comparisons,
        num_matches=len(matches),
    )
    if est.converged:
        result.e_loc = loc_error(query.pose_gt.translation, est.pose.translation)
        result.e_theta = geodesic_error(query.pose_gt.rotation, est.pose.rotation)
        result.add_ratio = bbox_add_error(query.pose_gt, est.pose, model.bbox)
    return result


def success_n_deg_n_cm(result: QueryResult, n_deg: float, n_cm: float, unit_scale: float = 1.0) -> bool:
    """Rotation within ``n_deg`` degrees and location within ``n_cm`` centimetres.

    ``unit_scale`` is scene units per metre.
    """
    if not result.converged or result.e_loc is None or result.e_theta is None:
        return False
    return result.e_loc <= n_cm / 100.0 * unit_scale and result.e_theta <= math.radians(n_deg)


def success_add_01d(result: QueryResult) -> bool:
    if not result.converged or result.add_ratio is None:
        return False
    return result.add_ratio < ADD_THRESHOLD


def _aggregate(variant_name: str, model: SfmModel, results: list[QueryResult], unit_scale: float, digest: str):
    n = len(results)

    def rate(pred) -> float:
        return sum(1 for r in results if pred(r)) / n

    total = sum(r.match_time + r.pnp_time for r in results)
    return EvalReport(
        variant_name,
        model.num_images,
        model.num_points,
        rate(lambda r: success_n_deg_n_cm(r, 1, 1, unit_scale)),
        rate(lambda r: success_n_deg_n_cm(r, 3, 3, unit_scale)),
        rate(lambda r: success_n_deg_n_cm(r, 5, 5, unit_scale)),
        rate(success_add_01d),
        n / total if total > 0 else math.inf,
        results,
        digest,
    )


def evaluate(
    model: SfmModel,
    queries: Sequence[Query],
    provider,
    estimator: EstimatorConfig = EstimatorConfig(),
    variant_name: str = "full",
    unit_scale: float = 1.0,
    workers: int = 1,
    query_digest: str | None = None,
) -> EvalReport:
    if not queries:
        raise ValidationError("evaluation needs at least one query")

    def run(k: int) -> QueryResult:
        return estimate_query_pose(model, queries[k], provider, estimator, k)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(len(queries))))
    else:
        results = [run(k) for k in range(len(queries))]
    digest = query_digest if query_digest is not None else query_set_digest(queries)
    return _aggregate(variant_name, model, results, unit_scale, digest)


def _ratio(num: float, den: float) -> float:
    if den == 0:
        return math.inf if num > 0 else 1.0
    return num / den


def compare(full: EvalReport, domset: EvalReport, random_reports: Sequence[EvalReport] = ()) -> ComparisonReport:
    """Reduction factors, speedups and success-rate gaps between variants."""
    for r in (domset, *random_reports):
        if r.query_digest != full.query_digest or len(r.per_query) != len(full.per_query):
            raise ValidationError(f"report {r.variant_name!r} was evaluated on a different query set")
    if domset.num_images == 0 or domset.num_points == 0:
        raise ValidationError("dominating-set report has an empty model")
    comps = domset.total_candidate_comparisons
    deltas = mean = std = None
    if random_reports:
        mean = {m: statistics.fmean(getattr(r, m) for r in random_reports) for m in METRICS}
        std = {m: statistics.pstdev([getattr(r, m) for r in random_reports]) for m in METRICS}
        deltas = {m: getattr(domset, m) - mean[m] for m in METRICS}
    return ComparisonReport(
        image_reduction_factor=full.num_images / domset.num_images,
        point_reduction_factor=full.num_points / domset.num_points,
        speedup_factor=_ratio(domset.mean_fps, full.mean_fps),
        match_speedup_factor=_ratio(full.total_match_time, domset.total_match_time),
        comparison_reduction_factor=(full.total_candidate_comparisons / comps) if comps else None,
        full=full,
        domset=domset,
        random=list(random_reports),
        domset_vs_random_delta=deltas,
        random_mean=mean,
        random_std=std,
    )


# --- serialization -----------------------------------------------------------------


def _result_to_dict(r: QueryResult) -> dict[str, Any]:
    return {
        "query_index": r.query_index,
        "converged": r.converged,
        "num_matches": r.num_matches,
        "num_iterations": r.estimate.num_iterations_used,
        "inlier_ids": sorted(r.estimate.inlier_ids),
        "e_loc": r.e_loc,
        "e_theta": r.e_theta,
        "e_theta_deg": None if r.e_theta is None else math.degrees(r.e_theta),
        "add_ratio": r.add_ratio,
        "candidate_comparisons": r.candidate_comparisons,
    }


def report_to_dict(report: EvalReport) -> dict[str, Any]:
    """Deterministic content of a report (no wall-clock values)."""
    return {
        "variant_name": report.variant_name,
        "num_images": report.num_images,
        "num_points": report.num_points,
        **report.rates(),
        "total_candidate_comparisons": report.total_candidate_comparisons,
        "query_digest": report.query_digest,
        "per_query": [_result_to_dict(r) for r in report.per_query],
    }


def timings_to_dict(report: EvalReport) -> dict[str, Any]:
    return {
        "variant_name": report.variant_name,
        "pipeline_fps(match+pnp)": report.mean_fps,
        "total_match_s": report.total_match_time,
        "total_pnp_s": report.total_pnp_time,
        "per_query": [
            {"query_index": r.query_index, "match_ms": r.match_time * 1e3, "pnp_ms": r.pnp_time * 1e3}
            for r in report.per_query
        ],
    }


def report_from_dict(doc: dict[str, Any], timings: dict[str, Any] | None = None) -> EvalReport:
    try:
        times = {}
        if timings is not None:
            times = {t["query_index"]: t for t in timings["per_query"]}
        results = []
        for q in doc["per_query"]:
            t = times.get(q["query_index"], {})
            results.append(
                QueryResult(
                    q["query_index"],
                    PoseEstimate(None, frozenset(q.get("inlier_ids", [])), q.get("num_iterations", 0), q["converged"]),
                    q["e_loc"],
                    q["e_theta"],
                    q["add_ratio"],
                    t.get("match_ms", 0.0) / 1e3,
                    t.get("pnp_ms", 0.0) / 1e3,
                    q.get("candidate_comparisons", 0),
                    q.get("num_matches", 0),
                )
            )
        fps = timings["pipeline_fps(match+pnp)"] if timings is not None else math.nan
        return EvalReport(
            doc["variant_name"],
            doc["num_images"],
            doc["num_points"],
            doc["success_1deg1cm"],
            doc["success_3deg3cm"],
            doc["success_5deg5cm"],
            doc["success_add01d"],
            fps,
            results,
            doc.get("query_digest", ""),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed report document: missing or invalid {exc}") from None


def comparison_to_dict(c: ComparisonReport) -> dict[str, Any]:
    """Deterministic part of a comparison; timing-based speedups live in ``comparison_timings``."""
    return {
        "image_reduction_factor": c.image_reduction_factor,
        "point_reduction_factor": c.point_reduction_factor,
        "comparison_reduction_factor": c.comparison_reduction_factor,
        "variants": {
            "full": {"name": c.full.variant_name, "num_images": c.full.num_images, "num_points": c.full.num_points,
                     **c.full.rates()},
            "domset": {"name": c.domset.variant_name, "num_images": c.domset.num_images,
                       "num_points": c.domset.num_points, **c.domset.rates()},
            "random": [
                {"name": r.variant_name, "num_images": r.num_images, "num_points": r.num_points, **r.rates()}
                for r in c.random
            ],
        },
        "domset_vs_random_delta": c.domset_vs_random_delta,
        "random_mean": c.random_mean,
        "random_std": c.random_std,
    }


def comparison_timings(c: ComparisonReport) -> dict[str, Any]:
    def clean(v: float) -> float | None:
        return v if math.isfinite(v) else None

    return {
        "speedup_factor(pipeline_fps)": clean(c.speedup_factor),
        "match_speedup_factor": clean(c.match_speedup_factor),
    }


def write_per_query_csv(report: EvalReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["query_index", "e_loc", "e_theta_deg", "add_ratio", "match_ms", "pnp_ms", "converged"])
        for r in report.per_query:
            w.writerow(
                [
                    r.query_index,
                    "" if r.e_loc is None else repr(r.e_loc),
                    "" if r.e_theta is None else repr(math.degrees(r.e_theta)),
                    "" if r.add_ratio is None else repr(r.add_ratio),
                    f"{r.match_time * 1e3:.6f}",
                    f"{r.pnp_time * 1e3:.6f}",
                    int(r.converged),
                ]
            )
