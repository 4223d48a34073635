"""Command-line pipeline: synth -> graph -> domset -> filter -> eval -> compare.

Every output file is a pure function of the inputs, the config and the seed.
Wall-clock measurements go to ``*.timings.json`` sidecars next to the files
they describe, so the main outputs stay byte-identical across runs.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .config import RunConfig, config_to_dict, load_config
from .domgraph import best_dominating_set, build_graph, graph_from_dict, graph_to_dict, random_baselines
from .errors import InvariantViolation, StaleCacheError, ValidationError
from .evaluation import (
    compare,
    comparison_timings,
    comparison_to_dict,
    evaluate,
    report_from_dict,
    report_to_dict,
    timings_to_dict,
    write_per_query_csv,
)
from .model import filter_by_dominating_set
from .model_io import dumps_canonical, load_model, model_digest, save_native
from .synth import generate_scene, load_queries, scene_to_native_files

log = logging.getLogger("sfm_domset")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3


def _write_json(path: Path, doc: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_canonical(doc) + "\n", encoding="utf-8")


def _read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc.msg} (line {exc.lineno})") from None


def _finite_or_none(doc: Any) -> Any:
    if isinstance(doc, float):
        return doc if math.isfinite(doc) else None
    if isinstance(doc, dict):
        return {k: _finite_or_none(v) for k, v in doc.items()}
    if isinstance(doc, list):
        return [_finite_or_none(v) for v in doc]
    return doc


def timings_path(path: Path) -> Path:
    return path.with_name(path.stem + ".timings.json")


# --- commands ----------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, out_dir: Path) -> None:
    scene = generate_scene(cfg.synth)
    scene_to_native_files(scene, out_dir)
    log.info("wrote %d images, %d points, %d queries to %s",
             scene.model.num_images, scene.model.num_points, len(scene.queries), out_dir)


def cmd_graph(cfg: RunConfig, model_path: Path, out_file: Path, threads: int, force: bool = False) -> None:
    model = load_model(model_path)
    digest = model_digest(model)
    key = cfg.graph_cache_key()
    if out_file.is_file() and not force:
        try:
            cached = _read_json(out_file)
            if cached.get("model_digest") == digest and cached.get("cache_key") == key:
                log.info("graph cache hit for %s, nothing to do", out_file)
                return
        except (ValidationError, AttributeError):
            pass
        log.info("graph cache at %s is stale, rebuilding", out_file)
    graph = build_graph(model, cfg.provider.build(), cfg.estimator, cfg.threshold, cfg.error_mode, threads)
    log.info("graph: %d nodes, %d of %d pairs localizable", len(graph.nodes), graph.num_edges, graph.attempts)
    _write_json(out_file, graph_to_dict(graph, model_digest=digest, cache_key=key, threshold=cfg.threshold,
                                        error_mode=cfg.error_mode, provider=cfg.provider.name, seed=cfg.seed))


def cmd_domset(cfg: RunConfig, graph_file: Path, out_file: Path, random_samples: int | None = None) -> None:
    doc = _read_json(graph_file)
    graph = graph_from_dict(doc)
    result = best_dominating_set(graph, cfg.domset_iterations, cfg.seed)
    count = cfg.random_baselines if random_samples is None else random_samples
    samples = random_baselines(graph, len(result.members), cfg.seed, count) if count else []
    log.info("dominating set of size %d (found at iteration %d of %d)",
             len(result.members), result.best_iteration, result.iterations_run)
    _write_json(out_file, {
        "members": result.sorted_members(),
        "iterations_run": result.iterations_run,
        "seed": result.seed,
        "best_iteration": result.best_iteration,
        "model_digest": doc.get("model_digest"),
        "graph_cache_key": doc.get("cache_key"),
        "random_samples": [{"seed": s, "members": sorted(m)} for s, m in samples],
    })


def cmd_filter(cfg: RunConfig, model_path: Path, domset_file: Path, out_dir: Path, random_index: int | None = None) -> None:
    model = load_model(model_path)
    doc = _read_json(domset_file)
    recorded = doc.get("model_digest")
    actual = model_digest(model)
    if recorded != actual:
        raise StaleCacheError(
            f"{domset_file} was computed for model digest {recorded}, but {model_path} has digest {actual}; "
            f"re-run 'graph' and 'domset' on {model_path} before filtering"
        )
    if random_index is None:
        members = doc["members"]
    else:
        samples = doc.get("random_samples", [])
        if not 0 <= random_index < len(samples):
            raise ValidationError(f"--random-sample {random_index} out of range ({len(samples)} samples in {domset_file})")
        members = samples[random_index]["members"]
    filtered = filter_by_dominating_set(model, members, recompute_bbox=cfg.recompute_bbox)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_native(filtered, out_dir / "model.json")
    log.info("filtered model: %d/%d images, %d/%d points",
             filtered.num_images, model.num_images, filtered.num_points, model.num_points)


def cmd_eval(cfg: RunConfig, model_path: Path, queries_path: Path, out_file: Path, threads: int,
             name: str | None = None, csv_path: Path | None = None) -> None:
    model = load_model(model_path)
    if cfg.bbox is not None:
        model = type(model)(model.points, model.images, cfg.bbox)
    queries = load_queries(queries_path)
    variant = name or model_path.name
    report = evaluate(model, queries, cfg.provider.build(), cfg.estimator, variant, cfg.unit_scale, threads)
    _write_json(out_file, report_to_dict(report))
    _write_json(timings_path(out_file), _finite_or_none(timings_to_dict(report)))
    if csv_path is not None:
        write_per_query_csv(report, csv_path)
    log.info("%s: 5deg-5cm %.3f, ADD-0.1d %.3f", variant, report.success_5deg5cm, report.success_add01d)


def _load_report(path: Path):
    side = timings_path(path)
    timings = _read_json(side) if side.is_file() else None
    return report_from_dict(_read_json(path), timings)


def cmd_compare(full: Path, domset: Path, randoms: Sequence[Path], out_file: Path) -> None:
    result = compare(_load_report(full), _load_report(domset), [_load_report(p) for p in randoms])
    doc = comparison_to_dict(result)
    for v in doc["image_reduction_factor"], doc["point_reduction_factor"]:
        if not v > 0:
            raise InvariantViolation(f"reduction factor {v} is not positive")
    _write_json(out_file, doc)
    _write_json(timings_path(out_file), comparison_timings(result))
    log.info("image reduction %.2fx, point reduction %.2fx",
             result.image_reduction_factor, result.point_reduction_factor)


# --- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sfm-domset", description="Compress SfM models with a dominating set of reference images.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", type=Path, help="run config (JSON, unknown keys rejected)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, default=1, help="cap on worker threads (default 1)")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic scene")
    s.add_argument("out_dir", type=Path)

    s = sub.add_parser("graph", help="build the localizability graph")
    s.add_argument("model", type=Path)
    s.add_argument("out", type=Path)
    s.add_argument("--force", action="store_true", help="rebuild even if the cached graph matches")

    s = sub.add_parser("domset", help="extract a dominating set from a graph")
    s.add_argument("graph", type=Path)
    s.add_argument("out", type=Path)
    s.add_argument("--random-samples", type=int, help="same-size random samples to emit (default: config)")

    s = sub.add_parser("filter", help="keep only the dominating-set images and their points")
    s.add_argument("model", type=Path)
    s.add_argument("domset", type=Path)
    s.add_argument("out_dir", type=Path)
    s.add_argument("--random-sample", type=int, help="use this random sample instead of the dominating set")

    s = sub.add_parser("eval", help="localize the queries against a model")
    s.add_argument("model", type=Path)
    s.add_argument("queries", type=Path)
    s.add_argument("out", type=Path)
    s.add_argument("--name", help="variant name (default: model directory name)")
    s.add_argument("--csv", type=Path, help="also write per-query rows as CSV")

    s = sub.add_parser("compare", help="compare evaluation reports")
    s.add_argument("--full", type=Path, required=True)
    s.add_argument("--domset", type=Path, required=True)
    s.add_argument("--random", type=Path, nargs="*", default=[], help="random-baseline reports")
    s.add_argument("--out", type=Path, required=True)
    return p


def run(args: argparse.Namespace) -> None:
    if args.threads < 1:
        raise ValidationError("--threads: must be >= 1")
    cfg = load_config(args.config, args.seed)
    log.debug("config: %s", config_to_dict(cfg))
    if args.command == "synth":
        cmd_synth(cfg, args.out_dir)
    elif args.command == "graph":
        cmd_graph(cfg, args.model, args.out, args.threads, args.force)
    elif args.command == "domset":
        cmd_domset(cfg, args.graph, args.out, args.random_samples)
    elif args.command == "filter":
        cmd_filter(cfg, args.model, args.domset, args.out_dir, args.random_sample)
    elif args.command == "eval":
        cmd_eval(cfg, args.model, args.queries, args.out, args.threads, args.name, args.csv)
    else:
        cmd_compare(args.full, args.domset, args.random, args.out)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except ValidationError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except Exception as exc:  # anything else is a bug, not bad input
        log.error("internal error: %s", exc, exc_info=True)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
