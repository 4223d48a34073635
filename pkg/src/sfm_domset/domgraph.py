"""Localizability graph over reference images and dominating sets on it.

An edge ``u -> v`` means: using only the points observed by image ``u``, the
pose of image ``v`` (treated as a query) is recovered within the error
threshold.  A dominating set then keeps a few images that can stand in for
all the others.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Any, Iterable, Mapping

import numpy as np

from .correspondence import QueryView
from .errors import TooFewCorrespondencesError, UnknownIdError, ValidationError
from .geometry import EstimatorConfig, bbox_add_error, ransac_pnp, translation_ratio_error
from .model import SfmModel, restrict_to_image
from .seeding import make_rng, sub_seed

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.05
EXACT_NODE_CAP = 20
ERROR_MODES = ("bbox_corners", "translation")


@dataclass(frozen=True, eq=False)
class LocalizabilityGraph:
    nodes: tuple[int, ...]
    edges: Mapping[int, frozenset[int]]
    edge_metadata: Mapping[tuple[int, int], float] = field(default_factory=dict)
    attempts: int = 0

    def __post_init__(self) -> None:
        nodes = tuple(int(n) for n in self.nodes)
        if len(set(nodes)) != len(nodes):
            raise ValidationError("graph nodes must be unique")
        node_set = set(nodes)
        edges = {n: frozenset() for n in nodes}
        for u, outs in dict(self.edges).items():
            if u not in node_set:
                raise ValidationError(f"edge source {u} is not a graph node")
            outs = frozenset(int(v) for v in outs)
            if u in outs:
                raise ValidationError(f"self-edge on node {u}")
            missing = outs - node_set
            if missing:
                raise ValidationError(f"edge targets {sorted(missing)} are not graph nodes")
            edges[u] = outs
        meta = {(int(u), int(v)): float(r) for (u, v), r in dict(self.edge_metadata).items()}
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", MappingProxyType(edges))
        object.__setattr__(self, "edge_metadata", MappingProxyType(meta))

    @classmethod
    def from_edges(cls, nodes: Iterable[int], edges: Iterable[tuple[int, int]], symmetric: bool = False):
        adj: dict[int, set[int]] = {int(n): set() for n in nodes}
        for u, v in edges:
            adj[u].add(v)
            if symmetric:
                adj[v].add(u)
        return cls(tuple(adj), {u: frozenset(vs) for u, vs in adj.items()})

    def out_neighbors(self, u: int) -> frozenset[int]:
        return self.edges[u]

    @property
    def num_edges(self) -> int:
        return sum(len(v) for v in self.edges.values())

    def edge_list(self) -> list[tuple[int, int]]:
        return sorted((u, v) for u, vs in self.edges.items() for v in vs)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LocalizabilityGraph):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and dict(self.edges) == dict(other.edges)
            and dict(self.edge_metadata) == dict(other.edge_metadata)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class DominatingSet:
    members: frozenset[int]
    iterations_run: int
    seed: int
    best_iteration: int

    def sorted_members(self) -> list[int]:
        return sorted(self.members)


# --- graph construction ----------------------------------------------------


def pair_error(model: SfmModel, sub_model: SfmModel, ref_id: int, query_id: int, provider,
               estimator: EstimatorConfig, error_mode: str = "bbox_corners") -> float | None:
    """Error ratio achieved localizing ``query_id`` against ``sub_model``; None on failure."""
    query = model.images[query_id]
    matches = provider(sub_model, QueryView.from_image(query), query.pose, seed_key=(ref_id, query_id))
    config = replace(estimator, rng_seed=sub_seed(estimator.rng_seed, ref_id, query_id))
    try:
        est = ransac_pnp(matches.correspondences, query.camera, config)
    except TooFewCorrespondencesError:
        log.debug("pair %s->%s: %d matches, too few", ref_id, query_id, len(matches))
        return None
    if not est.converged:
        log.debug("pair %s->%s: no consensus", ref_id, query_id)
        return None
    measure = bbox_add_error if error_mode == "bbox_corners" else translation_ratio_error
    return measure(query.pose, est.pose, model.bbox)


def build_graph(
    model: SfmModel,
    provider,
    estimator: EstimatorConfig = EstimatorConfig(),
    threshold: float = DEFAULT_THRESHOLD,
    error_mode: str = "bbox_corners",
    workers: int = 1,
) -> LocalizabilityGraph:
    """Try every ordered pair of images; keep ``i -> j`` when the ratio is below ``threshold``."""
    if model.num_images == 0:
        raise ValidationError("cannot build a graph over a model without images")
    if threshold < 0:
        raise ValidationError("threshold must be >= 0")
    if error_mode not in ERROR_MODES:
        raise ValidationError(f"unknown error_mode {error_mode!r}")
    ids = list(model.images)
    subs = {i: restrict_to_image(model, i) for i in ids}
    pairs = [(i, j) for i in ids for j in ids if i != j]

    def run(pair):
        i, j = pair
        return pair, pair_error(model, subs[i], i, j, provider, estimator, error_mode)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(run, pairs))
    else:
        results = dict(map(run, pairs))

    edges: dict[int, set[int]] = {i: set() for i in ids}
    meta = {}
    for (i, j), ratio in sorted(results.items()):
        if ratio is not None and ratio < threshold:
            edges[i].add(j)
            meta[(i, j)] = ratio
    return LocalizabilityGraph(tuple(ids), {u: frozenset(v) for u, v in edges.items()}, meta, len(pairs))


# --- dominating sets -------------------------------------------------------


def is_dominating(graph: LocalizabilityGraph, candidate: Iterable[int]) -> bool:
    """True iff every node is in ``candidate`` or an out-neighbour of a member."""
    cand = set(candidate)
    unknown = cand - set(graph.nodes)
    if unknown:
        raise UnknownIdError(f"candidate contains unknown nodes {sorted(unknown)}")
    covered = set(cand)
    for u in cand:
        covered |= graph.edges[u]
    return covered >= set(graph.nodes)


def greedy_dominating_set(graph: LocalizabilityGraph, rng: np.random.Generator) -> frozenset[int]:
    """Randomized greedy: pick a random uncovered node, drop it and its out-neighbours, repeat."""
    remaining = list(graph.nodes)
    chosen = []
    while remaining:
        u = remaining[int(rng.integers(len(remaining)))]
        chosen.append(u)
        covered = graph.edges[u]
        remaining = [x for x in remaining if x != u and x not in covered]
    return frozenset(chosen)


def best_dominating_set(graph: LocalizabilityGraph, iterations: int = 1000, seed: int = 0) -> DominatingSet:
    """Smallest set over ``iterations`` greedy runs; run ``k`` uses ``sub_seed(seed, k)``.

    Ties keep the earliest run, so results for ``K`` iterations are a prefix
    of those for ``K + 1``.
    """
    if iterations < 1:
        raise ValidationError("iterations must be >= 1")
    best: frozenset[int] | None = None
    best_k = -1
    for k in range(iterations):
        d = greedy_dominating_set(graph, np.random.default_rng(sub_seed(seed, k)))
        if best is None or len(d) < len(best):
            best, best_k = d, k
    return DominatingSet(best if best is not None else frozenset(), iterations, seed, best_k)


def exact_min_dominating_set(graph: LocalizabilityGraph) -> frozenset[int]:
    """Exhaustive smallest-first search; among minimum sets, the lexicographically smallest."""
    nodes = sorted(graph.nodes)
    n = len(nodes)
    if n > EXACT_NODE_CAP:
        raise ValidationError(f"exact search is capped at {EXACT_NODE_CAP} nodes, graph has {n}")
    if n == 0:
        return frozenset()
    index = {v: k for k, v in enumerate(nodes)}
    cover = []
    for v in nodes:
        mask = 1 << index[v]
        for w in graph.edges[v]:
            mask |= 1 << index[w]
        cover.append(mask)
    full = (1 << n) - 1
    sizes = sorted((bin(c).count("1") for c in cover), reverse=True)
    for k in range(1, n + 1):
        if sum(sizes[:k]) < n:
            continue
        for combo in itertools.combinations(range(n), k):
            mask = 0
            for c in combo:
                mask |= cover[c]
            if mask == full:
                return frozenset(nodes[c] for c in combo)
    raise AssertionError("unreachable: the full node set always dominates")


def random_reference_sample(graph: LocalizabilityGraph, k: int, rng: np.random.Generator) -> frozenset[int]:
    """Uniform sample of ``k`` distinct nodes (the random-sampling baseline)."""
    nodes = sorted(graph.nodes)
    if not 1 <= k <= len(nodes):
        raise ValidationError(f"sample size {k} outside [1, {len(nodes)}]")
    return frozenset(int(v) for v in rng.choice(nodes, size=k, replace=False))


def random_baselines(graph: LocalizabilityGraph, k: int, seed: int, count: int) -> list[tuple[int, frozenset[int]]]:
    """``count`` independent same-size samples, each tagged with the seed that drew it."""
    out = []
    for r in range(count):
        s = sub_seed(seed, 1 << 32, r)
        out.append((s, random_reference_sample(graph, k, make_rng(s))))
    return out


# --- serialization ---------------------------------------------------------


def graph_to_dict(graph: LocalizabilityGraph, **meta: Any) -> dict[str, Any]:
    doc = {
        "nodes": list(graph.nodes),
        "edges": [{"from": u, "to": v, "error_ratio": graph.edge_metadata.get((u, v))} for u, v in graph.edge_list()],
        "attempts": graph.attempts,
    }
    doc.update(meta)
    return doc


def graph_from_dict(doc: Mapping[str, Any]) -> LocalizabilityGraph:
    try:
        nodes = [int(n) for n in doc["nodes"]]
        adj: dict[int, set[int]] = {n: set() for n in nodes}
        meta = {}
        for e in doc["edges"]:
            u, v = int(e["from"]), int(e["to"])
            if u not in adj:
                raise ValidationError(f"edge source {u} is not a graph node")
            adj[u].add(v)
            if e.get("error_ratio") is not None:
                meta[(u, v)] = float(e["error_ratio"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed graph document: {exc}") from None
    return LocalizabilityGraph(tuple(nodes), {u: frozenset(v) for u, v in adj.items()}, meta, int(doc.get("attempts", 0)))
