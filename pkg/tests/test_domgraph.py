import itertools
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfm_domset.correspondence import DescriptorProvider, NoiseConfig, OracleProvider, QueryView
from sfm_domset.domgraph import (
    LocalizabilityGraph,
    best_dominating_set,
    build_graph,
    exact_min_dominating_set,
    graph_from_dict,
    graph_to_dict,
    greedy_dominating_set,
    is_dominating,
    random_baselines,
    random_reference_sample,
)
from sfm_domset.errors import UnknownIdError, ValidationError
from sfm_domset.geometry import EstimatorConfig, bbox_add_error, ransac_pnp
from sfm_domset.model import Bbox3, CameraIntrinsics, Point3D, Pose, RefImage, SfmModel, restrict_to_image
from sfm_domset.seeding import sub_seed
from sfm_domset.synth import SynthConfig, generate_scene

SIX_NODE_EDGES = [(1, 2), (1, 3), (2, 4), (3, 4), (4, 5), (4, 6)]


def six_node():
    return LocalizabilityGraph.from_edges(range(1, 7), SIX_NODE_EDGES, symmetric=True)


def complete(n):
    return LocalizabilityGraph.from_edges(range(n), [(u, v) for u in range(n) for v in range(n) if u != v])


def edgeless(n):
    return LocalizabilityGraph.from_edges(range(n), [])


@st.composite
def random_graphs(draw, max_nodes=10):
    n = draw(st.integers(1, max_nodes))
    pairs = [(u, v) for u in range(n) for v in range(n) if u != v]
    mask = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    return LocalizabilityGraph.from_edges(range(n), [p for p, keep in zip(pairs, mask) if keep])


def brute_force_min(graph):
    """Size of the smallest dominating set, by plain subset enumeration."""
    nodes = list(graph.nodes)
    for k in range(len(nodes) + 1):
        for combo in itertools.combinations(nodes, k):
            if is_dominating(graph, combo):
                return k


def test_graph_invariants():
    with pytest.raises(ValidationError):
        LocalizabilityGraph((1, 2), {1: frozenset([1])})
    with pytest.raises(ValidationError):
        LocalizabilityGraph((1, 2), {1: frozenset([3])})


def test_is_dominating_six_node():
    g = six_node()
    assert not is_dominating(g, {4})
    assert is_dominating(g, {1, 4})
    assert is_dominating(g, {3, 4})
    assert not is_dominating(g, set())
    with pytest.raises(UnknownIdError):
        is_dominating(g, {7})


def test_greedy_special_graphs():
    rng = np.random.default_rng(0)
    assert len(greedy_dominating_set(complete(5), rng)) == 1
    assert greedy_dominating_set(edgeless(4), rng) == {0, 1, 2, 3}


def test_greedy_six_node_sizes_between_two_and_four():
    g = six_node()
    sizes = Counter()
    for s in range(300):
        d = greedy_dominating_set(g, np.random.default_rng(s))
        assert is_dominating(g, d)
        sizes[len(d)] += 1
    assert set(sizes) <= {2, 3, 4}
    assert sizes[2] > 0


def test_exact_six_node_lexicographic():
    assert exact_min_dominating_set(six_node()) == {1, 4}


def test_exact_special_graphs():
    assert len(exact_min_dominating_set(complete(6))) == 1
    assert exact_min_dominating_set(edgeless(5)) == set(range(5))
    with pytest.raises(ValidationError):
        exact_min_dominating_set(edgeless(21))


@settings(max_examples=60, deadline=None)
@given(random_graphs())
def test_exact_matches_brute_force(g):
    d = exact_min_dominating_set(g)
    assert is_dominating(g, d)
    assert len(d) == brute_force_min(g)


@settings(max_examples=40, deadline=None)
@given(random_graphs(), st.integers(0, 2**63))
def test_greedy_always_dominates(g, seed):
    assert is_dominating(g, greedy_dominating_set(g, np.random.default_rng(seed)))


def test_best_six_node_100_iterations():
    for seed in range(20):
        d = best_dominating_set(six_node(), 100, seed)
        assert len(d.members) == 2
        assert is_dominating(six_node(), d.members)


def test_best_single_iteration_equals_greedy_with_sub_seed():
    g = six_node()
    d = best_dominating_set(g, 1, 42)
    assert d.members == greedy_dominating_set(g, np.random.default_rng(sub_seed(42, 0)))
    assert d.best_iteration == 0 and d.iterations_run == 1


@settings(max_examples=20, deadline=None)
@given(random_graphs(8), st.integers(0, 1000))
def test_best_is_monotone_in_iterations(g, seed):
    sizes = [len(best_dominating_set(g, k, seed).members) for k in (1, 5, 20, 60)]
    assert sizes == sorted(sizes, reverse=True)


def test_best_deterministic():
    g = complete(4)
    assert best_dominating_set(g, 50, 3) == best_dominating_set(g, 50, 3)
    with pytest.raises(ValidationError):
        best_dominating_set(g, 0)


def test_random_sample():
    g = edgeless(6)
    assert random_reference_sample(g, 6, np.random.default_rng(0)) == set(range(6))
    a = random_reference_sample(g, 1, np.random.default_rng(5))
    assert a == random_reference_sample(g, 1, np.random.default_rng(5))
    with pytest.raises(ValidationError):
        random_reference_sample(g, 0, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        random_reference_sample(g, 7, np.random.default_rng(0))


def test_random_sample_is_uniform():
    # 600 draws of one node from 6: each count ~ Binomial(600, 1/6); 5-sigma band
    g = edgeless(6)
    counts = Counter(next(iter(random_reference_sample(g, 1, np.random.default_rng(s)))) for s in range(600))
    sd = np.sqrt(600 * (1 / 6) * (5 / 6))
    assert all(abs(counts[v] - 100) < 5 * sd for v in range(6))
    distinct = {random_reference_sample(g, 3, np.random.default_rng(s)) for s in range(100)}
    assert len(distinct) > 10


def test_random_baselines_tagged_and_sized():
    out = random_baselines(complete(8), 3, seed=7, count=5)
    assert len(out) == 5 and all(len(m) == 3 for _, m in out)
    assert out == random_baselines(complete(8), 3, seed=7, count=5)
    assert len({s for s, _ in out}) == 5


def test_graph_round_trip():
    g = LocalizabilityGraph((1, 2, 3), {1: frozenset([2]), 2: frozenset([1, 3])}, {(1, 2): 0.01, (2, 1): 0.02, (2, 3): 0.0})
    assert graph_from_dict(graph_to_dict(g)) == g
    with pytest.raises(ValidationError):
        graph_from_dict({"nodes": [1], "edges": [{"from": 5, "to": 1}]})


# --- graph construction -------------------------------------------------------------


@pytest.fixture(scope="module")
def small_scene():
    cfg = SynthConfig(num_points=120, num_ref_cameras=6, visibility_fraction=0.6, num_query_cameras=0, rng_seed=3,
                      point_distribution="sphere_surface", max_incidence_deg=75)
    return generate_scene(cfg)


def test_build_graph_threshold_zero_is_edgeless(small_scene):
    g = build_graph(small_scene.model, OracleProvider(), threshold=0.0)
    assert g.num_edges == 0
    assert g.attempts == 6 * 5


def test_build_graph_zero_noise_ring_is_complete():
    scene = generate_scene(SynthConfig(num_points=200, num_ref_cameras=6, num_query_cameras=0, rng_seed=1))
    g = build_graph(scene.model, OracleProvider())
    assert g.num_edges == 30
    assert max(g.edge_metadata.values()) < 1e-9


def test_build_graph_disjoint_views_edgeless():
    cam = CameraIntrinsics(100, 100, 50, 50, 100, 100)
    rng = np.random.default_rng(0)
    pts, images = {}, {}
    for i in (1, 2):
        pose = Pose(np.eye(3), [-3.0 * i, 0.0, 0.0])
        kps, pid0 = [], 100 * i
        for k in range(10):
            X = np.array([3.0 * i, 0.0, 4.0]) + rng.uniform(-0.5, 0.5, 3)
            uv = cam.K @ (X + pose.translation)
            kps.append(uv[:2] / uv[2])
            pts[pid0 + k] = Point3D(pid0 + k, X, [(i, k)])
        images[i] = RefImage(i, cam, pose, kps)
    model = SfmModel(pts, images, Bbox3.from_points(np.array([p.position for p in pts.values()])))
    assert build_graph(model, OracleProvider()).num_edges == 0


def test_build_graph_edges_reverify(small_scene):
    model = small_scene.model
    provider = DescriptorProvider(NoiseConfig(1.0, 0.1, 0.0, 4))
    est = EstimatorConfig(rng_seed=2)
    g = build_graph(model, provider, est, 0.05)
    assert g.num_edges > 0
    for (i, j), ratio in g.edge_metadata.items():
        assert ratio < 0.05
        # independent recomputation of one pair
        q = model.images[j]
        ms = provider(restrict_to_image(model, i), QueryView.from_image(q), q.pose, seed_key=(i, j))
        pose = ransac_pnp(ms.correspondences, q.camera, replace(est, rng_seed=sub_seed(2, i, j))).pose
        assert bbox_add_error(q.pose, pose, model.bbox) == ratio
    assert build_graph(model, provider, est, 0.05, workers=3) == g


def test_build_graph_translation_mode(small_scene):
    g = build_graph(small_scene.model, OracleProvider(), error_mode="translation")
    assert g.num_edges > 0
    with pytest.raises(ValidationError):
        build_graph(small_scene.model, OracleProvider(), error_mode="median")
