import hashlib
import json
import shutil
from pathlib import Path

import pytest

from sfm_domset.cli import main
from sfm_domset.config import config_from_dict, config_to_dict, load_config
from sfm_domset.errors import ValidationError
from sfm_domset.model_io import load_model, save_reconstruction_text

SMOKE = Path(__file__).parent / "fixtures" / "smoke_config.json"


def run(*args):
    return main([str(a) for a in args])


def digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --- config -------------------------------------------------------------------------


def test_default_config():
    cfg = load_config(None)
    assert cfg.threshold == 0.05 and cfg.domset_iterations == 1000
    assert cfg.provider.name == "descriptor-nn"


def test_unknown_keys_rejected_at_every_level():
    with pytest.raises(ValidationError, match="treshold: unknown key"):
        config_from_dict({"treshold": 0.1})
    with pytest.raises(ValidationError, match="provider.noise.sigma: unknown key"):
        config_from_dict({"provider": {"noise": {"sigma": 1}}})
    with pytest.raises(ValidationError, match="synth.num_point: unknown key"):
        config_from_dict({"synth": {"num_point": 10}})


def test_type_errors_are_field_level():
    with pytest.raises(ValidationError, match="threshold: expected float"):
        config_from_dict({"threshold": "0.05"})
    with pytest.raises(ValidationError, match="domset_iterations: expected int"):
        config_from_dict({"domset_iterations": 1.5})
    with pytest.raises(ValidationError, match="estimator.min_correspondences: expected int"):
        config_from_dict({"estimator": {"min_correspondences": True}})


def test_seed_inheritance_and_override():
    cfg = config_from_dict({"seed": 11, "estimator": {"rng_seed": 2}})
    assert cfg.synth.rng_seed == 11 and cfg.provider.noise.rng_seed == 11 and cfg.estimator.rng_seed == 2
    assert config_from_dict({"seed": 11}, seed_override=5).synth.rng_seed == 5


def test_cache_key_tracks_graph_settings():
    a = config_from_dict({})
    assert a.graph_cache_key() == config_from_dict({"domset_iterations": 5}).graph_cache_key()
    assert a.graph_cache_key() != config_from_dict({"threshold": 0.1}).graph_cache_key()
    assert a.graph_cache_key() != config_from_dict({"provider": {"name": "oracle"}}).graph_cache_key()


def test_config_round_trip():
    cfg = load_config(SMOKE)
    assert config_from_dict(config_to_dict(cfg)) == cfg


# --- commands -------------------------------------------------------------------------


def pipeline(out: Path, config: Path = SMOKE) -> list[Path]:
    """Run every command once; return the deterministic output files."""
    c = ["--config", config]
    assert run(*c, "synth", out / "scene") == 0
    assert run(*c, "graph", out / "scene", out / "graph.json") == 0
    assert run(*c, "domset", out / "graph.json", out / "domset.json") == 0
    assert run(*c, "filter", out / "scene", out / "domset.json", out / "filtered") == 0
    assert run(*c, "filter", out / "scene", out / "domset.json", out / "random0", "--random-sample", 0) == 0
    q = out / "scene" / "queries.json"
    assert run(*c, "eval", out / "scene", q, out / "full.json", "--name", "full", "--csv", out / "full.csv") == 0
    assert run(*c, "eval", out / "filtered", q, out / "domset_report.json", "--name", "domset") == 0
    assert run(*c, "eval", out / "random0", q, out / "random0.json", "--name", "random0") == 0
    assert run(*c, "compare", "--full", out / "full.json", "--domset", out / "domset_report.json",
               "--random", out / "random0.json", "--out", out / "comparison.json") == 0
    return [out / "scene" / "model.json", q, out / "graph.json", out / "domset.json", out / "filtered" / "model.json",
            out / "random0" / "model.json", out / "full.json", out / "domset_report.json", out / "random0.json",
            out / "comparison.json"]


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return out, pipeline(out)


def test_pipeline_smoke(smoke_run):
    out, files = smoke_run
    assert all(f.is_file() for f in files)
    cmp = json.loads((out / "comparison.json").read_text())
    assert cmp["image_reduction_factor"] >= 1 and cmp["point_reduction_factor"] >= 1
    assert (out / "full.timings.json").is_file() and (out / "comparison.timings.json").is_file()
    dom = json.loads((out / "domset.json").read_text())
    assert len(dom["random_samples"]) == 3
    assert all(len(s["members"]) == len(dom["members"]) for s in dom["random_samples"])


def test_pipeline_is_byte_identical(smoke_run, tmp_path):
    _, first = smoke_run
    second = pipeline(tmp_path)
    assert [digest(f) for f in first] == [digest(f) for f in second]


def test_graph_cache_hit_and_invalidation(smoke_run, tmp_path, caplog):
    out, _ = smoke_run
    before = (out / "graph.json").read_bytes()
    with caplog.at_level("INFO"):
        assert run("--config", SMOKE, "--log-level", "INFO", "graph", out / "scene", out / "graph.json") == 0
    assert "cache hit" in caplog.text
    assert (out / "graph.json").read_bytes() == before

    cfg = json.loads(SMOKE.read_text())
    cfg["threshold"] = 0.02
    other = tmp_path / "cfg.json"
    other.write_text(json.dumps(cfg))
    shutil.copy(out / "graph.json", tmp_path / "graph.json")
    assert run("--config", other, "graph", out / "scene", tmp_path / "graph.json") == 0
    assert json.loads((tmp_path / "graph.json").read_text())["threshold"] == 0.02


def test_filter_refuses_stale_domset(smoke_run, caplog):
    out, _ = smoke_run
    code = run("--config", SMOKE, "filter", out / "filtered", out / "domset.json", out / "never")
    assert code == 1
    assert "re-run 'graph' and 'domset'" in caplog.text
    assert not (out / "never").exists()


def test_eval_text_input_matches_native(smoke_run, tmp_path):
    out, _ = smoke_run
    cfg = json.loads(SMOKE.read_text())
    cfg["provider"]["name"] = "oracle"  # the text format carries no descriptors
    oracle = tmp_path / "oracle.json"
    oracle.write_text(json.dumps(cfg))
    text_dir = tmp_path / "text"
    save_reconstruction_text(load_model(out / "scene"), text_dir)
    q = out / "scene" / "queries.json"
    assert run("--config", oracle, "eval", out / "scene", q, tmp_path / "a.json", "--name", "m") == 0
    assert run("--config", oracle, "eval", text_dir, q, tmp_path / "b.json", "--name", "m") == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_synth_default_config_is_loadable(tmp_path):
    assert run("synth", tmp_path / "s") == 0
    model = load_model(tmp_path / "s")
    assert model.num_images == 36 and model.num_points == 500


def test_exit_codes(tmp_path, caplog):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"synth": {"num_points": 4}}))
    assert run("--config", bad, "synth", tmp_path / "x") == 1
    assert "num_points: must be >= 8 (got 4)" in caplog.text
    assert run("--config", tmp_path / "missing.json", "synth", tmp_path / "x") == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run("synth", blocker / "sub") == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert run("--config", broken, "synth", tmp_path / "x") == 1
    assert run("--threads", 0, "synth", tmp_path / "x") == 1


def test_internal_errors_exit_three(tmp_path, monkeypatch):
    import sfm_domset.cli as cli
    from sfm_domset.errors import InvariantViolation

    def broken(*_):
        raise InvariantViolation("factor must be positive")

    monkeypatch.setattr(cli, "cmd_synth", broken)
    assert run("synth", tmp_path / "x") == 3
