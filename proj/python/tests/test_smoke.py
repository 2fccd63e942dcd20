import json
import os
import pathlib
import subprocess

import jsonschema
import numpy as np
import pytest

import cuthmm

SOURCE = pathlib.Path(os.environ.get("CUTHMM_SOURCE_DIR", pathlib.Path(__file__).resolve().parents[2]))
CLI = os.environ.get("CUTHMM_CLI")

TINY = {
    "data": {"n": 600, "sizes": [300, 600]},
    "partition": {"levels": [1, 2, 3]},
    "pi1": {"iterations": 400, "burn_in": 100, "thin": 5},
    "pi2": {"levels": {"300": 2, "600": 3}, "C": 2},
    "full": {"sizes": [300], "iterations": 200, "burn_in": 50, "thin": 5},
    "diagnostics": {"reference_level": 1, "information_levels": [1, 2], "em_max_iter": 2000},
    "outputs": {"grid_points": 64},
}

STAGES = ["simulate", "fit-q", "fit-emissions", "fit-full", "spectral", "diagnose"]


def load_schema(name):
    return json.loads((SOURCE / "schema" / name).read_text())


def run_cli(tmp_path, config, *args):
    if CLI is None:
        pytest.skip("CUTHMM_CLI not set")
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return subprocess.run([CLI, "--config", str(path), *args], capture_output=True, text=True)


def test_defaults_match_shipped_config():
    shipped = json.loads((SOURCE / "config" / "study.json").read_text())
    shipped.pop("$schema")
    assert cuthmm.default_config() == shipped


def test_defaults_satisfy_schema():
    jsonschema.validate(cuthmm.default_config(), load_schema("experiment.schema.json"))
    jsonschema.validate(cuthmm.resolve_config(TINY), load_schema("experiment.schema.json"))


def test_bad_configs_raise():
    with pytest.raises(cuthmm.ConfigError):
        cuthmm.resolve_config({"data": {"n": 0}})
    with pytest.raises(cuthmm.ConfigError):
        cuthmm.resolve_config({"pi1": {"iters": 10}})
    assert issubclass(cuthmm.ConfigError, cuthmm.CuthmmError)


def test_hash_ignores_output_directory():
    a = cuthmm.config_hash(TINY)
    b = cuthmm.config_hash({**TINY, "outputs": {**TINY["outputs"], "directory": "elsewhere"}})
    assert a == b and len(a) == 16


def test_sampler_and_spectral_shapes():
    y, x = cuthmm.simulate(np.array([[0.7, 0.3], [0.2, 0.8]]), [-1.0, 1.0], [1.0, 1.0], 500, 3)
    assert len(y) == 500 and set(x) <= {0, 1}
    bins = cuthmm.coarsen(y, 2)
    assert min(bins) >= 0 and max(bins) < 4
    assert len(cuthmm.partition_edges(2)) == 5
    post = cuthmm.sample_transition_posterior(y, 2, iterations=300, burn_in=100, thin=10, seed=5)
    assert post["q"].shape == (20, 2, 2) and post["omega"].shape == (20, 4, 2)
    np.testing.assert_allclose(post["q"].sum(axis=2), 1.0, atol=1e-12)
    np.testing.assert_allclose(post["omega"].sum(axis=1), 1.0, atol=1e-12)
    est = cuthmm.spectral_estimate(y, 3, seed=2)
    assert np.asarray(est["Q_hat"]).shape == (2, 2)


def test_cli_exit_codes(tmp_path):
    bad = run_cli(tmp_path, {"data": {"n": 0}}, "--out", str(tmp_path / "o"), "simulate")
    assert bad.returncode == 2
    ok = run_cli(tmp_path, TINY, "--out", str(tmp_path / "o"), "simulate")
    assert ok.returncode == 0, ok.stderr
    missing = run_cli(tmp_path, TINY, "--out", str(tmp_path / "o"), "fit-emissions")
    assert missing.returncode == 3
    assert "draws.csv" in missing.stderr


def pipeline(root):
    manifests = [cuthmm.run_command(c, TINY, out=str(root)) for c in STAGES]
    return pathlib.Path(cuthmm.run_directory(TINY, out=str(root))), manifests


def test_pipeline_artifacts_and_determinism(tmp_path):
    run_a, manifests = pipeline(tmp_path / "a")
    schema = load_schema("manifest.schema.json")
    for m in manifests:
        jsonschema.validate(m, schema)
        for rel in m["outputs"]:
            assert (run_a / rel).is_file(), rel
        on_disk = json.loads((run_a / "manifests" / f"{m['command']}.json").read_text())
        assert on_disk["outputs"] == m["outputs"]

    store = cuthmm.read_draw_store(str(run_a / "pi1/n600_k8/draws.csv"), str(run_a / "pi1/n600_k8/draws.json"))
    assert store["q"].shape == (60, 2, 2) and store["omega"].shape == (60, 8, 2)
    grid, bands = cuthmm.read_density_bands(str(run_a / "pi2/n600_k8/density_bands.csv"))
    assert len(grid) == 64 and len(bands) == 2
    for b in bands:
        assert np.all(np.asarray(b["lower"]) <= np.asarray(b["upper"]))

    run_b, _ = pipeline(tmp_path / "b")
    assert run_a.name == run_b.name
    files_a = sorted(p.relative_to(run_a) for p in run_a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(run_b) for p in run_b.rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        if rel.name == "config.json":
            continue
        a, b = (run_a / rel).read_text(), (run_b / rel).read_text()
        if rel.parent.name == "manifests":
            a, b = json.loads(a), json.loads(b)
            a.pop("timing"), b.pop("timing")
        assert a == b, rel


def test_bin_tuning_recommends_a_level(tmp_path):
    config = {"data": {"n": 1000, "sizes": [1000]}}
    for c in ["simulate", "fit-q", "diagnose"]:
        cuthmm.run_command(c, config, out=str(tmp_path), scale="smoke")
    run = pathlib.Path(cuthmm.run_directory(config, out=str(tmp_path), scale="smoke"))
    tuning = json.loads((run / "diagnostics/n1000/bin_tuning.json").read_text())
    assert tuning["reference_kappa"] == 4
    assert sorted(int(k) for k in tuning["accepted"]) == [2, 4, 8, 16, 64, 128]
    assert tuning["accepted"]["4"] is True
    assert tuning["accepted"][str(tuning["recommended_kappa"])] is True
