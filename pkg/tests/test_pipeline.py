import json
import shutil

import numpy as np
import pytest
import yaml

from tests.conftest import in_memory
from urbandep import pipeline
from urbandep.cli import main
from urbandep.synth import Planted, SynthConfig, generate_city

EXPECTED = {
    "assignment.json", "ward_scores.csv", "ingest_diagnostics.json",
    "oa_venueService.csv", "oa_venueService.json", "oa_mapService.csv", "oa_mapService.json",
    "baseline.csv", "correlations.csv", "qvalue_quartiles.json", "correlation_strength.json",
    "diagnostics.json", "eval_10bin.json", "eval_10bin.txt", "model_10bin.json",
    "eval_2bin.json", "eval_2bin.txt", "model_2bin.json", "themes.txt", "summary.json",
}


def tree(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_full_run_outputs(city_dir, tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(city_dir / "pipeline.yaml"), "--out", str(out)]) == 0
    files = tree(out)
    assert set(files) == EXPECTED
    cfg_hash = json.loads(files["summary.json"])["meta"]["configHash"]
    for name, body in files.items():
        if name.endswith(".json"):
            assert json.loads(body)["meta"] == {"configHash": cfg_hash, "seed": 0}
        else:
            assert body.startswith(f"# configHash={cfg_hash} seed=0\n".encode())
    truth = json.loads((city_dir / "truth.json").read_text())["planted"]
    selected = {line.split(",")[1] for line in files["correlations.csv"].decode().splitlines()[2:]
                if line.endswith(",true")}
    assert {t["category"] for t in truth} <= selected
    ev = json.loads(files["eval_2bin.json"])
    assert ev["trainSize"] == 30 and ev["testSize"] == 90


def test_reruns_and_workers_are_byte_identical(city_dir, tmp_path):
    cfg = str(city_dir / "pipeline.yaml")
    runs = [tmp_path / n for n in ("a", "b", "c")]
    assert main(["run", cfg, "--out", str(runs[0])]) == 0
    assert main(["run", cfg, "--out", str(runs[1])]) == 0
    assert main(["run", cfg, "--out", str(runs[2]), "--workers", "4"]) == 0
    assert tree(runs[0]) == tree(runs[1]) == tree(runs[2])


def test_seed_changes_outputs(city_dir, tmp_path):
    cfg = str(city_dir / "pipeline.yaml")
    main(["run", cfg, "--out", str(tmp_path / "a")])
    main(["run", cfg, "--out", str(tmp_path / "b"), "--seed", "5"])
    assert tree(tmp_path / "a")["eval_2bin.json"] != tree(tmp_path / "b")["eval_2bin.json"]


def test_missing_input_is_config_error(city_dir, tmp_path, capsys):
    (city_dir / "scores.csv").unlink()
    out = tmp_path / "out"
    assert main(["run", str(city_dir / "pipeline.yaml"), "--out", str(out)]) == 2
    assert "scores.csv" in capsys.readouterr().err
    assert not out.exists()


def test_missing_config_file(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == 2
    assert "nope.yaml" in capsys.readouterr().err


def test_bad_data_is_exit_3_tagged_with_stage(city_dir, tmp_path, capsys):
    (city_dir / "wards.geojson").write_text('{"type": "FeatureCollection", "features": [{"type": "Feature"}]}')
    out = tmp_path / "out"
    assert main(["run", str(city_dir / "pipeline.yaml"), "--out", str(out)]) == 3
    assert "[ingest]" in capsys.readouterr().err
    assert not out.exists()


def test_nothing_selected_is_degeneracy(city_dir, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(city_dir / "pipeline.yaml"), "--out", str(out), "--min-abs-r", "1.1"]) == 4
    assert "[classify]" in capsys.readouterr().err
    assert not out.exists()


def test_unknown_config_key(city_dir, tmp_path):
    raw = yaml.safe_load((city_dir / "pipeline.yaml").read_text())
    raw["bins"] = 4
    (city_dir / "pipeline.yaml").write_text(yaml.safe_dump(raw))
    assert main(["run", str(city_dir / "pipeline.yaml"), "--out", str(tmp_path / "o")]) == 2


def test_stage_commands_and_cache(city_dir, tmp_path):
    cfg, out = str(city_dir / "pipeline.yaml"), tmp_path / "out"
    for cmd in ("ingest", "profile", "correlate", "classify", "report"):
        assert main([cmd, cfg, "--out", str(out)]) == 0, cmd
    names = {p.name for p in out.iterdir()}
    assert EXPECTED - names == {"eval_2bin.json", "eval_2bin.txt", "model_2bin.json"}
    # stage outputs agree with a full run
    full = tmp_path / "full"
    main(["run", cfg, "--out", str(full)])
    for name in names:
        assert (out / name).read_bytes() == (full / name).read_bytes(), name


def test_saved_model_reuse(city_dir, tmp_path):
    cfg, out = str(city_dir / "pipeline.yaml"), tmp_path / "out"
    assert main(["classify", cfg, "--out", str(out), "--bins", "2"]) == 0
    assert main(["classify", cfg, "--out", str(out), "--load-model", str(out / "model_2bin.json")]) == 0
    reuse = json.loads((out / "eval_2bin_reuse.json").read_text())["model"]
    assert np.sum(reuse["confusion"]) == 120  # every ward scored
    assert reuse["accuracy"] > 0.6


def test_themes_file_used(city_dir, tmp_path):
    truth = json.loads((city_dir / "truth.json").read_text())["planted"]
    (city_dir / "themes.yaml").write_text(yaml.safe_dump(
        {"Planted": [["venueService", t["category"]] for t in truth]}))
    raw = yaml.safe_load((city_dir / "pipeline.yaml").read_text())
    raw["themes"] = "themes.yaml"
    (city_dir / "pipeline.yaml").write_text(yaml.safe_dump(raw))
    out = tmp_path / "out"
    assert main(["report", str(city_dir / "pipeline.yaml"), "--out", str(out)]) == 0
    text = (out / "themes.txt").read_text()
    assert "Planted" in text and truth[0]["category"] in text


def test_synth_command(tmp_path):
    out = tmp_path / "city"
    assert main(["synth", "--out", str(out), "--grid", "8x9", "--planted", "1:0.5", "--budget", "3000",
                 "--seed", "4"]) == 0
    truth = json.loads((out / "truth.json").read_text())
    assert truth["config"]["ward_grid"] == [8, 9] and truth["planted"][0]["targetRho"] == 0.5
    assert main(["synth", "--out", str(tmp_path / "bad"), "--grid", "2x2", "--budget", "1"]) == 2


def test_no_test_labels_reach_selection(monkeypatch):
    city = generate_city(SynthConfig(ward_grid=(10, 12), planted=(Planted(1, 0.5),),
                                     poi_budget=120 * 40, seed=3))
    cfg, ing, prof = in_memory(city)
    seen = []
    real = pipeline.spatstat.select_features

    def spy(oa, imd, *args, **kw):
        seen.append(set(imd))
        return real(oa, imd, *args, **kw)

    monkeypatch.setattr(pipeline.spatstat, "select_features", spy)
    res = pipeline.run_classify(cfg, ing, prof, 2)
    assert seen and all(s == set(res.train) for s in seen)


def test_count_determined_baseline():
    precisions = []
    for seed in range(3):
        city = generate_city(SynthConfig(ward_grid=(16, 16), planted=(Planted(1, 0.5),), seed=seed,
                                         count_coupling=0.9, volume_link="rank", volume_noise=0.0,
                                         noise_dispersion=0.0, poi_budget=256 * 1000))
        cfg, ing, prof = in_memory(city)
        cfg.seed = seed
        precisions.append(pipeline.run_classify(cfg, ing, prof, 2).baseline.precision)
    assert np.all(np.mean(precisions, axis=0) >= 0.95)


def test_config_hash_tracks_inputs(city_dir):
    cfg = pipeline.load_config(city_dir / "pipeline.yaml")
    h = cfg.hash()
    cfg.workers = 8
    assert cfg.hash() == h
    cfg.seed = 1
    assert cfg.hash() != h
    cfg.seed = 0
    with open(city_dir / "scores.csv", "a") as f:
        f.write("\n")
    assert cfg.hash() != h
