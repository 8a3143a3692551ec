"""Command-line frontend: configs, artifacts, exit codes, determinism."""

import json
import os

import numpy as np
import pytest

from otpost.cli import EXIT_CONFIG, EXIT_OK, main


def write_config(tmp_path, doc, name="cfg.json"):
    path = os.path.join(tmp_path, name)
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return path


def affine_config(tmp_path, out="out"):
    return write_config(
        tmp_path,
        {
            "target": {"kind": "std_normal", "params": {"dim": 2}},
            "map": {"family": "affine"},
            "train": {"max_iters": 120, "learning_rate": 0.02, "seed": 3},
            "out_dir": os.path.join(tmp_path, out),
        },
        name=f"cfg_{out}.json",
    )


def test_train_affine_minimal_config(tmp_path):
    cfg = affine_config(tmp_path)
    assert main(["train", "--config", cfg]) == EXIT_OK
    out = os.path.join(tmp_path, "out")
    with open(os.path.join(out, "map.json")) as fh:
        doc = json.load(fh)
    assert doc["family"] == "affine"
    assert len(doc["m"]) == 2
    assert os.path.exists(os.path.join(out, "report.json"))


def test_train_missing_target_kind_exits_2(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        {"target": {}, "map": {"family": "affine"}, "out_dir": str(tmp_path)},
    )
    assert main(["train", "--config", cfg]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "kind" in err and "target" in err


def test_train_invalid_json_exits_2(tmp_path, capsys):
    path = os.path.join(tmp_path, "broken.json")
    with open(path, "w") as fh:
        fh.write("{not json")
    assert main(["train", "--config", path]) == EXIT_CONFIG
    assert "invalid JSON" in capsys.readouterr().err


def test_train_rerun_is_byte_identical(tmp_path):
    cfg1 = affine_config(tmp_path, out="r1")
    cfg2 = affine_config(tmp_path, out="r2")
    assert main(["train", "--config", cfg1]) == EXIT_OK
    assert main(["train", "--config", cfg2]) == EXIT_OK
    with open(os.path.join(tmp_path, "r1", "report.json")) as fh:
        rep1 = json.load(fh)
    with open(os.path.join(tmp_path, "r2", "report.json")) as fh:
        rep2 = json.load(fh)
    assert rep1["objective_trace"] == rep2["objective_trace"]
    with open(os.path.join(tmp_path, "r1", "map.json")) as fh:
        m1 = fh.read()
    with open(os.path.join(tmp_path, "r2", "map.json")) as fh:
        m2 = fh.read()
    assert m1 == m2


@pytest.fixture()
def trained_map(tmp_path):
    cfg = affine_config(tmp_path)
    assert main(["train", "--config", cfg]) == EXIT_OK
    return os.path.join(tmp_path, "out", "map.json")


def test_sample_and_metrics_round_trip(tmp_path, trained_map):
    s1 = os.path.join(tmp_path, "s1.csv")
    s2 = os.path.join(tmp_path, "s2.csv")
    assert main(["sample", "--map", trained_map, "--n", "150", "--seed", "4", "--out", s1]) == EXIT_OK
    assert main(["sample", "--map", trained_map, "--n", "150", "--seed", "4", "--out", s2]) == EXIT_OK
    out = os.path.join(tmp_path, "m.json")
    assert main(["metrics", "--metric", "w2", "--a", s1, "--b", s2, "--out", out]) == EXIT_OK
    with open(out) as fh:
        doc = json.load(fh)
    assert doc["metric"] == "w2"
    assert doc["value"] <= 1e-7
    assert doc["n"] == 150


def test_metrics_w2eps_requires_epsilon(tmp_path, trained_map, capsys):
    s1 = os.path.join(tmp_path, "s.csv")
    main(["sample", "--map", trained_map, "--n", "50", "--seed", "1", "--out", s1])
    assert main(["metrics", "--metric", "w2eps", "--a", s1, "--b", s1]) == EXIT_CONFIG
    assert "epsilon" in capsys.readouterr().err


def test_quantiles_emits_three_contours_and_svg(tmp_path, trained_map):
    qdir = os.path.join(tmp_path, "q")
    assert main([
        "quantiles", "--map", trained_map, "--q", "0.2", "--q", "0.5", "--q", "0.9",
        "--out-dir", qdir,
    ]) == EXIT_OK
    for q in ("0.2", "0.5", "0.9"):
        assert os.path.exists(os.path.join(qdir, f"contour_{q}.csv"))
    svg = os.path.join(qdir, "contours.svg")
    assert os.path.exists(svg)
    import xml.etree.ElementTree as ET

    ET.parse(svg)  # valid XML


def test_invert_reports_rank_and_pvalue(tmp_path, trained_map, capsys):
    assert main(["invert", "--map", trained_map, "--theta0", "0.0,0.0"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert set(doc) >= {"preimage", "radius", "rank_level", "pvalue"}
    assert 0.0 <= doc["rank_level"] <= 1.0


def test_invert_dimension_mismatch_exits_2(tmp_path, trained_map):
    assert main(["invert", "--map", trained_map, "--theta0", "0,0,0"]) == EXIT_CONFIG


def test_reference_mixture_csv(tmp_path):
    out = os.path.join(tmp_path, "ref.csv")
    assert main([
        "reference", "--kind", "mixture", "--d", "2", "--K", "2", "--n", "200",
        "--seed", "5", "--out", out,
    ]) == EXIT_OK
    from otpost.samples import SampleMatrix

    s = SampleMatrix.from_csv(out)
    assert s.data.shape == (200, 2)


def test_unknown_experiment_exits_2(tmp_path):
    assert main([
        "experiment", "--name", "bogus", "--out-dir", str(tmp_path)
    ]) == EXIT_CONFIG


def test_maxpot_training_via_cli(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "target": {"kind": "two_ball"},
            "map": {"family": "maxpot", "L": 2, "M": 4, "seed": 2},
            "train": {
                "max_iters": 60, "learning_rate": 0.005, "batch_size": 64,
                "seed": 2,
                "sinkhorn": {"n_target_samples": 64, "init_steps": 5},
            },
            "out_dir": os.path.join(tmp_path, "mp"),
        },
    )
    assert main(["train", "--config", cfg]) == EXIT_OK
    with open(os.path.join(tmp_path, "mp", "map.json")) as fh:
        doc = json.load(fh)
    assert doc["family"] == "maxpot"
    assert doc["L"] == 2


def test_semidiscrete_training_via_cli(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "target": {
                "kind": "discrete_mixture",
                "params": {
                    "weights": [0.5, 0.5],
                    "means": [[-2.0], [2.0]],
                    "sds": [[1.0], [1.0]],
                },
            },
            "map": {"family": "semidiscrete", "M": 3, "seed": 1},
            "train": {"max_iters": 40, "learning_rate": 0.005, "batch_size": 32, "seed": 1},
            "out_dir": os.path.join(tmp_path, "sd"),
        },
    )
    assert main(["train", "--config", cfg]) == EXIT_OK
    map_path = os.path.join(tmp_path, "sd", "map.json")
    out = os.path.join(tmp_path, "sd.csv")
    assert main(["sample", "--map", map_path, "--n", "20", "--seed", "2", "--out", out]) == EXIT_OK
    from otpost.samples import SampleMatrix

    s = SampleMatrix.from_csv(out)
    assert s.columns[0] == "tau_0"
