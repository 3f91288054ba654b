import csv
import json

import numpy as np
import pytest

from faqtor.cli import main
from faqtor.gallery import build_gallery, chain2d
from faqtor.mdp_core import save_mdp


def test_gallery_passes(capsys):
    assert main(["gallery"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "fixtures pass" in out


def test_gallery_filter(capsys):
    assert main(["gallery", "--fixture", "chain1d", "--fixture", "five_state_shared"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[-1] == "2/2 fixtures pass"


def test_gallery_unknown_fixture():
    assert main(["gallery", "--fixture", "nope"]) == 2


def test_unknown_subcommand_and_bad_flag():
    assert main(["frobnicate"]) == 2
    assert main(["gallery", "--tol", "abc"]) == 2


@pytest.fixture
def chain_files(tmp_path):
    mdp_path = tmp_path / "mdp.json"
    save_mdp(chain2d(), mdp_path)
    phi = tmp_path / "phi.json"
    phi.write_text(json.dumps({"maps": [[0, 0, 1, 1], [0, 1, 0, 1]], "cardinalities": [2, 2]}))
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"actions": [3, 3, 3, 3]}))
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"actions": [0, 3, 3, 3]}))
    return mdp_path, phi, good, bad


def test_check_guaranteed(chain_files, capsys):
    mdp, phi, good, _ = chain_files
    assert main(["check", str(mdp), str(phi), "--policy", str(good)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["decomposable"] is True
    assert max(doc["residuals"]) < 1e-8


def test_check_non_factored_policy_fails(chain_files, capsys):
    mdp, phi, _, bad = chain_files
    assert main(["check", str(mdp), str(phi), "--policy", str(bad)]) == 1


def test_check_without_policy(chain_files, capsys):
    mdp, phi, _, _ = chain_files
    assert main(["check", str(mdp), str(phi)]) == 0
    assert json.loads(capsys.readouterr().out)["verdict"] == "conditions hold"


def test_check_bad_inputs(chain_files, tmp_path):
    mdp, phi, _, _ = chain_files
    assert main(["check", str(tmp_path / "missing.json"), str(phi)]) == 2
    garbage = tmp_path / "g.json"
    garbage.write_text("{not json")
    assert main(["check", str(mdp), str(garbage)]) == 2
    wrong = tmp_path / "w.json"
    wrong.write_text(json.dumps({"maps": [[0, 1, 0]], "cardinalities": [2]}))
    assert main(["check", str(mdp), str(wrong)]) == 2


def test_decompose_stdout(chain_files, capsys):
    mdp, _, good, _ = chain_files
    assert main(["decompose", str(mdp), str(good)]) == 0
    cap = capsys.readouterr()
    rows = list(csv.reader(cap.out.splitlines()))
    assert rows[0] == ["state", "residual", "decomposable"]
    assert len(rows) == 5
    assert "verdict: decomposable" in cap.err


def test_decompose_writes_file_and_reports_failure(tmp_path, capsys):
    fx = build_gallery()["reward_violation"]
    path = tmp_path / "rv.json"
    save_mdp(fx.mdp, path)
    pol = tmp_path / "p.json"
    pol.write_text(json.dumps({"actions": fx.policy.greedy_actions().tolist()}))
    assert main(["decompose", str(path), str(pol), "--out-dir", str(tmp_path / "o")]) == 1
    assert (tmp_path / "o" / "decomposition.csv").exists()
    assert "not decomposable" in capsys.readouterr().err


def test_bandit_heatmap(tmp_path):
    out_csv = tmp_path / "h.csv"
    stem = tmp_path / "fig"
    assert main(["bandit-heatmap", "--out-dir", str(tmp_path), "--out-csv", str(out_csv), "--out-svg", str(stem)]) == 0
    rows = list(csv.reader(open(out_csv)))
    assert rows[0] == ["alpha", "beta", "rmse", "suboptimality"]
    body = np.array(rows[1:], dtype=float)
    assert len(body) == 161 * 161
    zero_beta = body[:, 1] == 0.0
    assert zero_beta.sum() == 161
    assert np.all(body[zero_beta, 2] == 0.0)
    assert np.all(body[~zero_beta, 2] > 1e-12)
    for kind in ("rmse", "suboptimality"):
        assert (tmp_path / f"fig_{kind}.svg").read_text().count("<rect ") == 161 * 161


def test_bandit_heatmap_small_grid(tmp_path):
    assert main(["bandit-heatmap", "--steps", "5", "--out-dir", str(tmp_path)]) == 0
    assert len(open(tmp_path / "bandit_heatmap.csv").read().splitlines()) == 26
    assert main(["bandit-heatmap", "--steps", "1", "--out-dir", str(tmp_path)]) == 2


def test_missing_config_is_usage_error(tmp_path, capsys):
    code = main(["sepsis-experiment", "--config", str(tmp_path / "nope.json"), "--out-dir", str(tmp_path)])
    assert code == 2
    assert "config not found" in capsys.readouterr().err


def test_bad_jobs():
    assert main(["gallery", "--jobs", "0"]) == 2


def test_sepsis_experiment_cli_is_deterministic(tmp_path):
    args = ["sepsis-experiment", "--seed", "0", "--n-seeds", "2", "--rhos", "0.5", "--sample-sizes", "20",
            "--iterations", "2"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    for name in ("results.csv", "fqi_curves.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sepsis_experiment_manifest_file(tmp_path):
    m = tmp_path / "m.json"
    m.write_text(json.dumps({"seeds": [0], "rhos": [0.0], "sample_sizes": [10], "iterations": 1,
                             "out_dir": str(tmp_path / "o")}))
    assert main(["sepsis-experiment", "--manifest", str(m)]) == 0
    assert len(open(tmp_path / "o" / "results.csv").read().splitlines()) == 3
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"rhos": [2.0]}))
    assert main(["sepsis-experiment", "--manifest", str(bad)]) == 2


def test_sepsis_enumerate(tmp_path, capsys):
    out = tmp_path / "s.json"
    assert main(["sepsis-enumerate", "--out", str(out)]) == 0
    assert "states=1442 actions=8" in capsys.readouterr().out
    pol = json.loads((tmp_path / "s_optimal_policy.json").read_text())
    assert len(pol["actions"]) == 1442
