import csv
import json

import numpy as np
import pytest

from faqtor.experiment import (
    CURVE_HEADER,
    RESULT_HEADER,
    SUMMARY_HEADER,
    ExperimentManifest,
    run_sepsis_experiment,
)


@pytest.mark.parametrize("bad", [
    dict(seeds=()),
    dict(rhos=()),
    dict(rhos=(1.5,)),
    dict(sample_sizes=(0,)),
    dict(modes=("joint",)),
    dict(state_features="pixels"),
    dict(jobs=0),
])
def test_manifest_validation(bad):
    with pytest.raises(ValueError):
        ExperimentManifest(**bad)


def test_manifest_round_trip(tmp_path):
    m = ExperimentManifest(seeds=(3, 4), rhos=(0.5,), sample_sizes=(10,), iterations=2)
    p = tmp_path / "m.json"
    p.write_text(json.dumps(m.to_dict()))
    assert ExperimentManifest.load(p) == m


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    m = ExperimentManifest(seeds=(0, 1, 2), rhos=(0.0, 0.5), sample_sizes=(20, 40), iterations=3, out_dir=str(out))
    return m, run_sepsis_experiment(m)


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_result_files_and_row_counts(tiny_run):
    m, res = tiny_run
    cells = len(m.seeds) * len(m.rhos) * len(m.sample_sizes)
    results = _rows(res.paths["results.csv"])
    assert tuple(results[0]) == RESULT_HEADER
    assert len(results) - 1 == 2 * cells
    assert len(_rows(res.paths["results_final.csv"])) - 1 == 2 * cells
    curves = _rows(res.paths["fqi_curves.csv"])
    assert tuple(curves[0]) == CURVE_HEADER
    assert len(curves) - 1 == 2 * cells * m.iterations
    summary = _rows(res.paths["summary.csv"])
    assert tuple(summary[0]) == SUMMARY_HEADER
    assert len(summary) - 1 == len(m.rhos) * len(m.sample_sizes) * 2 * 2


def test_best_is_max_of_curve_and_final_is_last(tiny_run):
    _, res = tiny_run
    for key, modes in res.curves.items():
        for mode, vals in modes.items():
            assert res.best(*key, mode) == max(vals)
            assert res.final(*key, mode) == vals[-1]
            assert all(v <= res.optimal_value + 1e-12 for v in vals)


def test_summary_median_matches_results(tiny_run):
    m, res = tiny_run
    v = res.values(0.5, 40, "factored")
    assert len(v) == len(m.seeds)
    row = next(r for r in _rows(res.paths["summary.csv"])
               if r[:4] == ["0.5", "40", "factored", "best"])
    assert float(row[4]) == pytest.approx(np.median(v), abs=1e-15)


def test_manifest_is_recorded(tiny_run):
    m, res = tiny_run
    doc = json.loads(open(res.paths["manifest.json"]).read())
    assert doc["seeds"] == list(m.seeds)
    assert doc["config"].endswith(".json")
