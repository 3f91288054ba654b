"""Seeded sweep over behavior policies, sample sizes and featurization modes on the sepsis simulator.

Every (seed, rho, n) cell draws one dataset that both featurization modes
share, runs FQI for each mode and evaluates every iteration's greedy policy
exactly.  Output rows are sorted before writing, so the files do not depend on
worker scheduling.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import sepsis_sim
from .offline_rl import FqiConfig, evaluate_policy_online, fqi, generate_dataset, make_behavior_policy

REFERENCE_OPTIMAL_VALUE = 0.736
DEFAULT_RHOS = (0.0, 0.05, 0.125, 0.5625, 0.9125)
DEFAULT_SAMPLE_SIZES = (100, 1000, 5000, 10000)
STATE_FEATURE_KINDS = ("bits21", "tabular")

RESULT_HEADER = ("seed", "rho", "n", "mode", "value")
CURVE_HEADER = ("seed", "rho", "n", "iteration", "mode", "online_value")
SUMMARY_HEADER = ("rho", "n", "mode", "protocol", "median", "q25", "q75", "runs",
                  "optimal_reference", "optimal_computed")


@dataclass(frozen=True)
class ExperimentManifest:
    experiment_id: str = "sepsis"
    seeds: tuple[int, ...] = tuple(range(10))
    rhos: tuple[float, ...] = DEFAULT_RHOS
    sample_sizes: tuple[int, ...] = DEFAULT_SAMPLE_SIZES
    modes: tuple[str, ...] = ("baseline", "factored")
    out_dir: str = "out/sepsis"
    config: str | None = None
    iterations: int = 50
    ridge: float = 1e-3
    state_features: str = "bits21"
    jobs: int = 1
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("manifest needs at least one seed")
        if not (self.rhos and self.sample_sizes and self.modes):
            raise ValueError("parameter grid is empty")
        if any(not 0 <= r <= 1 for r in self.rhos):
            raise ValueError("rho values must lie in [0, 1]")
        if any(int(n) < 1 for n in self.sample_sizes):
            raise ValueError("sample sizes must be positive")
        bad = set(self.modes) - {"baseline", "factored"}
        if bad:
            raise ValueError(f"unknown featurization modes {sorted(bad)}")
        if self.state_features not in STATE_FEATURE_KINDS:
            raise ValueError(f"state_features must be one of {STATE_FEATURE_KINDS}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("seeds", "rhos", "sample_sizes", "modes"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentManifest":
        d = {k: v for k, v in d.items() if v is not None}
        for k in ("seeds", "rhos", "sample_sizes", "modes"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentManifest":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def state_feature_matrix(kind: str) -> np.ndarray:
    if kind == "tabular":
        return np.eye(sepsis_sim.N_STATES)
    return sepsis_sim.feature_matrix()


# Worker state, filled once per process by _init_worker.
_WORKER: dict = {}


def _init_worker(config_path, state_features):
    config = sepsis_sim.load_config(config_path)
    mdp = sepsis_sim.enumerate_mdp(config)
    optimal, value = sepsis_sim.optimal_policy(config, mdp=mdp)
    _WORKER.update(config=config, mdp=mdp, optimal=optimal, value=value,
                   X=state_feature_matrix(state_features))


def _run_cell(cell):
    seed, rho, n, modes, iterations, ridge = cell
    mdp, X = _WORKER["mdp"], _WORKER["X"]
    behavior = make_behavior_policy(_WORKER["optimal"], rho)
    data = generate_dataset(mdp, behavior, n, seed=seed, spec={"rho": rho})
    out = {}
    for mode in modes:
        cfg = FqiConfig(mode=mode, iterations=iterations, ridge=ridge, gamma=mdp.gamma)
        result = fqi(data, cfg, X, sepsis_sim.ACTIONS)
        out[mode] = [evaluate_policy_online(mdp, p) for p in result.policies]
    return (seed, rho, n), out


@dataclass(frozen=True)
class ExperimentResult:
    curves: dict  # (seed, rho, n) -> {mode: [value per iteration]}
    optimal_value: float
    paths: dict

    def best(self, seed, rho, n, mode) -> float:
        return max(self.curves[(seed, rho, n)][mode])

    def final(self, seed, rho, n, mode) -> float:
        return self.curves[(seed, rho, n)][mode][-1]

    def values(self, rho, n, mode, protocol="best") -> np.ndarray:
        pick = self.best if protocol == "best" else self.final
        return np.array([pick(s, r, m, mode) for (s, r, m) in sorted(self.curves) if r == rho and m == n])


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run_sepsis_experiment(manifest: ExperimentManifest) -> ExperimentResult:
    """Run the sweep and write results.csv, results_final.csv, fqi_curves.csv, summary.csv, manifest.json."""
    config_path = sepsis_sim.resolve_config_path(manifest.config)
    out = Path(manifest.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = [(int(s), float(r), int(n), tuple(manifest.modes), manifest.iterations, manifest.ridge)
             for s in manifest.seeds for r in manifest.rhos for n in manifest.sample_sizes]
    if manifest.jobs == 1:
        _init_worker(config_path, manifest.state_features)
        pairs = [_run_cell(c) for c in cells]
        optimal_value = _WORKER["value"]
    else:
        with ProcessPoolExecutor(manifest.jobs, initializer=_init_worker,
                                 initargs=(config_path, manifest.state_features)) as pool:
            pairs = list(pool.map(_run_cell, cells))
        config = sepsis_sim.load_config(config_path)
        optimal_value = sepsis_sim.optimal_policy(config)[1]
    curves = dict(sorted(pairs))
    keys = sorted(curves)
    modes = sorted(manifest.modes)

    results, finals, curve_rows = [], [], []
    for key in keys:
        seed, rho, n = key
        for mode in modes:
            vals = curves[key][mode]
            results.append((seed, _fmt(rho), n, mode, _fmt(max(vals))))
            finals.append((seed, _fmt(rho), n, mode, _fmt(vals[-1])))
            curve_rows.extend((seed, _fmt(rho), n, i + 1, mode, _fmt(v)) for i, v in enumerate(vals))
    res = ExperimentResult(curves, optimal_value, {})

    summary = []
    for rho in sorted(set(manifest.rhos)):
        for n in sorted(set(manifest.sample_sizes)):
            for mode in modes:
                for protocol in ("best", "final"):
                    v = res.values(float(rho), int(n), mode, protocol)
                    q25, med, q75 = np.percentile(v, [25, 50, 75])
                    summary.append((_fmt(rho), n, mode, protocol, _fmt(med), _fmt(q25), _fmt(q75), len(v),
                                    _fmt(REFERENCE_OPTIMAL_VALUE), _fmt(optimal_value)))

    paths = {name: out / name for name in
             ("results.csv", "results_final.csv", "fqi_curves.csv", "summary.csv", "manifest.json")}
    _write_csv(paths["results.csv"], RESULT_HEADER, results)
    _write_csv(paths["results_final.csv"], RESULT_HEADER, finals)
    _write_csv(paths["fqi_curves.csv"], CURVE_HEADER, curve_rows)
    _write_csv(paths["summary.csv"], SUMMARY_HEADER, summary)
    recorded = manifest.to_dict()
    recorded["config"] = str(config_path)
    recorded["jobs"] = None  # scheduling does not affect outputs; keep the file identical across job counts
    with open(paths["manifest.json"], "w") as fh:
        json.dump(recorded, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return ExperimentResult(curves, optimal_value, {k: str(v) for k, v in paths.items()})
