"""Discrete sepsis physiology simulator with a 3-bit factored treatment action.

State variables (row-major index order)::

    heart_rate      3 levels  (0 low, 1 normal, 2 high)
    blood_pressure  3 levels  (0 low, 1 normal, 2 high)
    oxygen          2 levels  (0 low, 1 normal)
    glucose         5 levels  (0 very low, 1 low, 2 normal, 3 high, 4 very high)
    diabetic        2
    antibiotics     2  (treatment currently on)
    vasopressors    2
    ventilation     2

giving 1440 states.  Index 1440 is the absorbing death state and 1441 the
absorbing discharge state.  The joint action is ``[antibiotics, vasopressors,
ventilation]`` with index ``4*abx + 2*vaso + vent``.

All transition probabilities come from a JSON configuration.  A vital sign's
next level is drawn from the product (in listed order) of the matrices of
every effect that applies, followed by a random fluctuation unless a
treatment that is on suppresses it.  Vitals evolve independently given the
previous treatments, the action and the diabetic flag.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .mdp_core import FactoredActionSpace, Policy, TabularMdp, policy_value, value_iteration

VITALS = ("hr", "bp", "o2", "glucose")
VITAL_LEVELS = {"hr": 3, "bp": 3, "o2": 2, "glucose": 5}
TREATMENTS = ("antibiotics", "vasopressors", "ventilation")
STATE_SHAPE = (3, 3, 2, 5, 2, 2, 2, 2)
N_LIVE = int(np.prod(STATE_SHAPE))  # 1440
DEATH = N_LIVE
DISCHARGE = N_LIVE + 1
N_STATES = N_LIVE + 2
ACTIONS = FactoredActionSpace((2, 2, 2))
FEATURE_SIZES = (3, 3, 2, 5, 2, 2, 2, 2)
N_FEATURES = sum(FEATURE_SIZES)  # 21
REFERENCE_CONFIG_NAME = "sepsis_reference.json"


class ConfigError(ValueError):
    pass


class ConfigNotFoundError(ConfigError, FileNotFoundError):
    pass


@dataclass(frozen=True)
class SepsisState:
    hr: int
    bp: int
    o2: int
    glucose: int
    diabetic: int
    antibiotics: int = 0
    vasopressors: int = 0
    ventilation: int = 0
    outcome: str | None = None  # "death" or "discharge" once absorbed

    @property
    def vitals(self) -> tuple[int, int, int, int]:
        return (self.hr, self.bp, self.o2, self.glucose)

    @property
    def treatments(self) -> tuple[int, int, int]:
        return (self.antibiotics, self.vasopressors, self.ventilation)

    def index(self) -> int:
        if self.outcome == "death":
            return DEATH
        if self.outcome == "discharge":
            return DISCHARGE
        return int(np.ravel_multi_index(self.vitals + (self.diabetic,) + self.treatments, STATE_SHAPE))

    @classmethod
    def from_index(cls, idx: int) -> "SepsisState":
        idx = int(idx)
        if idx == DEATH:
            return cls(0, 0, 0, 0, 0, outcome="death")
        if idx == DISCHARGE:
            return cls(1, 1, 1, 2, 0, outcome="discharge")
        return cls(*(int(v) for v in np.unravel_index(idx, STATE_SHAPE)))


@dataclass(frozen=True)
class Effect:
    """A transition matrix applied to one vital when its trigger holds."""

    name: str
    treatment: str
    trigger: str  # "on": action bit is 1; "withdrawn": previously on, now off
    variable: str
    matrix: np.ndarray
    diabetic: bool | None = None  # None = applies to both

    def applies(self, prev: dict, action: dict, diabetic: int) -> bool:
        if self.diabetic is not None and bool(diabetic) != self.diabetic:
            return False
        if self.trigger == "on":
            return bool(action[self.treatment])
        return bool(prev[self.treatment]) and not action[self.treatment]


@dataclass(frozen=True, eq=False)
class SepsisConfig:
    effects: tuple[Effect, ...]
    fluctuation: dict  # variable -> {"default": matrix, "diabetic": matrix (optional)}
    suppressed_by: dict  # variable -> list of treatments whose "on" bit disables fluctuation
    normal: dict
    death_min_abnormal: int
    death_reward: float
    discharge_reward: float
    initial: dict
    gamma: float
    horizon: int
    reference_optimal_value: float | None = None
    source: dict = field(default_factory=dict)

    def scopes(self) -> dict[str, set[str]]:
        """Vitals each treatment can influence (effects plus fluctuation suppression)."""
        out = {t: set() for t in TREATMENTS}
        for e in self.effects:
            out[e.treatment].add(e.variable)
        for var, ts in self.suppressed_by.items():
            for t in ts:
                out[t].add(var)
        return out


def _matrix(x, n: int, what: str) -> np.ndarray:
    M = np.asarray(x, dtype=float)
    if M.shape != (n, n):
        raise ConfigError(f"{what}: expected a {n}x{n} matrix, got shape {M.shape}")
    if (M < 0).any() or np.abs(M.sum(axis=1) - 1).max() > 1e-12:
        raise ConfigError(f"{what}: rows must be probability distributions")
    M.setflags(write=False)
    return M


def _dist(x, n: int, what: str) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.shape != (n,) or (v < 0).any() or abs(v.sum() - 1) > 1e-12:
        raise ConfigError(f"{what}: expected a probability vector of length {n}")
    return v


def config_from_dict(doc: dict) -> SepsisConfig:
    try:
        effects = []
        for e in doc["effects"]:
            var = e["variable"]
            if var not in VITAL_LEVELS:
                raise ConfigError(f"unknown vital {var!r}")
            if e["treatment"] not in TREATMENTS:
                raise ConfigError(f"unknown treatment {e['treatment']!r}")
            if e["trigger"] not in ("on", "withdrawn"):
                raise ConfigError(f"unknown trigger {e['trigger']!r}")
            effects.append(Effect(e["name"], e["treatment"], e["trigger"], var,
                                  _matrix(e["matrix"], VITAL_LEVELS[var], e["name"]), e.get("diabetic")))
        fluct = {}
        for var in VITALS:
            spec = doc["fluctuation"][var]
            fluct[var] = {k: _matrix(v, VITAL_LEVELS[var], f"fluctuation {var}/{k}") for k, v in spec.items()}
            if "default" not in fluct[var]:
                raise ConfigError(f"fluctuation {var} needs a 'default' matrix")
        init = doc["initial"]
        initial = {
            "p_diabetic": float(init["p_diabetic"]),
            "hr": _dist(init["hr"], 3, "initial hr"),
            "bp": _dist(init["bp"], 3, "initial bp"),
            "o2": _dist(init["o2"], 2, "initial o2"),
            "glucose": _dist(init["glucose"]["default"], 5, "initial glucose"),
            "glucose_diabetic": _dist(init["glucose"].get("diabetic", init["glucose"]["default"]), 5,
                                      "initial glucose (diabetic)"),
            "reject_terminal": bool(init.get("reject_terminal", True)),
        }
        term = doc["terminal"]
        return SepsisConfig(
            effects=tuple(effects),
            fluctuation=fluct,
            suppressed_by={v: list(doc["suppressed_by"].get(v, [])) for v in VITALS},
            normal={v: int(doc["normal"][v]) for v in VITALS},
            death_min_abnormal=int(term["death_min_abnormal"]),
            death_reward=float(term["death_reward"]),
            discharge_reward=float(term["discharge_reward"]),
            initial=initial,
            gamma=float(doc["gamma"]),
            horizon=int(doc["horizon"]),
            reference_optimal_value=doc.get("reference_optimal_value"),
            source=doc.get("source", {}),
        )
    except KeyError as exc:
        raise ConfigError(f"config is missing field {exc}") from None


def reference_config_path() -> Path:
    return Path(str(resources.files("faqtor") / "configs" / REFERENCE_CONFIG_NAME))


def resolve_config_path(path=None) -> Path:
    """Explicit path, else $FAQTOR_CONFIG, else the bundled reference config."""
    p = path or os.environ.get("FAQTOR_CONFIG") or reference_config_path()
    p = Path(p)
    if not p.is_file():
        raise ConfigNotFoundError(
            f"sepsis config not found at {p}. Provide a JSON file with 'effects', 'fluctuation', "
            f"'suppressed_by', 'normal', 'terminal', 'initial', 'gamma' and 'horizon' sections "
            f"(see {REFERENCE_CONFIG_NAME} in the package for the schema), via --config or FAQTOR_CONFIG."
        )
    return p


def load_config(path=None) -> SepsisConfig:
    with open(resolve_config_path(path)) as fh:
        return config_from_dict(json.load(fh))


def _bits(action) -> dict:
    if isinstance(action, (int, np.integer)):
        action = ACTIONS.decompose(int(action))
    return dict(zip(TREATMENTS, (int(b) for b in action)))


def vital_kernels(config: SepsisConfig, prev_treatments, action, diabetic: int) -> dict[str, np.ndarray]:
    """Per-vital transition matrices for one (previous treatments, action, diabetic) context."""
    prev = dict(zip(TREATMENTS, (int(b) for b in prev_treatments)))
    act = _bits(action)
    out = {}
    for var in VITALS:
        K = np.eye(VITAL_LEVELS[var])
        for e in config.effects:
            if e.variable == var and e.applies(prev, act, diabetic):
                K = K @ e.matrix
        if not any(act[t] for t in config.suppressed_by[var]):
            f = config.fluctuation[var]
            K = K @ (f.get("diabetic", f["default"]) if diabetic else f["default"])
        out[var] = K
    return out


def n_abnormal(config: SepsisConfig, vitals) -> int:
    return sum(int(v != config.normal[k]) for k, v in zip(VITALS, vitals))


def terminal_outcome(config: SepsisConfig, vitals, treatments) -> str | None:
    """'death', 'discharge' or None for a post-transition vital/treatment configuration."""
    k = n_abnormal(config, vitals)
    if k >= config.death_min_abnormal:
        return "death"
    if k == 0 and not any(treatments):
        return "discharge"
    return None


def _kernel_cdfs(config: SepsisConfig, prev: tuple, action: tuple, diabetic: int) -> tuple:
    """Row-wise cumulative kernels per vital, cached on the config object."""
    cache = config.__dict__.setdefault("_cdf_cache", {})
    key = (tuple(prev), tuple(action), int(diabetic))
    if key not in cache:
        K = vital_kernels(config, prev, action, diabetic)
        cache[key] = tuple(np.cumsum(K[v], axis=1) for v in VITALS)
    return cache[key]


def step(state: SepsisState, action, rng: np.random.Generator, config: SepsisConfig):
    """Sample one transition; returns (next_state, reward, done)."""
    if state.outcome is not None:
        return state, 0.0, True
    act = _bits(action)
    treatments = tuple(act[t] for t in TREATMENTS)
    cdfs = _kernel_cdfs(config, state.treatments, treatments, state.diabetic)
    u = rng.random(len(VITALS))
    nxt = []
    for cdf, cur, x in zip(cdfs, state.vitals, u):
        row = cdf[cur]
        nxt.append(int(min(np.searchsorted(row, x * row[-1], side="right"), len(row) - 1)))
    outcome = terminal_outcome(config, nxt, treatments)
    new = SepsisState(*nxt, state.diabetic, *treatments, outcome=outcome)
    if outcome == "death":
        return new, config.death_reward, True
    if outcome == "discharge":
        return new, config.discharge_reward, True
    return new, 0.0, False


def _vital_grid(config: SepsisConfig):
    """Abnormal count and index helpers over the 90 vital combinations."""
    g = np.indices((3, 3, 2, 5)).reshape(4, -1).T
    abn = sum((g[:, i] != config.normal[v]).astype(int) for i, v in enumerate(VITALS))
    return g, abn


def initial_distribution(config: SepsisConfig) -> np.ndarray:
    init = config.initial
    mu = np.zeros(N_STATES)
    grid, abn = _vital_grid(config)
    for d in (0, 1):
        pd = init["p_diabetic"] if d else 1.0 - init["p_diabetic"]
        gl = init["glucose_diabetic"] if d else init["glucose"]
        p = init["hr"][grid[:, 0]] * init["bp"][grid[:, 1]] * init["o2"][grid[:, 2]] * gl[grid[:, 3]] * pd
        if init["reject_terminal"]:
            p = np.where((abn >= config.death_min_abnormal) | (abn == 0), 0.0, p)
        idx = np.ravel_multi_index((*grid.T, np.full(len(grid), d), 0, 0, 0), STATE_SHAPE)
        mu[idx] = p
    total = mu.sum()
    if total <= 0:
        raise ConfigError("initial distribution has no mass after rejecting terminal states")
    return mu / total


def enumerate_mdp(config: SepsisConfig, gamma: float | None = None) -> TabularMdp:
    """Exact 1442-state MDP; terminal outcomes move to absorbing states with the terminal reward."""
    gamma = config.gamma if gamma is None else gamma
    P = np.zeros((N_STATES, ACTIONS.total, N_STATES))
    grid, abn = _vital_grid(config)
    for d in (0, 1):
        for prev in range(8):
            prev_bits = ACTIONS.decompose(prev)
            src = np.ravel_multi_index((*grid.T, np.full(len(grid), d), *[np.full(len(grid), b) for b in prev_bits]),
                                       STATE_SHAPE)
            for a in range(ACTIONS.total):
                bits = ACTIONS.decompose(a)
                K = vital_kernels(config, prev_bits, a, d)
                # joint kernel over the 90 vital combinations, rows = current vitals
                J = np.einsum("ae,bf,cg,dh->abcdefgh", K["hr"], K["bp"], K["o2"], K["glucose"]).reshape(90, 90)
                death = abn >= config.death_min_abnormal
                discharge = (abn == 0) & (sum(bits) == 0)
                live = ~(death | discharge)
                dst = np.ravel_multi_index((*grid.T, np.full(len(grid), d), *[np.full(len(grid), b) for b in bits]),
                                           STATE_SHAPE)
                P[np.ix_(src, [a], dst[live])] = J[:, live][:, None, :]
                P[src, a, DEATH] = J[:, death].sum(axis=1)
                P[src, a, DISCHARGE] = J[:, discharge].sum(axis=1)
    P[DEATH, :, DEATH] = 1.0
    P[DISCHARGE, :, DISCHARGE] = 1.0
    # clean rounding so rows sum to one at 1e-12
    P /= P.sum(axis=2, keepdims=True)
    # terminal rewards are paid on the transition into the absorbing state, folded in as an expectation
    R = config.death_reward * P[:, :, DEATH] + config.discharge_reward * P[:, :, DISCHARGE]
    R[[DEATH, DISCHARGE]] = 0.0
    return TabularMdp(N_STATES, ACTIONS, P, R, gamma, initial_distribution(config))


def optimal_policy(config: SepsisConfig, gamma: float | None = None, mdp: TabularMdp | None = None,
                   tol: float = 1e-10) -> tuple[Policy, float]:
    """Optimal stationary policy by value iteration and its exact start-distribution value."""
    mdp = enumerate_mdp(config, gamma) if mdp is None else mdp
    _, pi = value_iteration(mdp, tol)
    return pi, policy_value(mdp, pi)


def featurize(state) -> np.ndarray:
    """21-bit one-hot encoding: hr(3) bp(3) o2(2) glucose(5) diabetic(2) abx(2) vaso(2) vent(2).

    Absorbing states map to the zero vector.
    """
    if isinstance(state, (int, np.integer)):
        state = SepsisState.from_index(int(state))
    x = np.zeros(N_FEATURES)
    if state.outcome is not None:
        return x
    values = state.vitals + (state.diabetic,) + state.treatments
    offset = 0
    for v, n in zip(values, FEATURE_SIZES):
        x[offset + v] = 1.0
        offset += n
    return x


def feature_matrix() -> np.ndarray:
    """(1442, 21) features for every state index."""
    return np.vstack([featurize(s) for s in range(N_STATES)])
