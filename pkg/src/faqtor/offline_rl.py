"""Offline RL: behavior policies, seeded datasets, fitted Q-iteration, BCQ and WIS.

Datasets are generated with one PCG64 stream per episode, seeded with
``stream_seed(seed) ^ episode_id``.  ``stream_seed`` expands the user seed to
64 bits so that small seeds do not share episode streams.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .factorization import build_psi_tilde, pinv
from .mdp_core import FactoredActionSpace, Policy, TabularMdp, finite_horizon_value, greedy_policy

MAX_EPISODE_LEN = 20
DENSE_DESIGN_LIMIT = 4096
DATASET_COLUMNS = ("episode", "t", "s", "a", "r", "s_next", "done")


class SupportViolationError(ValueError):
    """The behavior policy gives zero probability to a logged action."""


# ----------------------------------------------------------------- behavior


@dataclass(frozen=True)
class BehaviorPolicySpec:
    rho: float
    description: str = ""

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho={self.rho} outside [0, 1]")

    @classmethod
    def from_epsilon(cls, epsilon: float, n_actions: int) -> "BehaviorPolicySpec":
        return cls(epsilon_to_rho(epsilon, n_actions), f"epsilon-greedy, epsilon={epsilon}")


def epsilon_to_rho(epsilon: float, n_actions: int) -> float:
    """Probability of the optimal action under epsilon-greedy exploration."""
    return (1.0 - epsilon) + epsilon / n_actions


def make_behavior_policy(optimal: Policy, rho: float) -> Policy:
    """Optimal action with probability rho, the rest spread evenly over the other actions."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho={rho} outside [0, 1]")
    if not optimal.deterministic:
        raise ValueError("the reference policy must be deterministic")
    A = optimal.n_actions
    T = np.full(optimal.table.shape, (1.0 - rho) / (A - 1))
    T[optimal.table == 1.0] = rho
    return Policy(T)


# ----------------------------------------------------------------- datasets


def stream_seed(seed: int) -> int:
    """64-bit expansion of a user seed (SeedSequence); episode streams XOR this with the episode id."""
    return int(np.random.SeedSequence(int(seed)).generate_state(1, np.uint64)[0])


def episode_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(stream_seed(seed) ^ int(episode)))


@dataclass(frozen=True, eq=False)
class Dataset:
    episode: np.ndarray
    t: np.ndarray
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    seed: int | None = None
    spec: dict = field(default_factory=dict)
    weight: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.s)

    @property
    def n_episodes(self) -> int:
        return len(np.unique(self.episode))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(DATASET_COLUMNS)
        for row in zip(self.episode, self.t, self.s, self.a, self.r, self.s_next, self.done):
            e, t, s, a, r, s2, d = row
            w.writerow([int(e), int(t), int(s), int(a), repr(float(r)), int(s2), "true" if d else "false"])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {"seed": self.seed, "spec": self.spec, "n_records": len(self), "n_episodes": self.n_episodes}

    def save(self, csv_path, sidecar_path=None) -> None:
        with open(csv_path, "w") as fh:
            fh.write(self.to_csv())
        sidecar_path = sidecar_path or str(csv_path) + ".json"
        with open(sidecar_path, "w") as fh:
            json.dump(self.sidecar(), fh, indent=1, sort_keys=True)

    @classmethod
    def from_csv(cls, text: str, sidecar: dict | None = None) -> "Dataset":
        rows = list(csv.DictReader(io.StringIO(text)))
        col = lambda k, f: np.array([f(r[k]) for r in rows])  # noqa: E731
        sidecar = sidecar or {}
        return cls(col("episode", int), col("t", int), col("s", int), col("a", int), col("r", float),
                   col("s_next", int), col("done", lambda v: v == "true"),
                   sidecar.get("seed"), sidecar.get("spec", {}))

    def episodes(self):
        """Yield index arrays, one per episode, in order of appearance."""
        starts = np.flatnonzero(np.r_[True, self.episode[1:] != self.episode[:-1]])
        ends = np.r_[starts[1:], len(self)]
        for a, b in zip(starts, ends):
            yield np.arange(a, b)


def absorbing_states(mdp: TabularMdp) -> np.ndarray:
    """States that self-loop with probability 1 under every action and pay nothing."""
    S = mdp.n_states
    diag = mdp.transition[np.arange(S), :, np.arange(S)]
    return np.flatnonzero((diag == 1.0).all(axis=1) & (mdp.reward == 0.0).all(axis=1))


def _sample(cdf_data, rng) -> int:
    idx, cdf = cdf_data
    k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return int(idx[min(k, len(idx) - 1)])


def generate_dataset(mdp: TabularMdp, behavior: Policy, n_episodes: int, seed: int,
                     max_len: int = MAX_EPISODE_LEN, spec: dict | None = None,
                     terminal=None) -> Dataset:
    """Roll out ``behavior`` in ``mdp`` for ``n_episodes`` episodes.

    Episodes end when an absorbing (terminal) state is reached (``done=True``)
    or after ``max_len`` steps, in which case the last record has ``done=False``.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    terminal = set(absorbing_states(mdp).tolist() if terminal is None else terminal)
    P = mdp.sparse_transition()
    S, A = mdp.n_states, mdp.n_actions
    trans_cache: dict[int, tuple] = {}

    def next_cdf(s, a):
        k = s * A + a
        if k not in trans_cache:
            lo, hi = P.indptr[k], P.indptr[k + 1]
            trans_cache[k] = (P.indices[lo:hi], np.cumsum(P.data[lo:hi]))
        return trans_cache[k]

    mu_nz = np.flatnonzero(mdp.initial_dist)
    mu_cdf = (mu_nz, np.cumsum(mdp.initial_dist[mu_nz]))
    pol_cdf = {}
    cols = {k: [] for k in DATASET_COLUMNS}
    for ep in range(n_episodes):
        rng = episode_rng(seed, ep)
        s = _sample(mu_cdf, rng)
        for t in range(max_len):
            if s not in pol_cdf:
                nz = np.flatnonzero(behavior.table[s])
                pol_cdf[s] = (nz, np.cumsum(behavior.table[s, nz]))
            a = _sample(pol_cdf[s], rng)
            s2 = _sample(next_cdf(s, a), rng)
            done = s2 in terminal
            for k, v in zip(DATASET_COLUMNS, (ep, t, s, a, mdp.reward[s, a], s2, done)):
                cols[k].append(v)
            if done:
                break
            s = s2
    return Dataset(
        np.array(cols["episode"], dtype=int), np.array(cols["t"], dtype=int), np.array(cols["s"], dtype=int),
        np.array(cols["a"], dtype=int), np.array(cols["r"], dtype=float), np.array(cols["s_next"], dtype=int),
        np.array(cols["done"], dtype=bool), int(seed),
        dict(spec or {}, n_episodes=n_episodes, max_len=max_len, generator="PCG64", stream="stream_seed(seed) ^ episode"),
    )


def exhaustive_dataset(mdp: TabularMdp, terminal=None) -> Dataset:
    """One weighted record per (s, a, s') with p(s'|s,a) > 0 for every non-absorbing s.

    The ``weight`` column holds p(s'|s,a); regression on it reproduces expected targets.
    """
    terminal = set(absorbing_states(mdp).tolist() if terminal is None else terminal)
    rec = []
    for s in range(mdp.n_states):
        if s in terminal:
            continue
        for a in range(mdp.n_actions):
            for s2 in np.flatnonzero(mdp.transition[s, a]):
                rec.append((s, a, mdp.reward[s, a], int(s2), int(s2) in terminal, mdp.transition[s, a, s2]))
    n = len(rec)
    s, a, r, s2, d, w = (np.array(x) for x in zip(*rec))
    return Dataset(np.arange(n), np.zeros(n, dtype=int), s.astype(int), a.astype(int), r.astype(float),
                   s2.astype(int), d.astype(bool), None, {"kind": "exhaustive"}, w.astype(float))


# ----------------------------------------------------------------- FQI


@dataclass(frozen=True)
class FqiConfig:
    mode: str = "factored"  # "baseline" (one-hot joint action) or "factored" (condensed sub-action basis)
    iterations: int = 50
    ridge: float = 1e-3
    clip: tuple[float, float] = (-1.0, 1.0)
    gamma: float = 0.99

    def __post_init__(self):
        if self.mode not in ("baseline", "factored"):
            raise ValueError(f"unknown featurization mode {self.mode!r}")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        lo, hi = self.clip
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise ValueError("clip bounds must be finite with low <= high")


def action_features(space: FactoredActionSpace, mode: str) -> np.ndarray:
    """(|A|, m) action encoding: identity for baseline, condensed sub-action rows for factored."""
    if mode == "baseline":
        return np.eye(space.total)
    return np.asarray(build_psi_tilde(space).entries, dtype=float)


def design_columns(space: FactoredActionSpace, n_state_features: int, mode: str) -> int:
    return n_state_features * action_features(space, mode).shape[1]


@dataclass(frozen=True, eq=False)
class FqiResult:
    weights: list[np.ndarray]  # per iteration, shape (k, m)
    q_tables: list[np.ndarray]  # per iteration, shape (S, |A|)
    policies: list[Policy]
    config: FqiConfig


def fqi(dataset: Dataset, config: FqiConfig, state_features: np.ndarray, space: FactoredActionSpace) -> FqiResult:
    """Fitted Q-iteration with linear features ``x(s) kron g(a)``.

    Each iteration regresses clipped targets ``r + gamma max_a' Q_prev(s', a')``
    (``r`` on terminal records) by ridge least squares; with ``ridge = 0`` the
    minimum-norm solution is used.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    X = np.asarray(state_features, dtype=float)
    G = action_features(space, config.mode)
    k, m = X.shape[1], G.shape[1]
    w = np.ones(len(dataset)) if dataset.weight is None else np.asarray(dataset.weight, dtype=float)
    if k * m > DENSE_DESIGN_LIMIT:
        solve = _sparse_solver(X, G, dataset, w, config.ridge)
    else:
        Phi = (X[dataset.s][:, :, None] * G[dataset.a][:, None, :]).reshape(len(dataset), k * m)
        Phi_w = Phi * w[:, None]
        gram = Phi.T @ Phi_w
        if config.ridge > 0:
            factor = scipy.linalg.cho_factor(gram + config.ridge * np.eye(k * m))
            solve = lambda y: scipy.linalg.cho_solve(factor, Phi_w.T @ y)  # noqa: E731
        else:
            gram_pinv = pinv(gram)
            solve = lambda y: gram_pinv @ (Phi_w.T @ y)  # noqa: E731
    lo, hi = config.clip
    Q = np.zeros((X.shape[0], space.total))
    not_done = ~dataset.done
    out_w, out_q, out_pi = [], [], []
    for _ in range(config.iterations):
        y = dataset.r.astype(float).copy()
        y[not_done] += config.gamma * Q[dataset.s_next[not_done]].max(axis=1)
        y = np.clip(y, lo, hi)
        W = solve(y).reshape(k, m)
        Q = X @ W @ G.T
        out_w.append(W)
        out_q.append(Q)
        out_pi.append(greedy_policy(Q))
    return FqiResult(out_w, out_q, out_pi, config)


def _sparse_solver(X, G, dataset, w, ridge):
    """Least-squares solver over a sparse design, used when the dense design would be too large."""
    Xs = scipy.sparse.csr_matrix(X[dataset.s])
    k, m = X.shape[1], G.shape[1]
    blocks = [Xs.multiply(G[dataset.a, j][:, None]) for j in range(m)]
    # hstack gives column j*k + i; reorder to the i*m + j layout of the dense path
    perm = (np.arange(k)[:, None] + k * np.arange(m)[None, :]).ravel()
    Phi = scipy.sparse.hstack(blocks, format="csc")[:, perm].tocsr()
    if ridge > 0:
        Phi_w = scipy.sparse.diags(w) @ Phi
        lu = scipy.sparse.linalg.splu((Phi.T @ Phi_w + ridge * scipy.sparse.identity(k * m)).tocsc())
        return lambda y: lu.solve(Phi_w.T @ y)
    root = np.sqrt(w)
    A = scipy.sparse.diags(root) @ Phi
    # LSMR started at zero converges to the minimum-norm least-squares solution
    return lambda y: scipy.sparse.linalg.lsmr(A, root * y, atol=1e-15, btol=1e-15, maxiter=20 * k * m)[0]


def evaluate_policy_online(mdp: TabularMdp, policy: Policy, horizon: int = MAX_EPISODE_LEN) -> float:
    """Exact finite-horizon value of ``policy`` from the MDP's initial distribution."""
    return finite_horizon_value(mdp, policy, horizon)


# ----------------------------------------------------------------- BCQ


def bcq_filter(q, behavior_counts: np.ndarray, tau: float) -> Policy:
    """Greedy policy restricted to actions whose estimated behavior ratio to the mode is >= tau."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    Q = np.asarray(getattr(q, "values", q), dtype=float)
    C = np.asarray(behavior_counts, dtype=float)
    if C.shape != Q.shape or (C < 0).any():
        raise ValueError("behavior counts must be nonnegative with the same shape as q")
    total = C.sum(axis=1, keepdims=True)
    seen = total[:, 0] > 0
    ratio = np.divide(C, C.max(axis=1, keepdims=True), out=np.zeros_like(C), where=C.max(axis=1, keepdims=True) > 0)
    allowed = (ratio >= tau) | ~seen[:, None]
    masked = np.where(allowed, Q, -np.inf)
    return greedy_policy(masked)


def behavior_counts(dataset: Dataset, n_states: int, n_actions: int) -> np.ndarray:
    C = np.zeros((n_states, n_actions))
    np.add.at(C, (dataset.s, dataset.a), 1.0)
    return C


# ----------------------------------------------------------------- OPE


def importance_weights(dataset: Dataset, target: Policy, behavior: Policy, gamma_eval: float = 1.0):
    """Per-episode cumulative importance ratios and discounted returns."""
    ws, gs = [], []
    for idx in dataset.episodes():
        s, a, r = dataset.s[idx], dataset.a[idx], dataset.r[idx]
        b = behavior.table[s, a]
        if (b <= 0).any():
            j = idx[int(np.flatnonzero(b <= 0)[0])]
            raise SupportViolationError(
                f"behavior probability is zero for logged record {int(j)} "
                f"(episode {int(dataset.episode[j])}, t {int(dataset.t[j])}, s {int(dataset.s[j])}, a {int(dataset.a[j])})"
            )
        ws.append(float(np.prod(target.table[s, a] / b)))
        gs.append(float(np.sum(r * gamma_eval ** dataset.t[idx])))
    return np.array(ws), np.array(gs)


def wis_estimate(dataset: Dataset, target: Policy, behavior: Policy, gamma_eval: float = 1.0) -> float:
    """Weighted importance sampling estimate ``sum w_i G_i / sum w_i``."""
    w, g = importance_weights(dataset, target, behavior, gamma_eval)
    return wis_from_weights(w, g)


def wis_from_weights(weights, returns) -> float:
    w = np.asarray(weights, dtype=float)
    g = np.asarray(returns, dtype=float)
    if (w < 0).any():
        raise ValueError("weights must be nonnegative")
    if w.sum() <= 0:
        raise ValueError("all importance weights are zero; the target never agrees with the data")
    return float(np.dot(w, g) / w.sum())


def ess(weights) -> float:
    """Effective sample size ``(sum w)^2 / sum w^2``."""
    w = np.asarray(weights, dtype=float)
    if (w < 0).any():
        raise ValueError("weights must be nonnegative")
    sq = float(np.dot(w, w))
    if sq == 0:
        raise ValueError("weights are all zero")
    return float(w.sum() ** 2 / sq)
