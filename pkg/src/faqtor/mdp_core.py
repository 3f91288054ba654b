"""Finite MDPs over factored action spaces and exact dynamic programming.

Index conventions
-----------------
Joint actions are enumerated row-major with the first sub-action dimension
most significant: ``a = sum_d a_d * prod_{d' > d} |A_d'|``.  For a 2x2 space
this gives ``[0,0] -> 0, [0,1] -> 1, [1,0] -> 2, [1,1] -> 3``.  Joint states
built by :func:`compose_parallel` use the same convention over component
state indices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

PROB_TOL = 1e-12


class MdpError(ValueError):
    """Raised for malformed MDPs, policies or action spaces."""


class NonConvergentEvaluationError(MdpError):
    """Raised when exact evaluation has no unique solution (e.g. gamma = 1)."""


class UnsupportedDiscountError(MdpError):
    """Raised when an algorithm cannot handle the requested discount."""


class CompositionError(MdpError):
    """Raised when components cannot be composed into a product MDP."""


@dataclass(frozen=True)
class FactoredActionSpace:
    """Cartesian product of sub-action sets with cardinalities ``|A_1|..|A_D|``."""

    cardinalities: tuple[int, ...]

    def __post_init__(self):
        cards = tuple(int(c) for c in self.cardinalities)
        if len(cards) == 0:
            raise MdpError("an action space needs at least one dimension")
        for d, c in enumerate(cards):
            if c < 2:
                raise MdpError(f"dimension {d} has cardinality {c}; every dimension needs at least 2 sub-actions")
        object.__setattr__(self, "cardinalities", cards)

    @property
    def n_dims(self) -> int:
        return len(self.cardinalities)

    @property
    def total(self) -> int:
        return int(np.prod(self.cardinalities))

    @property
    def strides(self) -> tuple[int, ...]:
        out, acc = [], 1
        for c in reversed(self.cardinalities):
            out.append(acc)
            acc *= c
        return tuple(reversed(out))

    def index(self, subactions: Sequence[int]) -> int:
        return action_index(subactions, self)

    def decompose(self, index: int) -> tuple[int, ...]:
        return decompose_action(index, self)

    def all_subactions(self) -> np.ndarray:
        """Integer array of shape (total, D); row i is the sub-action vector of joint action i."""
        grids = np.indices(self.cardinalities).reshape(self.n_dims, -1)
        return grids.T.copy()


def action_index(subactions: Sequence[int], space: FactoredActionSpace) -> int:
    """Joint action index of a sub-action vector (first dimension most significant)."""
    if len(subactions) != space.n_dims:
        raise MdpError(f"expected {space.n_dims} sub-actions, got {len(subactions)}")
    idx = 0
    for d, (a, c) in enumerate(zip(subactions, space.cardinalities)):
        a = int(a)
        if not 0 <= a < c:
            raise IndexError(f"sub-action {a} out of range [0, {c}) in dimension {d}")
        idx = idx * c + a
    return idx


def decompose_action(index: int, space: FactoredActionSpace) -> tuple[int, ...]:
    """Inverse of :func:`action_index`."""
    index = int(index)
    if not 0 <= index < space.total:
        raise IndexError(f"joint action {index} out of range [0, {space.total})")
    out = []
    for c in reversed(space.cardinalities):
        out.append(index % c)
        index //= c
    return tuple(reversed(out))


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP ``(S, A, p, r, mu0, gamma)`` with a factored action space.

    ``transition`` has shape (S, A, S) and ``reward`` shape (S, A).
    """

    n_states: int
    actions: FactoredActionSpace
    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    initial_dist: np.ndarray
    _sparse_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        S, A = int(self.n_states), self.actions.total
        P = np.asarray(self.transition, dtype=float)
        R = np.asarray(self.reward, dtype=float)
        mu = np.asarray(self.initial_dist, dtype=float)
        if P.shape != (S, A, S):
            raise MdpError(f"transition has shape {P.shape}, expected {(S, A, S)}")
        if R.shape != (S, A):
            raise MdpError(f"reward has shape {R.shape}, expected {(S, A)}")
        if mu.shape != (S,):
            raise MdpError(f"initial_dist has shape {mu.shape}, expected {(S,)}")
        if (P < 0).any():
            raise MdpError("transition has negative entries")
        rows = P.sum(axis=2)
        if np.abs(rows - 1.0).max() > PROB_TOL:
            s, a = np.unravel_index(np.abs(rows - 1.0).argmax(), rows.shape)
            raise MdpError(f"transition row (s={s}, a={a}) sums to {rows[s, a]!r}")
        if (mu < 0).any() or abs(mu.sum() - 1.0) > PROB_TOL:
            raise MdpError("initial_dist must be a probability vector")
        if not np.isfinite(R).all():
            raise MdpError("reward entries must be finite")
        if not 0.0 <= float(self.gamma) <= 1.0:
            raise MdpError(f"gamma={self.gamma} outside [0, 1]")
        for arr in (P, R, mu):
            arr.setflags(write=False)
        object.__setattr__(self, "n_states", S)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "initial_dist", mu)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_actions(self) -> int:
        return self.actions.total

    def with_gamma(self, gamma: float) -> "TabularMdp":
        return TabularMdp(self.n_states, self.actions, self.transition, self.reward, gamma, self.initial_dist)

    def sparse_transition(self) -> sp.csr_matrix:
        """Transition as a CSR matrix of shape (S*A, S); cached."""
        if "csr" not in self._sparse_cache:
            self._sparse_cache["csr"] = sp.csr_matrix(self.transition.reshape(-1, self.n_states))
        return self._sparse_cache["csr"]

    def expected_next(self, values: np.ndarray) -> np.ndarray:
        """``sum_s' p(s'|s,a) values[s']`` as an (S, A) array."""
        S, A = self.n_states, self.n_actions
        if S * A * S > 2_000_000:
            return (self.sparse_transition() @ values).reshape(S, A)
        return self.transition.reshape(S * A, S).dot(values).reshape(S, A)


@dataclass(frozen=True, eq=False)
class Policy:
    """Stochastic policy table ``pi(a|s)`` of shape (S, A)."""

    table: np.ndarray

    def __post_init__(self):
        T = np.asarray(self.table, dtype=float)
        if T.ndim != 2:
            raise MdpError("policy table must be two-dimensional")
        if (T < -PROB_TOL).any() or (T > 1 + PROB_TOL).any():
            raise MdpError("policy entries must lie in [0, 1]")
        if np.abs(T.sum(axis=1) - 1.0).max() > PROB_TOL:
            raise MdpError("policy rows must sum to 1")
        T.setflags(write=False)
        object.__setattr__(self, "table", T)

    @property
    def n_states(self) -> int:
        return self.table.shape[0]

    @property
    def n_actions(self) -> int:
        return self.table.shape[1]

    @property
    def deterministic(self) -> bool:
        return bool(np.all((self.table == 0.0) | (self.table == 1.0)))

    def greedy_actions(self) -> np.ndarray:
        """Most probable action per state (lowest index on ties)."""
        return np.argmax(self.table, axis=1)

    @classmethod
    def from_actions(cls, actions: Sequence[int], n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        T = np.zeros((len(actions), n_actions))
        T[np.arange(len(actions)), actions] = 1.0
        return cls(T)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))


@dataclass(frozen=True, eq=False)
class QTable:
    """Action values ``Q(s, a)`` together with the discount that produced them."""

    values: np.ndarray
    gamma: float

    def __post_init__(self):
        V = np.asarray(self.values, dtype=float)
        if not np.isfinite(V).all():
            raise MdpError("Q-values must be finite")
        V.setflags(write=False)
        object.__setattr__(self, "values", V)

    def state_values(self, pi: Policy) -> np.ndarray:
        return (pi.table * self.values).sum(axis=1)


def greedy_policy(q: np.ndarray) -> Policy:
    """Deterministic greedy policy; ties go to the lowest action index."""
    q = np.asarray(q)
    return Policy.from_actions(np.argmax(q, axis=1), q.shape[1])


def _check_policy(mdp: TabularMdp, pi: Policy) -> None:
    if pi.table.shape != (mdp.n_states, mdp.n_actions):
        raise MdpError(f"policy shape {pi.table.shape} does not match MDP {(mdp.n_states, mdp.n_actions)}")


def _policy_matrix(mdp: TabularMdp, pi: Policy):
    S, A = mdp.n_states, mdp.n_actions
    if S * A * S > 2_000_000:
        W = sp.csr_matrix(
            (pi.table.ravel(), (np.repeat(np.arange(S), A), np.arange(S * A))), shape=(S, S * A)
        )
        return (W @ mdp.sparse_transition()).toarray()
    return np.einsum("sa,sat->st", pi.table, mdp.transition)


def policy_evaluation_exact(mdp: TabularMdp, pi: Policy) -> QTable:
    """Solve ``Q = R + gamma P^pi Q`` exactly via a dense linear solve.

    The state-value system ``(I - gamma P_pi) V = r_pi`` is solved by LU with
    one round of iterative refinement; ``Q = R + gamma P V`` follows.
    """
    _check_policy(mdp, pi)
    if mdp.gamma >= 1.0:
        raise NonConvergentEvaluationError(
            "exact evaluation needs gamma < 1; use h_step_q with an explicit horizon for gamma = 1"
        )
    S = mdp.n_states
    P_pi = _policy_matrix(mdp, pi)
    r_pi = (pi.table * mdp.reward).sum(axis=1)
    M = np.eye(S) - mdp.gamma * P_pi
    V = np.linalg.solve(M, r_pi)
    V = V + np.linalg.solve(M, r_pi - M @ V)
    Q = mdp.reward + mdp.gamma * mdp.expected_next(V)
    return QTable(Q, mdp.gamma)


def h_step_q(mdp: TabularMdp, pi: Policy, h: int) -> QTable:
    """h-step action values; ``h = 1`` is the reward table."""
    _check_policy(mdp, pi)
    if int(h) < 1:
        raise ValueError(f"horizon must be >= 1, got {h}")
    Q = mdp.reward.copy()
    for _ in range(int(h) - 1):
        V = (pi.table * Q).sum(axis=1)
        Q = mdp.reward + mdp.gamma * mdp.expected_next(V)
    return QTable(Q, mdp.gamma)


def value_iteration(mdp: TabularMdp, tol: float = 1e-10, max_iter: int = 1_000_000) -> tuple[QTable, Policy]:
    """Optimal Q within ``tol`` (sup-norm) and its greedy policy."""
    if mdp.gamma >= 1.0:
        raise UnsupportedDiscountError("value iteration requires gamma < 1")
    g = mdp.gamma
    Q = mdp.reward.copy()
    # ||Q_{k+1} - Q*|| <= g/(1-g) ||Q_{k+1} - Q_k||
    stop = tol * (1.0 - g) / g if g > 0 else np.inf
    for _ in range(max_iter):
        Q_new = mdp.reward + g * mdp.expected_next(Q.max(axis=1))
        diff = np.abs(Q_new - Q).max()
        Q = Q_new
        if diff <= stop:
            break
    return QTable(Q, g), greedy_policy(Q)


def finite_horizon_optimal(mdp: TabularMdp, horizon: int) -> tuple[list[Policy], float]:
    """Backward induction over ``horizon`` steps; returns per-step greedy policies and start value."""
    V = np.zeros(mdp.n_states)
    policies = []
    for _ in range(int(horizon)):
        Q = mdp.reward + mdp.gamma * mdp.expected_next(V)
        policies.append(greedy_policy(Q))
        V = Q.max(axis=1)
    policies.reverse()
    return policies, float(mdp.initial_dist @ V)


def policy_value(mdp: TabularMdp, pi: Policy) -> float:
    """Start-distribution value ``E_{s~mu0}[V^pi(s)]``."""
    q = policy_evaluation_exact(mdp, pi)
    return float(mdp.initial_dist @ q.state_values(pi))


def finite_horizon_value(mdp: TabularMdp, pi: Policy, horizon: int) -> float:
    """Start-distribution value of ``pi`` over exactly ``horizon`` steps."""
    q = h_step_q(mdp, pi, horizon)
    return float(mdp.initial_dist @ q.state_values(pi))


def _kron_tables(tables: Sequence[np.ndarray]) -> np.ndarray:
    """Outer product of (S_d, A_d) tables reshaped to (prod S_d, prod A_d)."""
    out = tables[0]
    for t in tables[1:]:
        s1, a1 = out.shape
        s2, a2 = t.shape
        out = np.einsum("ia,jb->ijab", out, t).reshape(s1 * s2, a1 * a2)
    return out


def compose_parallel(mdps: Sequence[TabularMdp]) -> TabularMdp:
    """Product MDP of independent components running in parallel.

    Transitions multiply, rewards add, and the joint action space concatenates
    the component spaces.
    """
    if len(mdps) == 0:
        raise CompositionError("need at least one component")
    gammas = {m.gamma for m in mdps}
    if len(gammas) != 1:
        raise CompositionError(f"components have different discounts: {sorted(gammas)}")
    P = mdps[0].transition
    R = mdps[0].reward
    mu = mdps[0].initial_dist
    for m in mdps[1:]:
        s1, a1, _ = P.shape
        s2, a2, _ = m.transition.shape
        P = np.einsum("iak,jbl->ijabkl", P, m.transition).reshape(s1 * s2, a1 * a2, s1 * s2)
        R = (R[:, None, :, None] + m.reward[None, :, None, :]).reshape(s1 * s2, a1 * a2)
        mu = np.outer(mu, m.initial_dist).ravel()
    cards = tuple(c for m in mdps for c in m.actions.cardinalities)
    return TabularMdp(P.shape[0], FactoredActionSpace(cards), P, R, mdps[0].gamma, mu)


def compose_factored_policy(policies: Sequence[Policy], mdps: Sequence[TabularMdp]) -> Policy:
    """Joint policy ``pi(a|s) = prod_d pi_d(a_d|s_d)`` on the product MDP indices."""
    if len(policies) != len(mdps) or len(policies) == 0:
        raise CompositionError("need one policy per component MDP")
    for d, (p, m) in enumerate(zip(policies, mdps)):
        if p.table.shape != (m.n_states, m.n_actions):
            raise CompositionError(f"policy {d} has shape {p.table.shape}, component expects {(m.n_states, m.n_actions)}")
    return Policy(_kron_tables([p.table for p in policies]))


# ---------------------------------------------------------------- JSON I/O


def mdp_to_dict(mdp: TabularMdp) -> dict:
    return {
        "n_states": mdp.n_states,
        "cardinalities": list(mdp.actions.cardinalities),
        "gamma": mdp.gamma,
        "initial_dist": mdp.initial_dist.tolist(),
        "transition": mdp.transition.tolist(),
        "reward": mdp.reward.tolist(),
    }


def mdp_from_dict(doc: dict) -> TabularMdp:
    try:
        return TabularMdp(
            n_states=int(doc["n_states"]),
            actions=FactoredActionSpace(tuple(doc["cardinalities"])),
            transition=np.asarray(doc["transition"], dtype=float),
            reward=np.asarray(doc["reward"], dtype=float),
            gamma=float(doc["gamma"]),
            initial_dist=np.asarray(doc["initial_dist"], dtype=float),
        )
    except KeyError as exc:
        raise MdpError(f"MDP document is missing field {exc}") from None


def save_mdp(mdp: TabularMdp, path) -> None:
    # json writes floats with repr, i.e. full round-trip precision
    with open(path, "w") as fh:
        json.dump(mdp_to_dict(mdp), fh)


def load_mdp(path) -> TabularMdp:
    with open(path) as fh:
        return mdp_from_dict(json.load(fh))


def policy_from_dict(doc: dict, n_actions: int | None = None) -> Policy:
    """Accepts ``{"table": [[...]]}`` or ``{"actions": [...]}`` (deterministic)."""
    if "table" in doc:
        return Policy(np.asarray(doc["table"], dtype=float))
    if "actions" in doc:
        if n_actions is None:
            raise MdpError("deterministic policy documents need the action count")
        return Policy.from_actions(doc["actions"], n_actions)
    raise MdpError("policy document needs a 'table' or 'actions' field")
