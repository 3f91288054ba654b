"""Executable example MDPs with known action values.

State and action enumeration for the two-dimensional chain
------------------------------------------------------------
States are ``s_{x,y}`` with index ``2*x + y``::

    S00 = 0, S01 = 1, S10 = 2, S11 = 3

Actions are ``[a_x, a_y]`` with ``a_x in {left=0, right=1}`` and
``a_y in {down=0, up=1}``, so::

    SW = [left, down] = 0, NW = [left, up] = 1,
    SE = [right, down] = 2, NE = [right, up] = 3

The five-state example inserts a duplicate ``s~_{0,1}`` after ``s_{0,1}``:
``[s00, s01, s~01, s10, s11]``.

Fixture names describe content: ``chain2d_*`` are parallel chains where all
conditions hold, ``policy_violation_*`` break only the policy condition,
``transition_violation`` / ``reward_violation`` modify one transition or
reward, ``adversarial_reward`` is an undiscounted example whose reward is not
additive while Q still is, and ``witness_*`` fixtures break exactly one
condition while Q stays decomposable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conditions import AbstractionSet, check_theorem1, evaluate_q
from .factorization import fit_factored_q
from .mdp_core import (
    FactoredActionSpace,
    Policy,
    TabularMdp,
    compose_parallel,
    policy_evaluation_exact,
)

S00, S01, S10, S11 = 0, 1, 2, 3
SW, NW, SE, NE = 0, 1, 2, 3
LEFT, RIGHT = 0, 1
DOWN, UP = 0, 1


@dataclass
class Fixture:
    name: str
    description: str
    mdp: TabularMdp
    policy: Policy
    phi: AbstractionSet
    horizon: int | None = None
    expected_q: dict[int, list[float]] = field(default_factory=dict)
    expected_qhat: dict[int, list[float]] = field(default_factory=dict)
    expected_components: list[dict[int, list[float]]] = field(default_factory=list)
    expected_conditions: dict[str, bool] = field(default_factory=dict)
    decomposable: bool | None = None

    def q_values(self) -> np.ndarray:
        return evaluate_q(self.mdp, self.policy, self.horizon).values

    def fitted(self) -> np.ndarray:
        return fit_factored_q(self.q_values(), self.mdp.actions)[1]

    def verify(self, tol: float = 1e-9) -> list[str]:
        """List of mismatches against the embedded expectations (empty when all pass)."""
        errors = []
        Q = self.q_values()
        Qh = self.fitted()
        for s, row in self.expected_q.items():
            gap = np.abs(Q[s] - np.asarray(row)).max()
            if gap > tol:
                errors.append(f"Q[{s}] = {Q[s].round(6).tolist()} expected {row} (gap {gap:.2e})")
        for s, row in self.expected_qhat.items():
            gap = np.abs(Qh[s] - np.asarray(row)).max()
            if gap > tol:
                errors.append(f"Qhat[{s}] = {Qh[s].round(6).tolist()} expected {row} (gap {gap:.2e})")
        if self.expected_components:
            total = sum(np.array([c[s] for s in sorted(c)]) for c in self.expected_components)
            states = sorted(self.expected_components[0])
            gap = np.abs(total - Q[states]).max()
            if gap > tol:
                errors.append(f"component tables do not sum to Q (gap {gap:.2e})")
            for comp in self.expected_components:
                for s in states:
                    row = np.asarray(comp[s])
                    if np.abs(fit_factored_q(row, self.mdp.actions)[1] - row).max() > tol:
                        errors.append(f"component row for state {s} is not decomposable")
        rep = check_theorem1(self.mdp, self.policy, self.phi, horizon=self.horizon)
        got = {"transition": rep.transition.satisfied, "reward": rep.reward.satisfied, "policy": rep.policy.satisfied}
        for k, v in self.expected_conditions.items():
            if got[k] != v:
                errors.append(f"{k} condition satisfied={got[k]}, expected {v}")
        if self.decomposable is not None:
            dec = bool((rep.decomposition.residuals < 1e-10).all())
            if dec != self.decomposable:
                errors.append(f"decomposable={dec}, expected {self.decomposable}")
        return errors


def chain1d(gamma: float = 0.9) -> TabularMdp:
    """Two-state chain: 'right' from s0 pays +1 and moves to the absorbing s1."""
    P = np.zeros((2, 2, 2))
    P[0, LEFT, 0] = 1.0
    P[0, RIGHT, 1] = 1.0
    P[1, :, 1] = 1.0
    R = np.zeros((2, 2))
    R[0, RIGHT] = 1.0
    return TabularMdp(2, FactoredActionSpace((2,)), P, R, gamma, np.array([1.0, 0.0]))


def chain2d(gamma: float = 0.9) -> TabularMdp:
    """Two one-dimensional chains running in parallel, started at s00."""
    c = chain1d(gamma)
    return compose_parallel([c, c])


def coordinate_phi() -> AbstractionSet:
    return AbstractionSet.coordinates((2, 2))


def _modified(mdp: TabularMdp, transitions=(), rewards=(), gamma=None) -> TabularMdp:
    """Copy of ``mdp`` with (s, a, s_next) deterministic overrides and (s, a, r) reward overrides."""
    P = mdp.transition.copy()
    R = mdp.reward.copy()
    for s, a, s2 in transitions:
        P[s, a, :] = 0.0
        P[s, a, s2] = 1.0
    for s, a, r in rewards:
        R[s, a] = r
    g = mdp.gamma if gamma is None else gamma
    return TabularMdp(mdp.n_states, mdp.actions, P, R, g, mdp.initial_dist)


def _pol(actions) -> Policy:
    return Policy.from_actions(actions, 4)


def five_state_mdp(p: float = 0.5, gamma: float = 0.9) -> tuple[TabularMdp, AbstractionSet]:
    """Five-state variant of the 2-D chain; NW from s00 splits between s01 and its duplicate."""
    xs = np.array([0, 0, 0, 1, 1])
    ys = np.array([0, 1, 1, 0, 1])
    S = 5
    P = np.zeros((S, 4, S))
    R = np.zeros((S, 4))
    for s in range(S):
        for a in range(4):
            ax, ay = divmod(a, 2)
            x, y = xs[s], ys[s]
            nx = 1 if (x == 1 or ax == RIGHT) else 0
            ny = 1 if (y == 1 or ay == UP) else 0
            R[s, a] = float(x == 0 and ax == RIGHT) + float(y == 0 and ay == UP)
            if (nx, ny) == (0, 1):
                if s == 2:
                    P[s, a, 2] = 1.0
                elif s == 0:
                    P[s, a, 1] = p
                    P[s, a, 2] = 1.0 - p
                else:
                    P[s, a, 1] = 1.0
            else:
                target = {(0, 0): 0, (1, 0): 3, (1, 1): 4}[(nx, ny)]
                P[s, a, target] = 1.0
    mu = np.eye(S)[0]
    return TabularMdp(S, FactoredActionSpace((2, 2)), P, R, gamma, mu), AbstractionSet((xs, ys), (2, 2))


ALL_OK = {"transition": True, "reward": True, "policy": True}


def _policy_only(**kw):
    return {"transition": True, "reward": True, "policy": False, **kw}


def build_gallery(p: float = 0.5) -> dict[str, Fixture]:
    g = {}
    c1 = chain1d()
    c2 = chain2d()
    phi = coordinate_phi()

    g["chain1d"] = Fixture(
        "chain1d", "two-state chain under the always-right policy",
        c1, Policy.from_actions([RIGHT, RIGHT], 2), AbstractionSet((np.array([0, 1]),), (2,)),
        expected_q={0: [0.9, 1.0], 1: [0.0, 0.0]},
        expected_conditions=ALL_OK, decomposable=True,
    )

    g["chain2d_optimal"] = Fixture(
        "chain2d_optimal", "parallel chains, NE everywhere (optimal)",
        c2, _pol([NE, NE, NE, NE]), phi,
        expected_q={S00: [1.8, 1.9, 1.9, 2], S01: [0.9, 0.9, 1, 1], S10: [0.9, 1, 0.9, 1], S11: [0, 0, 0, 0]},
        expected_components=[
            {S00: [0.9, 0.9, 1, 1], S01: [0.9, 0.9, 1, 1], S10: [0, 0, 0, 0], S11: [0, 0, 0, 0]},
            {S00: [0.9, 1, 0.9, 1], S01: [0, 0, 0, 0], S10: [0.9, 1, 0.9, 1], S11: [0, 0, 0, 0]},
        ],
        expected_conditions=ALL_OK, decomposable=True,
    )
    g["chain2d_nonoptimal"] = Fixture(
        "chain2d_nonoptimal", "parallel chains, x-chain stays left from x=0",
        c2, _pol([NW, NW, NE, NE]), phi,
        expected_q={S00: [0.9, 1, 1.9, 2], S01: [0, 0, 1, 1], S10: [0.9, 1, 0.9, 1], S11: [0, 0, 0, 0]},
        expected_components=[
            {S00: [0, 0, 1, 1], S01: [0, 0, 1, 1], S10: [0, 0, 0, 0], S11: [0, 0, 0, 0]},
            {S00: [0.9, 1, 0.9, 1], S01: [0, 0, 0, 0], S10: [0.9, 1, 0.9, 1], S11: [0, 0, 0, 0]},
        ],
        expected_conditions=ALL_OK, decomposable=True,
    )
    g["chain2d_nonoptimal2"] = Fixture(
        "chain2d_nonoptimal2", "parallel chains, both chains stay from the start corner",
        c2, _pol([SW, NW, SE, NE]), phi,
        expected_q={S00: [0, 1, 1, 2], S01: [0, 0, 1, 1], S10: [0, 1, 0, 1], S11: [0, 0, 0, 0]},
        expected_components=[
            {S00: [0, 0, 1, 1], S01: [0, 0, 1, 1], S10: [0, 0, 0, 0], S11: [0, 0, 0, 0]},
            {S00: [0, 1, 0, 1], S01: [0, 0, 0, 0], S10: [0, 1, 0, 1], S11: [0, 0, 0, 0]},
        ],
        expected_conditions=ALL_OK, decomposable=True,
    )

    m5, phi5 = five_state_mdp(p)
    g["five_state_shared"] = Fixture(
        "five_state_shared", "five-state abstraction example; duplicate states share the SE action",
        m5, Policy.from_actions([NE, SE, SE, NE, SE], 4), phi5,
        expected_q={0: [1.8, 1.9, 1.9, 2.0]},
        expected_conditions=ALL_OK, decomposable=True,
    )

    g3 = _modified(c2, transitions=[(S01, NE, S01)], rewards=[(S01, NE, 1.0 - c2.gamma)])
    g["loop_back"] = Fixture(
        "loop_back", "NE from s01 loops back with reward 1-gamma; policy switches sub-actions at s11",
        g3, _pol([NE, NE, NE, SW]), phi,
        expected_q={S00: [1.8, 1.9, 1.9, 2.0], S01: [0.9, 0.9, 1, 1], S10: [0.9, 1, 0.9, 1], S11: [0, 0, 0, 0]},
        expected_conditions={"transition": False, "reward": False, "policy": False}, decomposable=True,
    )
    g["loop_back_left_start"] = Fixture(
        "loop_back_left_start", "same MDP as loop_back with NW from s00 and NE elsewhere",
        g3, _pol([NW, NE, NE, NE]), phi,
        expected_q={S00: [1.71, 1.9, 1.9, 2.0]},
        expected_conditions={"transition": False, "reward": False, "policy": False}, decomposable=False,
    )

    rows = [
        ([NW, NE, NE, NE], [1.71, 1.9, 1.9, 2], [1.7325, 1.8775, 1.8775, 2.0225]),
        ([SW, NE, NE, NE], [0, 1.9, 1.9, 2], [0.45, 1.45, 1.45, 2.45]),
        ([SE, SW, SE, SE], [0.9, 1, 1, 2], [0.675, 1.225, 1.225, 1.775]),
        ([SW, SE, SE, SE], [0, 1.9, 1, 2], [0.225, 1.675, 0.775, 2.225]),
        ([NE, NW, NE, NE], [1.8, 1, 1.9, 2], [1.575, 1.225, 2.125, 1.775]),
        ([SE, NW, NE, NE], [1.71, 1, 1.9, 2], [1.5075, 1.2025, 2.1025, 1.7975]),
        ([NE, NW, SE, SE], [1.8, 1, 1, 2], [1.35, 1.45, 1.45, 1.55]),
    ]
    for i, (acts, q, qh) in enumerate(rows, start=1):
        name = f"policy_violation_{i}"
        g[name] = Fixture(
            name, "parallel chains under a policy that is not factored over the coordinates",
            c2, _pol(acts), phi,
            expected_q={S00: q}, expected_qhat={S00: qh},
            expected_conditions=_policy_only(), decomposable=False,
        )

    tv = _modified(c2, transitions=[(S10, NE, S10)], rewards=[(S10, NE, 0.0)])
    g["transition_violation"] = Fixture(
        "transition_violation", "NE from s10 stays in place with no reward",
        tv, _pol([NE, NE, NE, NE]), phi,
        expected_q={S00: [1.8, 1.9, 1.0, 2.0]}, expected_qhat={S00: [1.575, 2.125, 1.225, 1.775]},
        expected_conditions={"transition": False, "reward": False, "policy": True}, decomposable=False,
    )

    rv = _modified(c2, rewards=[(S00, NE, 1.0)])
    g["reward_violation"] = Fixture(
        "reward_violation", "NE from s00 pays 1 instead of 1+1",
        rv, _pol([NE, NE, NE, NE]), phi,
        expected_q={S00: [0.9, 1.9, 1.9, 1.0]}, expected_qhat={S00: [1.375, 1.425, 1.425, 1.475]},
        expected_conditions={"transition": True, "reward": False, "policy": True}, decomposable=False,
    )

    adv = TabularMdp(
        4, c2.actions, c2.transition,
        np.array([[1.5, 3, 7, 1.5], [0, 0, 1, 1], [0, 4, 0, 4], [0, 0, 0, 0]], dtype=float),
        1.0, c2.initial_dist,
    )
    g["adversarial_reward"] = Fixture(
        "adversarial_reward", "undiscounted chain whose rewards are not additive but whose Q is",
        adv, _pol([SE, SW, SW, SW]), phi, horizon=50,
        expected_q={S00: [8.5, 3, 7, 1.5], S01: [0, 0, 1, 1], S10: [0, 4, 0, 4], S11: [0, 0, 0, 0]},
        expected_components=[
            {S00: [1.5, 1.5, 0, 0], S01: [0, 0, 1, 1], S10: [0, 0, 0, 0], S11: [0, 0, 0, 0]},
            {S00: [7, 1.5, 7, 1.5], S01: [0, 0, 0, 0], S10: [0, 4, 0, 4], S11: [0, 0, 0, 0]},
        ],
        expected_conditions={"transition": True, "reward": False, "policy": False}, decomposable=True,
    )

    # exactly one condition fails, Q still decomposes
    base_pi = Policy.from_actions([NE, SE, SE, NE, SE], 4)
    R = m5.reward.copy()
    R[2] += np.array([1.0, 1.0, 0.0, 0.0])
    w_rew = TabularMdp(5, m5.actions, m5.transition, R, m5.gamma, m5.initial_dist)
    g["witness_reward_only"] = Fixture(
        "witness_reward_only", "duplicate state pays +1 extra for left actions",
        w_rew, base_pi, phi5,
        expected_q={0: [1.8, 1.9, 1.9, 2.0], 2: [1.9, 1.9, 1.0, 1.0]},
        expected_conditions={"transition": True, "reward": False, "policy": True}, decomposable=True,
    )
    P = m5.transition.copy()
    P[2, [SW, NW], :] = 0.0
    P[2, [SW, NW], 0] = 1.0
    w_tr = TabularMdp(5, m5.actions, P, m5.reward, m5.gamma, m5.initial_dist)
    g["witness_transition_only"] = Fixture(
        "witness_transition_only", "left actions from the duplicate state return to s00",
        w_tr, base_pi, phi5,
        expected_q={0: [1.8, 1.9, 1.9, 2.0], 2: [1.8, 1.8, 1.0, 1.0]},
        expected_conditions={"transition": False, "reward": True, "policy": True}, decomposable=True,
    )
    g["witness_policy_only"] = Fixture(
        "witness_policy_only", "optimal policy except SW at the absorbing corner",
        c2, _pol([NE, NE, NE, SW]), phi,
        expected_q={S00: [1.8, 1.9, 1.9, 2], S01: [0.9, 0.9, 1, 1], S10: [0.9, 1, 0.9, 1], S11: [0, 0, 0, 0]},
        expected_conditions=_policy_only(), decomposable=True,
    )
    g["witness_gamma0_transition"] = Fixture(
        "witness_gamma0_transition", "myopic evaluation of a chain with a broken transition",
        _modified(c2, transitions=[(S01, NE, S01)], gamma=0.0), _pol([NE, NE, NE, NE]), phi,
        expected_q={S00: [0, 1, 1, 2]},
        expected_conditions={"transition": False, "reward": True, "policy": True}, decomposable=True,
    )
    g["witness_gamma0_policy"] = Fixture(
        "witness_gamma0_policy", "myopic evaluation under a non-factored policy",
        _modified(c2, gamma=0.0), _pol(rows[0][0]), phi,
        expected_q={S00: [0, 1, 1, 2]},
        expected_conditions=_policy_only(), decomposable=True,
    )
    return g


def run_gallery(names=None, tol: float = 1e-9, gallery=None) -> dict[str, list[str]]:
    """Verify fixtures; returns name -> list of failures (empty list = pass)."""
    gallery = build_gallery() if gallery is None else gallery
    names = list(gallery) if names is None else list(names)
    unknown = [n for n in names if n not in gallery]
    if unknown:
        raise KeyError(f"unknown fixture(s): {', '.join(unknown)}")
    return {n: gallery[n].verify(tol) for n in names}


def component_q_tables() -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-chain Q-tables for the factored chain2d policies (evaluated on the 1-D chain)."""
    c1 = chain1d()
    out = {}
    for name, (px, py) in {
        "chain2d_optimal": ([RIGHT, RIGHT], [UP, UP]),
        "chain2d_nonoptimal": ([LEFT, RIGHT], [UP, UP]),
        "chain2d_nonoptimal2": ([LEFT, RIGHT], [DOWN, UP]),
    }.items():
        qx = policy_evaluation_exact(c1, Policy.from_actions(px, 2)).values
        qy = policy_evaluation_exact(c1, Policy.from_actions(py, 2)).values
        out[name] = (qx, qy)
    return out
