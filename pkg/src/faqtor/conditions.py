"""Checker for sufficient conditions under which a Q-function decomposes linearly.

Given per-dimension state abstractions ``phi_d : S -> Z_d`` the three
conditions are

* transition: the abstract next-state distribution factorizes into per-dimension
  kernels ``p_d(z'_d | z_d, a_d)``;
* reward: ``r(s, a) = sum_d r_d(z_d, a_d)``;
* policy: ``pi(a | s) = prod_d pi_d(a_d | z_d)``.

When all three hold, ``Q^pi`` is exactly decomposable.  Failing any of them
only means the guarantee is lost; Q may still decompose.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .factorization import DecompositionReport, check_decomposability, pinv
from .mdp_core import Policy, TabularMdp, h_step_q, policy_evaluation_exact

CONDITION_TOL = 1e-9


class AbstractionError(ValueError):
    pass


class SoundnessError(AssertionError):
    """All sufficient conditions held but the Q-function failed to decompose."""


@dataclass(frozen=True, eq=False)
class AbstractionSet:
    """Per-dimension maps from state index to abstract index."""

    maps: tuple[np.ndarray, ...]
    cardinalities: tuple[int, ...] = ()

    def __post_init__(self):
        maps = tuple(np.asarray(m, dtype=int) for m in self.maps)
        if len(maps) == 0:
            raise AbstractionError("need at least one abstraction")
        n = len(maps[0])
        cards = tuple(self.cardinalities) or tuple(int(m.max()) + 1 for m in maps)
        if len(cards) != len(maps):
            raise AbstractionError("one cardinality per map is required")
        for d, (m, k) in enumerate(zip(maps, cards)):
            if m.ndim != 1 or len(m) != n:
                raise AbstractionError(f"map {d} must be a vector over all {n} states")
            if m.min() < 0 or m.max() >= k:
                raise AbstractionError(f"map {d} has values outside [0, {k})")
            if len(np.unique(m)) != k:
                raise AbstractionError(f"map {d} is not surjective onto [0, {k})")
        for i in range(len(maps)):
            for j in range(i + 1, len(maps)):
                if np.array_equal(maps[i], maps[j]):
                    raise AbstractionError(f"maps {i} and {j} are identical")
        for m in maps:
            m.setflags(write=False)
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "cardinalities", tuple(int(k) for k in cards))

    @property
    def n_dims(self) -> int:
        return len(self.maps)

    @property
    def n_states(self) -> int:
        return len(self.maps[0])

    def joint(self) -> np.ndarray:
        """Row-major index of the abstract vector ``z = phi(s)`` for every state."""
        return np.ravel_multi_index(tuple(self.maps), self.cardinalities)

    @classmethod
    def coordinates(cls, state_shape: Sequence[int]) -> "AbstractionSet":
        """Coordinate projections for a row-major product state space."""
        grids = np.indices(tuple(state_shape)).reshape(len(state_shape), -1)
        return cls(tuple(grids), tuple(state_shape))


@dataclass
class ConditionReport:
    condition: str
    satisfied: bool
    violations: list[dict] = field(default_factory=list)

    def summary(self) -> str:
        if self.satisfied:
            return f"{self.condition}: satisfied"
        v = self.violations[0]
        return f"{self.condition}: violated ({len(self.violations)} witnesses; first {v})"

    def to_dict(self) -> dict:
        return {"condition": self.condition, "satisfied": self.satisfied, "violations": self.violations}


def _witness(kind: str, **kw) -> dict:
    out = {"kind": kind}
    for k, v in kw.items():
        if isinstance(v, (np.integer,)):
            v = int(v)
        elif isinstance(v, (np.floating,)):
            v = float(v)
        elif isinstance(v, tuple):
            v = tuple(int(x) for x in v)
        out[k] = v
    return out


def _representatives(phi: AbstractionSet) -> tuple[np.ndarray, dict[int, int]]:
    """Present abstract joint indices (sorted) and their first representative state."""
    joint = phi.joint()
    present = np.unique(joint)
    rep = {int(z): int(np.flatnonzero(joint == z)[0]) for z in present}
    return present, rep


def _check_state_consistency(table: np.ndarray, phi: AbstractionSet, tol: float, label: str) -> list[dict]:
    """Witnesses where two states with the same abstract vector disagree on ``table[s]``."""
    joint = phi.joint()
    _, rep = _representatives(phi)
    out = []
    for s in range(phi.n_states):
        r = rep[int(joint[s])]
        if r == s:
            continue
        gap = np.abs(table[s] - table[r])
        if gap.max() > tol:
            idx = np.unravel_index(int(gap.argmax()), gap.shape)
            out.append(_witness(
                f"{label} differs within abstract state",
                state=s, reference_state=r, action=int(idx[0]),
                expected=table[r][idx], observed=table[s][idx], gap=gap[idx],
            ))
    return out


def check_transition_condition(mdp: TabularMdp, phi: AbstractionSet, tol: float = CONDITION_TOL) -> ConditionReport:
    """Decide whether abstract transitions factorize over the abstraction set.

    The candidate per-dimension kernel is forced to be the marginal of the
    aggregated transition, so checking the marginals is complete.
    """
    if phi.n_states != mdp.n_states:
        raise AbstractionError("abstraction does not cover the MDP's states")
    D, cards = phi.n_dims, phi.cardinalities
    nz = int(np.prod(cards))
    joint = phi.joint()
    # (i) T(z'|s,a) = sum of p(s~|s,a) over s~ with phi(s~) = z'
    agg = np.zeros((mdp.n_states, mdp.n_actions, nz))
    for z in np.unique(joint):
        agg[:, :, z] = mdp.transition[:, :, joint == z].sum(axis=2)
    # (ii) depends on s only through z
    viol = _check_state_consistency(agg, phi, tol, "aggregated transition")
    if viol:
        return ConditionReport("transition", False, viol)
    present, rep = _representatives(phi)
    sub = mdp.actions.all_subactions()
    if sub.shape[1] != D:
        raise AbstractionError(f"{D} abstractions for a {sub.shape[1]}-dimensional action space")
    T = agg.reshape(mdp.n_states, mdp.n_actions, *cards)
    # (iii) marginals p_d(z'_d | z, a) must depend only on (z_d, a_d)
    marg = []
    for d in range(D):
        other = tuple(2 + k for k in range(D) if k != d)
        marg.append(T.sum(axis=other))  # (S, A, |Z_d|)
    for d in range(D):
        seen: dict[tuple[int, int], tuple[int, int]] = {}
        for z in present:
            s = rep[int(z)]
            zd = int(phi.maps[d][s])
            for a in range(mdp.n_actions):
                key = (zd, int(sub[a, d]))
                if key not in seen:
                    seen[key] = (s, a)
                    continue
                s0, a0 = seen[key]
                gap = np.abs(marg[d][s, a] - marg[d][s0, a0])
                if gap.max() > tol:
                    k = int(gap.argmax())
                    viol.append(_witness(
                        "marginal depends on more than (z_d, a_d)",
                        dimension=d, state=s, action=a, reference_state=s0, reference_action=a0,
                        next_abstract=k, expected=marg[d][s0, a0, k], observed=marg[d][s, a, k], gap=gap[k],
                    ))
    if viol:
        return ConditionReport("transition", False, viol)
    # (iv) product of marginals reproduces T
    for z in present:
        s = rep[int(z)]
        for a in range(mdp.n_actions):
            prod = marg[0][s, a]
            for d in range(1, D):
                prod = np.multiply.outer(prod, marg[d][s, a])
            gap = np.abs(prod - T[s, a])
            if gap.max() > tol:
                k = np.unravel_index(int(gap.argmax()), gap.shape)
                viol.append(_witness(
                    "abstract transition is not a product of marginals",
                    state=s, action=a, next_abstract=tuple(k),
                    expected=prod[k], observed=T[s, a][k], gap=gap[k],
                ))
    return ConditionReport("transition", not viol, viol)


def _additive_design(phi: AbstractionSet, sub: np.ndarray, states: np.ndarray) -> np.ndarray:
    """One-hot features over every (d, z_d, a_d) triple for each (state, action) row."""
    cols = []
    for d in range(phi.n_dims):
        n_ad = int(sub[:, d].max()) + 1
        key = phi.maps[d][states][:, None] * n_ad + sub[None, :, d]
        cols.append(np.eye(phi.cardinalities[d] * n_ad)[key.ravel()])
    return np.hstack(cols)


def check_reward_condition(mdp: TabularMdp, phi: AbstractionSet, tol: float = CONDITION_TOL) -> ConditionReport:
    """Decide whether rewards are a sum of per-dimension terms ``r_d(z_d, a_d)``."""
    if phi.n_states != mdp.n_states:
        raise AbstractionError("abstraction does not cover the MDP's states")
    R = mdp.reward
    viol = _check_state_consistency(R, phi, tol, "reward")
    if viol:
        return ConditionReport("reward", False, viol)
    present, rep = _representatives(phi)
    states = np.array([rep[int(z)] for z in present])
    sub = mdp.actions.all_subactions()
    X = _additive_design(phi, sub, states)
    y = R[states].ravel()
    fitted = X @ (pinv(X) @ y)
    resid = np.abs(y - fitted)
    if resid.max() < tol:
        return ConditionReport("reward", True, [])
    A = mdp.n_actions
    if len(present) == int(np.prod(phi.cardinalities)):
        viol = _anchored_reward_witnesses(R, phi, sub, rep, tol)
    if not viol:
        for i in np.flatnonzero(resid >= tol):
            s, a = states[i // A], i % A
            viol.append(_witness("reward is not additive", state=s, action=a,
                                 expected=fitted[i], observed=y[i], gap=resid[i]))
    return ConditionReport("reward", False, viol)


def _anchored_reward_witnesses(R, phi, sub, rep, tol) -> list[dict]:
    """Compare each reward with its additive extrapolation from a base (z, a) = (0, 0).

    ``r(z, a)`` is predicted as ``sum_d r(base with coordinate d replaced) - (D-1) r(base)``;
    on a fully observed abstract grid this is zero everywhere iff r is additive.
    """
    D = phi.n_dims
    cards = phi.cardinalities
    acards = tuple(int(sub[:, d].max()) + 1 for d in range(D))

    def r_at(zvec, avec):
        s = rep[int(np.ravel_multi_index(tuple(zvec), cards))]
        a = int(np.ravel_multi_index(tuple(avec), acards))
        return R[s, a]

    base_z, base_a = [0] * D, [0] * D
    r0 = r_at(base_z, base_a)
    out = []
    for zflat in range(int(np.prod(cards))):
        z = np.unravel_index(zflat, cards)
        for a in range(R.shape[1]):
            av = sub[a]
            pred = -(D - 1) * r0
            for d in range(D):
                zz, aa = list(base_z), list(base_a)
                zz[d], aa[d] = z[d], av[d]
                pred += r_at(zz, aa)
            obs = r_at(z, av)
            if abs(pred - obs) > tol:
                s = rep[int(np.ravel_multi_index(z, cards))]
                out.append(_witness("reward is not additive", state=s, action=a,
                                    expected=pred, observed=obs, gap=abs(pred - obs)))
    return out


def check_policy_condition(pi: Policy, phi: AbstractionSet, actions, tol: float = CONDITION_TOL) -> ConditionReport:
    """Decide whether ``pi(a|s) = prod_d pi_d(a_d | z_d)``.

    ``actions`` is the FactoredActionSpace the policy acts in.
    """
    if phi.n_states != pi.n_states:
        raise AbstractionError("abstraction does not cover the policy's states")
    table = pi.table
    viol = _check_state_consistency(table, phi, tol, "policy")
    if viol:
        return ConditionReport("policy", False, viol)
    present, rep = _representatives(phi)
    cards = actions.cardinalities
    D = len(cards)
    for z in present:
        s = rep[int(z)]
        J = table[s].reshape(cards)
        margs = [J.sum(axis=tuple(k for k in range(D) if k != d)) for d in range(D)]
        prod = margs[0]
        for d in range(1, D):
            prod = np.multiply.outer(prod, margs[d])
        gap = np.abs(prod - J)
        if gap.max() > tol:
            k = np.unravel_index(int(gap.argmax()), gap.shape)
            viol.append(_witness("sub-actions are not independent", state=s,
                                 action=int(np.ravel_multi_index(k, cards)),
                                 expected=prod[k], observed=J[k], gap=gap[k]))
    if viol:
        return ConditionReport("policy", False, viol)
    for d in range(D):
        other = tuple(k for k in range(D) if k != d)
        seen: dict[int, tuple[int, np.ndarray]] = {}
        for z in present:
            s = rep[int(z)]
            zd = int(phi.maps[d][s])
            m = table[s].reshape(cards).sum(axis=other)
            if zd not in seen:
                seen[zd] = (s, m)
                continue
            s0, m0 = seen[zd]
            gap = np.abs(m - m0)
            if gap.max() > tol:
                k = int(gap.argmax())
                viol.append(_witness("sub-action distribution depends on more than z_d",
                                     dimension=d, abstract_value=zd, state=s, reference_state=s0,
                                     subaction=k, expected=m0[k], observed=m[k], gap=gap[k]))
    return ConditionReport("policy", not viol, viol)


@dataclass
class Theorem1Report:
    transition: ConditionReport
    reward: ConditionReport
    policy: ConditionReport
    decomposition: DecompositionReport

    @property
    def guaranteed(self) -> bool:
        return self.transition.satisfied and self.reward.satisfied and self.policy.satisfied

    @property
    def verdict(self) -> str:
        return "guaranteed" if self.guaranteed else "not guaranteed"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "conditions": [c.to_dict() for c in (self.transition, self.reward, self.policy)],
            "residuals": self.decomposition.residuals.tolist(),
            "decomposable": self.decomposition.verdict,
        }


def evaluate_q(mdp: TabularMdp, pi: Policy, horizon: int | None = None):
    """Exact Q for gamma < 1; finite-horizon Q when a horizon is given or gamma = 1."""
    if horizon is not None:
        return h_step_q(mdp, pi, horizon)
    if mdp.gamma >= 1.0:
        return h_step_q(mdp, pi, 10 * mdp.n_states + 10)
    return policy_evaluation_exact(mdp, pi)


def check_theorem1(mdp: TabularMdp, pi: Policy, phi: AbstractionSet, tol: float = CONDITION_TOL,
                   decomposition_tol: float = 1e-8, horizon: int | None = None) -> Theorem1Report:
    """Check all three sufficient conditions and the actual decomposability of Q^pi.

    If every condition holds but Q^pi does not decompose, SoundnessError is raised.
    """
    rep = Theorem1Report(
        check_transition_condition(mdp, phi, tol),
        check_reward_condition(mdp, phi, tol),
        check_policy_condition(pi, phi, mdp.actions, tol),
        check_decomposability(evaluate_q(mdp, pi, horizon), mdp.actions, decomposition_tol),
    )
    if rep.guaranteed and not rep.decomposition.verdict:
        raise SoundnessError(
            f"conditions hold but max decomposition residual is {rep.decomposition.max_residual:.3e}"
        )
    return rep


def build_gallery(p: float = 0.5):
    """Named example fixtures; see :mod:`faqtor.gallery`."""
    from .gallery import build_gallery as _build

    return _build(p)
