"""Linear decomposition of Q-functions over factored action spaces.

``Psi`` maps each joint action to the concatenation of one-hot encodings of
its sub-actions.  Its column space is exactly the set of Q-vectors that can be
written as ``sum_d q_d(a_d)``.  ``Psi_tilde`` is a full-column-rank basis of
the same space: an intercept column followed by each one-hot block with its
first column removed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .mdp_core import FactoredActionSpace, QTable

PINV_RCOND = 1e-10
DECOMPOSABLE_TOL = 1e-8


def pinv(M: np.ndarray, rcond: float = PINV_RCOND) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD; singular values below rcond*max are dropped."""
    M = np.asarray(M, dtype=float)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    keep = s > rcond * (s.max() if s.size else 0.0)
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (Vt.T * s_inv) @ U.T


def matrix_rank(M: np.ndarray, rcond: float = PINV_RCOND) -> int:
    s = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    return int((s > rcond * (s.max() if s.size else 0.0)).sum())


@dataclass(frozen=True, eq=False)
class SubActionMappingMatrix:
    """0/1 matrix of shape (|A|, sum_d |A_d|); block d one-hot encodes sub-action d."""

    entries: np.ndarray
    space: FactoredActionSpace

    def block(self, d: int) -> np.ndarray:
        start = sum(self.space.cardinalities[:d])
        return self.entries[:, start:start + self.space.cardinalities[d]]


@dataclass(frozen=True, eq=False)
class CondensedMatrix:
    """Full-column-rank 0/1 basis of shape (|A|, 1 + sum_d (|A_d| - 1))."""

    entries: np.ndarray
    space: FactoredActionSpace


def condensed_width(space: FactoredActionSpace) -> int:
    return 1 + sum(c - 1 for c in space.cardinalities)


def build_psi(space: FactoredActionSpace) -> SubActionMappingMatrix:
    sub = space.all_subactions()
    blocks = [np.eye(c)[sub[:, d]] for d, c in enumerate(space.cardinalities)]
    M = np.hstack(blocks)
    M.setflags(write=False)
    return SubActionMappingMatrix(M, space)


def build_psi_tilde(space: FactoredActionSpace) -> CondensedMatrix:
    sub = space.all_subactions()
    cols = [np.ones((space.total, 1))]
    cols += [np.eye(c)[sub[:, d]][:, 1:] for d, c in enumerate(space.cardinalities)]
    M = np.hstack(cols)
    M.setflags(write=False)
    return CondensedMatrix(M, space)


def projection_matrix(space: FactoredActionSpace) -> np.ndarray:
    """Orthogonal projector onto the decomposable subspace, ``Psi Psi^+``."""
    psi = build_psi(space).entries
    return psi @ pinv(psi)


@dataclass(frozen=True, eq=False)
class FactoredWeights:
    """Per-state weights over the condensed basis, shape (S, 1 + sum_d(|A_d|-1)).

    The intercept is reported separately from the per-dimension components so
    ``Q_hat(s, a) = bias(s) + sum_d q_d(s, a_d)`` with ``q_d(s, 0) = 0``.
    """

    weights: np.ndarray
    space: FactoredActionSpace

    @property
    def bias(self) -> np.ndarray:
        return self.weights[:, 0]

    def components(self) -> list[np.ndarray]:
        """List of (S, |A_d|) arrays ``q_d(s, a_d)``."""
        out, start = [], 1
        for c in self.space.cardinalities:
            q = np.zeros((self.weights.shape[0], c))
            q[:, 1:] = self.weights[:, start:start + c - 1]
            out.append(q)
            start += c - 1
        return out

    def reconstruct(self) -> np.ndarray:
        return self.weights @ build_psi_tilde(self.space).entries.T


def _as_rows(q_values, space: FactoredActionSpace) -> tuple[np.ndarray, bool]:
    Q = np.asarray(q_values.values if isinstance(q_values, QTable) else q_values, dtype=float)
    single = Q.ndim == 1
    Q = np.atleast_2d(Q)
    if Q.shape[1] != space.total:
        raise ValueError(f"Q rows have {Q.shape[1]} entries, action space has {space.total}")
    if not np.isfinite(Q).all():
        raise ValueError("Q-values must be finite")
    return Q, single


def fit_factored_q(q_values, space: FactoredActionSpace) -> tuple[FactoredWeights, np.ndarray]:
    """Least-squares fit of each state's Q-row onto the decomposable subspace.

    Accepts a single row of length |A| or an (S, |A|) table.  Returns the
    minimum-norm condensed weights and the fitted rows (same shape as input).
    """
    Q, single = _as_rows(q_values, space)
    psi_t = build_psi_tilde(space).entries
    W = Q @ pinv(psi_t).T
    fitted = Q @ projection_matrix(space).T
    return FactoredWeights(W, space), (fitted[0] if single else fitted)


@dataclass(frozen=True, eq=False)
class DecompositionReport:
    residuals: np.ndarray
    decomposable: np.ndarray
    tol: float

    @property
    def verdict(self) -> bool:
        return bool(self.decomposable.all())

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max()) if self.residuals.size else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["state", "residual", "decomposable"])
        for s, (r, ok) in enumerate(zip(self.residuals, self.decomposable)):
            w.writerow([s, repr(float(r)), str(bool(ok)).lower()])
        return buf.getvalue()


def check_decomposability(q, space: FactoredActionSpace, tol: float = DECOMPOSABLE_TOL) -> DecompositionReport:
    """Per-state residual ``||(I - Psi Psi^+) Q(s, .)||_2`` and pass/fail at ``tol``."""
    Q, _ = _as_rows(q, space)
    P = projection_matrix(space)
    res = np.linalg.norm(Q - Q @ P.T, axis=1)
    return DecompositionReport(res, res < tol, tol)


def free_parameter_count(space: FactoredActionSpace, n_states: int) -> tuple[int, int]:
    """(full tabular count, linearly decomposed count)."""
    full = n_states * space.total
    factored = n_states * (sum(space.cardinalities) - space.n_dims + 1)
    return full, factored


def rademacher_lower_bound(design: np.ndarray, weight_bound: float) -> float:
    """``A / (sqrt(2) m) * ||X||_F`` for an (m, k) design matrix."""
    X = np.asarray(design, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError("design must be a non-empty 2-D matrix")
    if weight_bound <= 0:
        raise ValueError("weight_bound must be positive")
    return float(weight_bound / (np.sqrt(2.0) * X.shape[0]) * np.linalg.norm(X, "fro"))


def simulation_lemma_bounds(eps_p: float, eps_r: float, gamma: float, r_max: float) -> tuple[float, float]:
    """Error bounds for planning in a model with transition error eps_p and reward error eps_r.

    Returns ``(q_bound, v_bound)`` where q_bound bounds the optimal Q difference
    and v_bound the value loss of the model-optimal policy.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    if min(eps_p, eps_r, r_max) < 0:
        raise ValueError("eps_p, eps_r and r_max must be nonnegative")
    h = 1.0 - gamma
    q_bound = eps_r / h + gamma * eps_p * r_max / (2.0 * h * h)
    v_bound = 2.0 * eps_r / h + gamma * eps_p * r_max / (h * h)
    return q_bound, v_bound


@dataclass(frozen=True, eq=False)
class InteractionFit:
    fitted: np.ndarray
    weights: np.ndarray
    residual: np.ndarray
    n_interactions: int = 0

    @property
    def interaction_weights(self) -> np.ndarray:
        """Weights of the appended interaction columns (last ``n_interactions`` entries)."""
        k = self.weights.shape[-1] - self.n_interactions
        return self.weights[..., k:]


def fit_with_interactions(q_values, space: FactoredActionSpace, interaction_columns=None) -> InteractionFit:
    """Least squares over ``[Psi_tilde | interaction columns]`` (minimum-norm weights)."""
    Q, single = _as_rows(q_values, space)
    basis = build_psi_tilde(space).entries
    n_inter = 0
    if interaction_columns is not None:
        extra = np.asarray(interaction_columns, dtype=float)
        if extra.ndim == 1:
            extra = extra[:, None]
        if extra.shape[0] != space.total:
            raise ValueError(f"interaction columns need {space.total} rows")
        basis = np.hstack([basis, extra])
        n_inter = extra.shape[1]
    W = Q @ pinv(basis).T
    fitted = W @ basis.T
    res = np.linalg.norm(Q - fitted, axis=1)
    if single:
        return InteractionFit(fitted[0], W[0], res[0], n_inter)
    return InteractionFit(fitted, W, res, n_inter)


def interaction_column(space: FactoredActionSpace, dims, levels) -> np.ndarray:
    """Indicator column of joint actions whose sub-actions in ``dims`` equal ``levels``."""
    sub = space.all_subactions()
    mask = np.all(sub[:, list(dims)] == np.asarray(levels), axis=1)
    return mask.astype(float)


def matrix_to_csv(M: np.ndarray) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows([[repr(float(x)) for x in row] for row in np.atleast_2d(M)])
    return buf.getvalue()
