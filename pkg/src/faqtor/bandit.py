"""Two-dimensional bandit with a single interaction term.

Arms are indexed ``2*x + y`` with ``x in {left, right}`` and
``y in {down, up}``, so a reward vector is ``[R00, R01, R10, R11]``.  Any
non-degenerate vector can be brought to the standard form
``[0, alpha, 1, 1 + alpha + beta]`` by swapping sub-action labels, shifting and
scaling, none of which changes which arm the factored least-squares fit picks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .factorization import fit_factored_q
from .mdp_core import FactoredActionSpace

SPACE = FactoredActionSpace((2, 2))


@dataclass(frozen=True)
class Bandit2D:
    rewards: tuple[float, float, float, float]

    @classmethod
    def standard(cls, alpha: float, beta: float) -> "Bandit2D":
        return cls(tuple(q_star(alpha, beta)))

    def standardize(self) -> "Standardized":
        return standardize(self.rewards)


@dataclass(frozen=True)
class Standardized:
    """Result of :func:`standardize`.

    ``degenerate`` is ``None``, ``"x"`` (the x sub-action never matters),
    ``"y"`` or ``"xy"``.  ``alpha``/``beta`` are ``None`` only when no sequence
    of relabelings makes ``R00 != R10``.
    """

    alpha: float | None
    beta: float | None
    swap_y: bool
    swap_x: bool
    shift: float
    scale: float
    degenerate: str | None

    def to_original_arm(self, arm: int) -> int:
        """Map an arm of the standardized problem back to the original arm index."""
        x, y = divmod(int(arm), 2)
        return 2 * (x ^ int(self.swap_x)) + (y ^ int(self.swap_y))

    def transform(self, rewards) -> np.ndarray:
        """Apply the recorded relabelings, shift and scale to a reward vector."""
        r = np.asarray(rewards, dtype=float)
        perm = [self.to_original_arm(a) for a in range(4)]
        return (r[perm] - self.shift) / self.scale


def standardize(rewards) -> Standardized:
    """Reduce ``[R00, R01, R10, R11]`` to ``[0, alpha, 1, 1 + alpha + beta]``."""
    r = np.asarray(rewards, dtype=float)
    if r.shape != (4,) or not np.isfinite(r).all():
        raise ValueError("rewards must be 4 finite numbers")
    x_irrelevant = r[0] == r[2] and r[1] == r[3]
    y_irrelevant = r[0] == r[1] and r[2] == r[3]
    degenerate = ("x" if x_irrelevant else "") + ("y" if y_irrelevant else "") or None
    if x_irrelevant:
        return Standardized(None, None, False, False, 0.0, 1.0, degenerate)
    swap_y = bool(r[0] == r[2])
    if swap_y:
        r = r[[1, 0, 3, 2]]
    swap_x = bool(r[0] > r[2])
    if swap_x:
        r = r[[2, 3, 0, 1]]
    shift = float(r[0])
    r = r - shift
    scale = float(r[2])
    r = r / scale
    alpha = float(r[1])
    beta = float(r[3] - r[2] - r[1])
    return Standardized(alpha, beta, swap_y, swap_x, shift, scale, degenerate)


def q_star(alpha: float, beta: float) -> np.ndarray:
    return np.array([0.0, alpha, 1.0, 1.0 + alpha + beta])


def ovb_qhat(alpha, beta) -> np.ndarray:
    """Closed-form least-squares additive fit of ``[0, alpha, 1, 1 + alpha + beta]``.

    Broadcasts over array-valued alpha and beta (result has a trailing axis of 4).
    """
    alpha, beta = np.broadcast_arrays(np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float))
    return np.stack([-beta / 4, alpha + beta / 4, 1 + beta / 4, 1 + alpha + 3 * beta / 4], axis=-1)


def rmse(q_true, q_hat) -> float:
    d = np.asarray(q_true, dtype=float) - np.asarray(q_hat, dtype=float)
    return float(np.sqrt(np.mean(d * d)))


def suboptimality(q_true, q_hat) -> float:
    """``max Q* - Q*(argmax Q_hat)``, ties in Q_hat going to the lowest arm."""
    q_true = np.asarray(q_true, dtype=float)
    return float(q_true.max() - q_true[int(np.argmax(q_hat))])


def factored_argmax(rewards) -> int:
    """Arm chosen by the additive least-squares fit of a reward vector."""
    return int(np.argmax(fit_factored_q(np.asarray(rewards, dtype=float), SPACE)[1]))


@dataclass(frozen=True, eq=False)
class HeatmapGrid:
    alphas: np.ndarray
    betas: np.ndarray
    rmse: np.ndarray  # shape (len(betas), len(alphas))
    suboptimality: np.ndarray

    def rows(self):
        """Yield (alpha, beta, rmse, suboptimality) with beta as the outer loop."""
        for j, b in enumerate(self.betas):
            for i, a in enumerate(self.alphas):
                yield float(a), float(b), float(self.rmse[j, i]), float(self.suboptimality[j, i])

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("alpha,beta,rmse,suboptimality\n")
            for a, b, e, s in self.rows():
                fh.write(f"{a!r},{b!r},{e!r},{s!r}\n")


def grid_axis(lo: float, hi: float, steps: int) -> np.ndarray:
    """``steps`` evenly spaced points; computed as lo + (hi-lo)*i/(steps-1) so midpoints are exact."""
    if steps < 2:
        raise ValueError("resolution must be at least 2 per axis")
    i = np.arange(steps, dtype=float)
    out = lo + (hi - lo) * i / (steps - 1)
    out[-1] = hi
    return out


def heatmap_sweep(alpha_range=(-4.0, 4.0), beta_range=(-4.0, 4.0), resolution=161) -> HeatmapGrid:
    """RMSE and suboptimality of the additive fit over an (alpha, beta) grid."""
    if np.isscalar(resolution):
        resolution = (int(resolution), int(resolution))
    alphas = grid_axis(*alpha_range, resolution[0])
    betas = grid_axis(*beta_range, resolution[1])
    B, A = np.meshgrid(betas, alphas, indexing="ij")
    Q = np.stack([np.zeros_like(A), A, np.ones_like(A), 1 + A + B], axis=-1)
    Qh = ovb_qhat(A, B)
    err = np.sqrt(np.mean((Q - Qh) ** 2, axis=-1))
    choice = np.argmax(Qh, axis=-1)
    sub = Q.max(axis=-1) - np.take_along_axis(Q, choice[..., None], axis=-1)[..., 0]
    return HeatmapGrid(alphas, betas, err, sub)
