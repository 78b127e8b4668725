"""Continuity-constrained refitting of a predicted curve against executed actions.

Only the leading ``n_free`` control points are re-solved; the tail from the
policy's prediction is moved to the right-hand side and left untouched, so
by local support the curve beyond ``knots[n_free + p]`` does not change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from splinepolicy.bspline import BSplineCurve, KnotVector, design_matrix, evaluate
from splinepolicy.errors import IllConditionedError

# Singular values below RCOND * s_max are treated as zero.  Those directions of
# the free block are not determined by the history and keep their predicted values.
RCOND = 1e-10


@dataclass(frozen=True)
class RefitRequest:
    predicted_curve: BSplineCurve
    executed_history: np.ndarray
    n_free: int
    history_params: np.ndarray
    regularize: bool = True
    ridge: float = 0.0

    def __post_init__(self):
        h = np.array(self.executed_history, float)
        if h.ndim == 1:
            h = h[:, None]
        u = np.array(self.history_params, float)
        if h.ndim != 2 or h.shape[0] < 1:
            raise ValueError("executed history must be a non-empty (P, D) array")
        if h.shape[1] != self.predicted_curve.dim:
            raise ValueError(
                f"history has {h.shape[1]} dims, curve has {self.predicted_curve.dim}"
            )
        if u.shape != (h.shape[0],):
            raise ValueError(f"need {h.shape[0]} history params, got shape {u.shape}")
        if np.any(np.diff(u) <= 0):
            raise ValueError("history params must be strictly increasing")
        lo, hi = self.predicted_curve.domain
        if u[0] < lo or u[-1] > hi:
            raise ValueError(f"history params leave the curve domain [{lo}, {hi}]")
        if not 1 <= self.n_free <= self.predicted_curve.n_ctrl:
            raise ValueError(
                f"n_free={self.n_free} outside [1, {self.predicted_curve.n_ctrl}]"
            )
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        h.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "executed_history", h)
        object.__setattr__(self, "history_params", u)


@dataclass(frozen=True)
class RefitResult:
    refitted_curve: BSplineCurve
    prefix_residual: float
    changed_indices: range = field(repr=False)
    rank: int = 0


def default_n_free(knots: KnotVector, history_params) -> int:
    """Basis functions overlapping the history window, minus the outermost one.

    Basis ``i`` is supported on ``[t_i, t_{i+p+1}]`` and touches a window that
    starts at the domain origin iff ``t_i < max(u)``.  The last such function
    only grazes the window, so history pins it down poorly while its support
    reaches deep into the dispatched part of the chunk; freeing it makes
    closed-loop replanning diverge.  It stays at the prediction.
    """
    touching = int(np.searchsorted(knots.knots, float(np.max(history_params)), side="left"))
    return min(max(touching - 1, 1), knots.n_ctrl)


def history_params(n_history: int, chunk_len: int, offset: int = 0) -> np.ndarray:
    """Parameters of chunk ticks ``offset .. offset + n_history - 1`` on ``[0, 1]``."""
    t = np.arange(offset, offset + n_history, dtype=float)
    return t / (chunk_len - 1)


def refit(req: RefitRequest) -> RefitResult:
    """Re-solve the first ``n_free`` control points against the executed history.

    Minimizes ``sum_t ||a_t - s_new(u_t)||^2`` where the tail control points are
    fixed at the prediction.  Directions of the free block that the history
    cannot determine (numerically zero singular values) stay at the predicted
    values; with ``regularize=False`` such a block raises instead.  A positive
    ``ridge`` adds ``ridge * ||c - c_pred||^2`` to the objective.
    """
    curve = req.predicted_curve
    nf = req.n_free
    c_pred = curve.control_points
    B = design_matrix(req.history_params, curve.knots)
    B_free, B_fixed = B[:, :nf], B[:, nf:]
    c0 = c_pred[:nf]
    # residual of the prediction with the fixed tail moved to the right-hand side
    rhs = req.executed_history - B_fixed @ c_pred[nf:] - B_free @ c0

    U, s, Vt = np.linalg.svd(B_free, full_matrices=False)
    smax = s[0] if s.size else 0.0
    keep = s > RCOND * smax if smax > 0 else np.zeros_like(s, bool)
    rank = int(keep.sum())
    if rank < nf and not req.regularize and req.ridge == 0:
        raise IllConditionedError(
            f"free block has rank {rank} < n_free={nf}; enable regularization"
        )
    if req.ridge > 0:
        gain = s / (s**2 + req.ridge)
    else:
        gain = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    delta = Vt.T @ (gain[:, None] * (U.T @ rhs))

    new_ctrl = np.array(c_pred, copy=True)
    new_ctrl[:nf] = c0 + delta
    new_curve = curve.with_control_points(new_ctrl)
    res = float(np.sum((req.executed_history - B @ new_ctrl) ** 2))
    return RefitResult(new_curve, res, range(nf), rank)


def prefix_residual(curve: BSplineCurve, history: np.ndarray, params: np.ndarray) -> float:
    h = np.asarray(history, float).reshape(len(params), -1)
    return float(np.sum((h - evaluate(curve, np.asarray(params, float))) ** 2))


def boundary_discontinuity(
    prev_tail: np.ndarray,
    new_curve: BSplineCurve,
    dt: float = 1.0 / 30.0,
    first_param: float | None = None,
) -> float:
    """Velocity-scale jump ``||s_new(u_first) - a_last|| / dt`` at a splice.

    ``first_param`` is the curve parameter of the first action taken from the
    new curve; it defaults to the start of the curve's domain.
    """
    tail = np.asarray(prev_tail, float)
    if tail.ndim == 1:
        tail = tail[:, None]
    if tail.shape[0] < 2:
        raise ValueError("prev_tail needs at least two rows")
    u = new_curve.domain[0] if first_param is None else first_param
    first = evaluate(new_curve, float(u))
    return float(np.linalg.norm(first - tail[-1]) / dt)
