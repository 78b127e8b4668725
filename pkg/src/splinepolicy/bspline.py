"""Clamped B-splines: knots, basis evaluation, derivatives and least-squares fitting.

Every curve here shares one knot vector across all action dimensions; the
control points are an ``(N, D)`` array and each column is an independent
spline.  Chunks are mapped onto the normalized domain ``[0, 1]`` so that the
conditioning of the fitting problem does not depend on the chunk length.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.linalg import solve_triangular

from splinepolicy.errors import IllConditionedError, SplineDomainError

DEFAULT_DT = 1.0 / 30.0
UNIT_DOMAIN = (0.0, 1.0)

# Relative tolerance used when validating knot spacing and domain membership.
KNOT_TOL = 1e-9
DOMAIN_TOL = 1e-12
# A fit is rejected when the smallest |R_ii| falls below this fraction of the largest.
RANK_RTOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class KnotVector:
    """Open-uniform (clamped) knot vector of a degree-``degree`` spline."""

    knots: np.ndarray
    degree: int

    def __post_init__(self):
        k = _frozen(self.knots)
        object.__setattr__(self, "knots", k)
        p = int(self.degree)
        if p < 0:
            raise ValueError("degree must be non-negative")
        if k.ndim != 1 or len(k) < 2 * (p + 1):
            raise ValueError(f"need at least {2 * (p + 1)} knots for degree {p}, got {len(k)}")
        if not np.all(np.isfinite(k)):
            raise ValueError("knots must be finite")
        if np.any(np.diff(k) < 0):
            raise ValueError("knots must be non-decreasing")
        if np.any(k[: p + 1] != k[0]) or np.any(k[-(p + 1) :] != k[-1]):
            raise ValueError("knot vector is not clamped")
        if k[-1] <= k[0]:
            raise ValueError("knot vector spans a degenerate domain")
        breaks = k[p : len(k) - p]
        steps = np.diff(breaks)
        if np.any(np.abs(steps - steps.mean()) > KNOT_TOL * (k[-1] - k[0])):
            raise ValueError("interior knots are not uniformly spaced")

    @property
    def n_ctrl(self) -> int:
        return len(self.knots) - self.degree - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[self.degree]), float(self.knots[self.n_ctrl])

    def __len__(self) -> int:
        return len(self.knots)

    def __getitem__(self, i):
        return self.knots[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnotVector):
            return NotImplemented
        return self.degree == other.degree and np.array_equal(self.knots, other.knots)

    def __hash__(self) -> int:
        return hash((self.degree, self.knots.tobytes()))


def make_clamped_knots(
    n_ctrl: int, degree: int, domain: tuple[float, float] = UNIT_DOMAIN
) -> KnotVector:
    """Clamped knots whose interior values evenly partition ``domain``.

    >>> make_clamped_knots(5, 3).knots.tolist()
    [0.0, 0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0, 1.0]
    """
    if degree < 0:
        raise ValueError("degree must be non-negative")
    if n_ctrl < degree + 1:
        raise ValueError(f"n_ctrl={n_ctrl} must be at least degree + 1 = {degree + 1}")
    lo, hi = float(domain[0]), float(domain[1])
    if not hi > lo:
        raise ValueError(f"degenerate domain {domain!r}")
    breaks = np.linspace(lo, hi, n_ctrl - degree + 1)
    knots = np.concatenate([np.full(degree, lo), breaks, np.full(degree, hi)])
    return KnotVector(knots, degree)


@dataclass(frozen=True)
class BSplineCurve:
    knots: KnotVector
    control_points: np.ndarray
    domain: tuple[float, float] = field(init=False)

    def __post_init__(self):
        c = _frozen(self.control_points)
        if c.ndim == 1:
            c = _frozen(c[:, None])
        if c.ndim != 2 or c.shape[0] != self.knots.n_ctrl:
            raise ValueError(
                f"expected {self.knots.n_ctrl} control-point rows, got shape {c.shape}"
            )
        object.__setattr__(self, "control_points", c)
        object.__setattr__(self, "domain", self.knots.domain)

    @property
    def degree(self) -> int:
        return self.knots.degree

    @property
    def n_ctrl(self) -> int:
        return self.knots.n_ctrl

    @property
    def dim(self) -> int:
        return self.control_points.shape[1]

    def __call__(self, u, side: str = "right") -> np.ndarray:
        return evaluate(self, u, side=side)

    def with_control_points(self, control_points: np.ndarray) -> "BSplineCurve":
        return BSplineCurve(self.knots, control_points)

    def to_dict(self) -> dict[str, Any]:
        return {
            "degree": self.degree,
            "knots": self.knots.knots.tolist(),
            "control_points": self.control_points.tolist(),
            "domain": list(self.domain),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BSplineCurve":
        curve = cls(KnotVector(np.asarray(d["knots"], float), int(d["degree"])),
                    np.asarray(d["control_points"], float))
        if "domain" in d and not np.allclose(curve.domain, d["domain"], rtol=0, atol=DOMAIN_TOL):
            raise ValueError(f"domain {d['domain']} inconsistent with knots {curve.domain}")
        return curve

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "BSplineCurve":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ActionChunk:
    """``T x D`` block of actions sampled every ``dt`` seconds."""

    actions: np.ndarray
    dt: float = DEFAULT_DT

    def __post_init__(self):
        a = _frozen(self.actions)
        if a.ndim == 1:
            a = _frozen(a[:, None])
        if a.ndim != 2:
            raise ValueError(f"actions must be 2-D, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("actions contain non-finite values")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "actions", a)

    @property
    def T(self) -> int:
        return self.actions.shape[0]

    @property
    def dim(self) -> int:
        return self.actions.shape[1]

    def __len__(self) -> int:
        return self.T


def as_chunk(x, dt: float | None = None) -> ActionChunk:
    if isinstance(x, ActionChunk):
        return x if dt is None or dt == x.dt else ActionChunk(x.actions, dt)
    return ActionChunk(np.asarray(x, float), DEFAULT_DT if dt is None else dt)


def sample_params(n: int, domain: tuple[float, float] = UNIT_DOMAIN) -> np.ndarray:
    """Uniform parameters ``u_t = lo + t (hi - lo) / (n - 1)`` with exact endpoints."""
    lo, hi = domain
    if n == 1:
        return np.array([lo], float)
    u = lo + np.arange(n) * ((hi - lo) / (n - 1))
    u[-1] = hi
    return u


# ---------------------------------------------------------------- basis

def _check_domain(u: np.ndarray, knots: KnotVector) -> np.ndarray:
    lo, hi = knots.domain
    tol = DOMAIN_TOL * (hi - lo)
    if np.any(~np.isfinite(u)) or np.any(u < lo - tol) or np.any(u > hi + tol):
        bad = u[(u < lo - tol) | (u > hi + tol) | ~np.isfinite(u)]
        raise SplineDomainError(f"parameter {bad[0]!r} outside spline domain [{lo}, {hi}]")
    return np.clip(u, lo, hi)


def basis(i: int, p: int, u: float, knots: KnotVector) -> float:
    """Value of ``N_{i,p}(u)`` by the Cox-de Boor recursion (0/0 taken as 0).

    This is the textbook recursive definition and is intended for scalar
    checks; :func:`design_matrix` evaluates whole batches.
    """
    if not 0 <= i < knots.n_ctrl:
        raise IndexError(f"basis index {i} out of range for {knots.n_ctrl} functions")
    if p > knots.degree:
        raise ValueError("p may not exceed the knot vector degree")
    u = float(_check_domain(np.array([u], float), knots)[0])
    t = knots.knots
    hi = knots.domain[1]
    # index of the last non-empty span; closes the right end of the domain
    last = int(np.searchsorted(t, hi, side="left")) - 1

    def rec(j: int, q: int) -> float:
        if q == 0:
            if t[j] <= u < t[j + 1]:
                return 1.0
            return 1.0 if (u == hi and j == last) else 0.0
        left = right = 0.0
        d1 = t[j + q] - t[j]
        if d1 > 0:
            left = (u - t[j]) / d1 * rec(j, q - 1)
        d2 = t[j + q + 1] - t[j + 1]
        if d2 > 0:
            right = (t[j + q + 1] - u) / d2 * rec(j + 1, q - 1)
        return left + right

    return rec(i, p)


def find_span(u: np.ndarray, knots: KnotVector, side: str = "right") -> np.ndarray:
    """Index ``k`` of the knot span holding each ``u``.

    ``side="right"`` picks ``t[k] <= u < t[k+1]`` (closed at the domain end),
    ``side="left"`` picks ``t[k] < u <= t[k+1]`` (closed at the domain start).
    The left variant lets callers take one-sided limits at interior knots.
    """
    p, n = knots.degree, knots.n_ctrl
    t = knots.knots
    if side == "right":
        k = np.searchsorted(t, u, side="right") - 1
    elif side == "left":
        k = np.searchsorted(t, u, side="left") - 1
    else:
        raise ValueError(f"side must be 'left' or 'right', not {side!r}")
    return np.clip(k, p, n - 1)


def _nonzero_basis(u: np.ndarray, span: np.ndarray, knots: KnotVector) -> np.ndarray:
    """The p+1 non-zero basis values on each point's span, shape ``(len(u), p+1)``."""
    p = knots.degree
    t = knots.knots
    m = len(u)
    out = np.zeros((m, p + 1))
    out[:, 0] = 1.0
    left = np.zeros((m, p + 1))
    right = np.zeros((m, p + 1))
    for j in range(1, p + 1):
        left[:, j] = u - t[span + 1 - j]
        right[:, j] = t[span + j] - u
        saved = np.zeros(m)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = np.divide(out[:, r], denom, out=np.zeros(m), where=denom != 0)
            out[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        out[:, j] = saved
    return out


def design_matrix(u, knots: KnotVector, side: str = "right") -> np.ndarray:
    """Dense ``(len(u), N)`` matrix of basis values ``N_{i,p}(u_t)``."""
    u = _check_domain(np.atleast_1d(np.asarray(u, float)), knots)
    span = find_span(u, knots, side)
    vals = _nonzero_basis(u, span, knots)
    B = np.zeros((len(u), knots.n_ctrl))
    cols = span[:, None] - knots.degree + np.arange(knots.degree + 1)
    np.put_along_axis(B, cols, vals, axis=1)
    return B


def evaluate(curve: BSplineCurve, u, side: str = "right") -> np.ndarray:
    """Curve value(s): a ``D`` vector for scalar ``u``, else ``(len(u), D)``."""
    scalar = np.ndim(u) == 0
    B = design_matrix(u, curve.knots, side)
    out = B @ curve.control_points
    return out[0] if scalar else out


def derivative(curve: BSplineCurve, order: int = 1) -> BSplineCurve:
    """Spline of degree ``p - order`` equal to the ``order``-th derivative."""
    if order < 1:
        raise ValueError("order must be a positive integer")
    if order > curve.degree:
        raise ValueError(f"derivative order {order} exceeds degree {curve.degree}")
    t = curve.knots.knots
    c = curve.control_points
    p = curve.degree
    for _ in range(order):
        n = c.shape[0]
        scale = p / (t[p + 1 : p + n] - t[1:n])
        c = scale[:, None] * np.diff(c, axis=0)
        t = t[1:-1]
        p -= 1
    return BSplineCurve(KnotVector(t, p), c)


# ---------------------------------------------------------------- fitting

@dataclass(frozen=True)
class LeastSquaresFit:
    curve: BSplineCurve
    residual: float
    params: np.ndarray


def residual(curve: BSplineCurve, chunk, params: np.ndarray | None = None) -> float:
    """Sum of squared differences between ``chunk`` rows and the curve at ``params``."""
    a = as_chunk(chunk).actions
    if params is None:
        params = sample_params(len(a), curve.domain)
    return float(np.sum((a - evaluate(curve, params)) ** 2))


def lstsq_qr(B: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Solve ``min ||B X - Y||`` by a reduced QR factorization of ``B``."""
    if B.shape[0] < B.shape[1]:
        raise IllConditionedError(
            f"{B.shape[0]} samples cannot determine {B.shape[1]} coefficients"
        )
    Q, R = np.linalg.qr(B, mode="reduced")
    diag = np.abs(np.diag(R))
    if diag.size and diag.min() <= RANK_RTOL * diag.max():
        raise IllConditionedError("design matrix is rank deficient")
    return solve_triangular(R, Q.T @ Y, lower=False)


def fit_least_squares(chunk, n_ctrl: int = 8, degree: int = 3) -> LeastSquaresFit:
    """Least-squares clamped spline through a chunk.

    Row ``t`` of the chunk is placed at ``u_t = t / (T - 1)`` on ``[0, 1]`` and
    all ``D`` columns are solved against one shared design matrix.

    Parameters
    ----------
    chunk : ActionChunk or array_like, shape (T, D)
    n_ctrl : int
        Number of control points ``N``; requires ``T >= N``.
    degree : int

    Returns
    -------
    LeastSquaresFit
        The fitted curve, its sum of squared residuals, and the sample parameters.
    """
    a = as_chunk(chunk).actions
    T = a.shape[0]
    if T < n_ctrl:
        raise IllConditionedError(f"chunk of {T} rows cannot determine {n_ctrl} control points")
    knots = make_clamped_knots(n_ctrl, degree)
    u = sample_params(T)
    B = design_matrix(u, knots)
    ctrl = lstsq_qr(B, a)
    curve = BSplineCurve(knots, ctrl)
    res = float(np.sum((a - B @ ctrl) ** 2))
    return LeastSquaresFit(curve, res, u)


def fit_batch(chunks: np.ndarray, n_ctrl: int = 8, degree: int = 3) -> np.ndarray:
    """Control points for a stack of equal-length chunks, shape ``(B, N, D)``."""
    chunks = np.asarray(chunks, float)
    nb, T, D = chunks.shape
    if T < n_ctrl:
        raise IllConditionedError(f"chunk of {T} rows cannot determine {n_ctrl} control points")
    B = design_matrix(sample_params(T), make_clamped_knots(n_ctrl, degree))
    rhs = chunks.transpose(1, 0, 2).reshape(T, nb * D)
    ctrl = lstsq_qr(B, rhs)
    return ctrl.reshape(n_ctrl, nb, D).transpose(1, 0, 2)


def curve_from_points(control_points: np.ndarray, degree: int = 3) -> BSplineCurve:
    c = np.asarray(control_points, float)
    return BSplineCurve(make_clamped_knots(c.shape[0], degree), c)


def reconstruct(curve: BSplineCurve, n_samples: int, dt: float = DEFAULT_DT) -> ActionChunk:
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    return ActionChunk(evaluate(curve, sample_params(n_samples, curve.domain)), dt)


def reconstruct_batch(control_points: np.ndarray, n_samples: int, degree: int = 3) -> np.ndarray:
    c = np.asarray(control_points, float)
    B = design_matrix(sample_params(n_samples), make_clamped_knots(c.shape[1], degree))
    return np.einsum("tn,bnd->btd", B, c)

