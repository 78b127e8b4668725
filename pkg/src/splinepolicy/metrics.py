"""Smoothness metrics: velocity zero-crossing rate and 95th-percentile acceleration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from splinepolicy.bspline import as_chunk

ACC_UNITS = "action-units/s^2"


def _checked(traj, dt):
    chunk = as_chunk(traj, dt)
    if chunk.T < 3:
        raise ValueError(f"need at least 3 timesteps, got {chunk.T}")
    return chunk.actions, chunk.dt


def velocity(traj, dt: float | None = None) -> np.ndarray:
    a, dt = _checked(traj, dt)
    return np.diff(a, axis=0) / dt


def acceleration(traj, dt: float | None = None) -> np.ndarray:
    a, dt = _checked(traj, dt)
    return (a[2:] - 2.0 * a[1:-1] + a[:-2]) / dt**2


def zcr_velocity(traj, dt: float | None = None) -> np.ndarray:
    """Fraction of consecutive forward-difference velocity pairs that flip sign.

    A pair counts only when the product is strictly negative, so an exact zero
    velocity never takes part in a crossing.
    """
    v = velocity(traj, dt)
    flips = (v[:-1] * v[1:]) < 0
    return flips.sum(axis=0) / (v.shape[0] - 1)


def acc_p95(traj, dt: float | None = None) -> np.ndarray:
    """Nearest-rank 95th percentile of ``|a''|`` per dimension."""
    acc = np.abs(acceleration(traj, dt))
    return np.percentile(acc, 95, axis=0, method="inverted_cdf")


@dataclass(frozen=True)
class SmoothnessReport:
    zcr_per_dim: np.ndarray
    acc_p95_per_dim: np.ndarray

    @property
    def zcr(self) -> float:
        return float(np.mean(self.zcr_per_dim))

    @property
    def acc_p95(self) -> float:
        return float(np.mean(self.acc_p95_per_dim))

    def to_dict(self) -> dict:
        return {
            "zcr_per_dim": self.zcr_per_dim.tolist(),
            "acc_p95_per_dim": self.acc_p95_per_dim.tolist(),
            "zcr": self.zcr,
            "acc_p95": self.acc_p95,
            "acc_units": ACC_UNITS,
        }


def report(traj, dt: float | None = None) -> SmoothnessReport:
    return SmoothnessReport(zcr_velocity(traj, dt), acc_p95(traj, dt))


def reduction_pct(raw: float | np.ndarray, smooth: float | np.ndarray):
    """Percentage drop from ``raw`` to ``smooth``; 0 where ``raw`` is 0."""
    raw = np.asarray(raw, float)
    smooth = np.asarray(smooth, float)
    out = np.divide(100.0 * (raw - smooth), raw, out=np.zeros(np.broadcast(raw, smooth).shape),
                    where=raw != 0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SmoothnessComparison:
    raw: SmoothnessReport
    splined: SmoothnessReport

    @property
    def zcr_reduction(self) -> float:
        return reduction_pct(self.raw.zcr, self.splined.zcr)

    @property
    def acc_p95_reduction(self) -> float:
        return reduction_pct(self.raw.acc_p95, self.splined.acc_p95)

    def to_dict(self) -> dict:
        return {
            "raw": self.raw.to_dict(),
            "splined": self.splined.to_dict(),
            "zcr_reduction_pct": self.zcr_reduction,
            "acc_p95_reduction_pct": self.acc_p95_reduction,
            "zcr_reduction_pct_per_dim": reduction_pct(
                self.raw.zcr_per_dim, self.splined.zcr_per_dim).tolist(),
            "acc_p95_reduction_pct_per_dim": reduction_pct(
                self.raw.acc_p95_per_dim, self.splined.acc_p95_per_dim).tolist(),
        }


def smoothness_report(raw, splined, dt: float | None = None) -> SmoothnessComparison:
    r, s = as_chunk(raw, dt), as_chunk(splined, dt)
    if r.actions.shape != s.actions.shape:
        raise ValueError(f"shape mismatch: {r.actions.shape} vs {s.actions.shape}")
    return SmoothnessComparison(report(r), report(s))
