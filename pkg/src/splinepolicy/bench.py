"""Dataset-level benchmarks behind ``bench-repr`` and ``bench-smooth``."""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

from splinepolicy import codecs, metrics, sim
from splinepolicy.bspline import DEFAULT_DT, fit_least_squares, reconstruct
from splinepolicy.seeding import stream


def dataset_digest(chunks: Sequence[np.ndarray]) -> str:
    h = hashlib.sha256()
    for c in chunks:
        a = np.ascontiguousarray(c, dtype="<f8")
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def repr_benchmark(chunks: Sequence[np.ndarray], n_coeffs: int = 8, n_bins: int = 256,
                   degree: int = 3) -> dict:
    """Score all four codecs on ``chunks``; per-chunk errors are kept for ordering checks."""
    results = codecs.score_all(chunks, n_coeffs=n_coeffs, n_bins=n_bins, degree=degree)
    report = {
        "dataset": {"digest": dataset_digest(chunks), "n_chunks": len(chunks),
                    "chunk_shape": list(np.shape(chunks[0]))},
        "codecs": {},
    }
    for kind, (codec, sc) in results.items():
        report["codecs"][kind] = {"params": codec.params(), "score": sc.to_dict(),
                                  "chunk_errors": codecs.chunk_errors(codec, chunks)}
    scores = {k: sc for k, (_, sc) in results.items()}
    best_err = min(scores, key=lambda k: scores[k].mean_error)
    best_snr = max(scores, key=lambda k: scores[k].snr_db)
    report["best_mean_error"] = best_err
    report["best_snr"] = best_snr
    return report


def noisy_trajectories(seed: int, n: int = 100, T: int = 40, D: int = sim.ACTION_DIM,
                       noise_frac: float = 0.05) -> list[np.ndarray]:
    rng = stream(seed, "smooth-bench")
    return [sim.smooth_noisy_trajectory(rng, T, D, noise_frac)[1] for _ in range(n)]


def smoothness_benchmark(trajectories: Sequence[np.ndarray], n_ctrl: int = 8, degree: int = 3,
                         dt: float = DEFAULT_DT) -> tuple[dict, list[dict]]:
    """Raw vs spline-fitted smoothness for each trajectory.

    Returns the summary and one row per (trajectory, dimension).
    """
    rows = []
    zcr_red, acc_red = [], []
    for i, raw in enumerate(trajectories):
        raw = np.asarray(raw, float)
        fit = fit_least_squares(raw, n_ctrl, degree)
        smooth = reconstruct(fit.curve, len(raw), dt).actions
        cmp = metrics.smoothness_report(raw, smooth, dt)
        zcr_red.append(cmp.zcr_reduction)
        acc_red.append(cmp.acc_p95_reduction)
        for d in range(raw.shape[1]):
            rows.append({
                "trajectory": i, "dim": d,
                "zcr_raw": cmp.raw.zcr_per_dim[d], "zcr_spline": cmp.splined.zcr_per_dim[d],
                "acc_p95_raw": cmp.raw.acc_p95_per_dim[d],
                "acc_p95_spline": cmp.splined.acc_p95_per_dim[d],
            })
    summary = {
        "n_trajectories": len(trajectories),
        "median_zcr_reduction_pct": float(np.median(zcr_red)),
        "median_acc_p95_reduction_pct": float(np.median(acc_red)),
        "mean_zcr_reduction_pct": float(np.mean(zcr_red)),
        "mean_acc_p95_reduction_pct": float(np.mean(acc_red)),
        "acc_units": metrics.ACC_UNITS,
    }
    return summary, rows
