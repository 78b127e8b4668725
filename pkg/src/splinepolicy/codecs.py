"""Lossy action-chunk codecs and their reconstruction scores.

Four codecs are compared on the same chunks:

``bins256``
    every action element quantized into 256 uniform bins per dimension
``dct8``
    the 8 lowest-frequency orthonormal DCT-II coefficients per dimension
``bspline_discrete``
    8 cubic control points, each quantized into 256 bins per dimension
``bspline_continuous``
    8 cubic control points kept as floats

Quantizing codecs are calibrated once on a dataset (per-dimension min/max)
and are immutable afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.fft import dct, idct

from splinepolicy.bspline import (
    as_chunk,
    curve_from_points,
    fit_least_squares,
    reconstruct,
)
from splinepolicy.errors import InvalidStateError

KINDS = ("bins256", "dct8", "bspline_discrete", "bspline_continuous")


@dataclass(frozen=True)
class Quantizer:
    """Uniform mid-rise quantizer over per-dimension ``[lo, hi]``.

    Index ``floor((x - lo) / w)`` with ``w = (hi - lo) / n_bins``, so values on a
    bin edge go to the upper bin; out-of-range values clamp to the end bins.
    Decoding returns bin centers.
    """

    lo: np.ndarray
    hi: np.ndarray
    n_bins: int = 256

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, float))
        hi = np.atleast_1d(np.asarray(self.hi, float))
        if self.n_bins < 2:
            raise ValueError("n_bins must be at least 2")
        if lo.shape != hi.shape or np.any(~(hi > lo)):
            raise ValueError("calibration ranges must be non-degenerate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def width(self) -> np.ndarray:
        return (self.hi - self.lo) / self.n_bins

    def encode(self, x: np.ndarray) -> np.ndarray:
        idx = np.floor((np.asarray(x, float) - self.lo) / self.width)
        return np.clip(idx, 0, self.n_bins - 1).astype(np.int64)

    def decode(self, idx: np.ndarray) -> np.ndarray:
        return self.lo + (np.asarray(idx, float) + 0.5) * self.width


def _range_of(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = values.min(axis=0)
    hi = values.max(axis=0)
    # a constant dimension still needs a positive-width range
    flat = ~(hi > lo)
    pad = np.maximum(np.abs(lo[flat]), 1.0) * 1e-6
    lo[flat] -= pad
    hi[flat] += pad
    return lo, hi


@dataclass(frozen=True)
class Codec:
    kind: str
    n_coeffs: int = 8
    n_bins: int = 256
    degree: int = 3
    quantizer: Quantizer | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown codec kind {self.kind!r}; expected one of {KINDS}")
        if self.n_bins < 2:
            raise ValueError("n_bins must be at least 2")
        if self.n_coeffs < self.degree + 1:
            raise ValueError("n_coeffs must be at least degree + 1")

    @property
    def quantizing(self) -> bool:
        return self.kind in ("bins256", "bspline_discrete")

    @property
    def calibrated(self) -> bool:
        return not self.quantizing or self.quantizer is not None

    def calibrate(self, dataset: Iterable) -> "Codec":
        """Return a copy with per-dimension ranges taken from ``dataset``."""
        if not self.quantizing:
            return self
        chunks = [as_chunk(c).actions for c in dataset]
        if not chunks:
            raise ValueError("cannot calibrate on an empty dataset")
        if self.kind == "bins256":
            values = np.concatenate(chunks, axis=0)
        else:
            values = np.concatenate(
                [fit_least_squares(c, self.n_coeffs, self.degree).curve.control_points
                 for c in chunks], axis=0)
        lo, hi = _range_of(values)
        return replace(self, quantizer=Quantizer(lo, hi, self.n_bins))

    def params(self) -> dict:
        out = {"kind": self.kind}
        if self.kind in ("dct8", "bspline_discrete", "bspline_continuous"):
            out["n_coeffs"] = self.n_coeffs
        if self.kind.startswith("bspline"):
            out["degree"] = self.degree
        if self.quantizing:
            out["n_bins"] = self.n_bins
            if self.quantizer is not None:
                out["range_lo"] = self.quantizer.lo.tolist()
                out["range_hi"] = self.quantizer.hi.tolist()
        return out


def make_codec(kind: str, **kwargs) -> Codec:
    return Codec(kind, **kwargs)


def _require_calibrated(codec: Codec) -> Quantizer | None:
    if not codec.calibrated:
        raise InvalidStateError(f"codec {codec.kind} must be calibrated before use")
    return codec.quantizer


def encode(codec: Codec, chunk) -> np.ndarray:
    a = as_chunk(chunk).actions
    q = _require_calibrated(codec)
    if codec.kind == "bins256":
        return q.encode(a)
    if codec.kind == "dct8":
        if a.shape[0] < codec.n_coeffs:
            raise ValueError(f"chunk shorter than {codec.n_coeffs} coefficients")
        return dct(a, type=2, norm="ortho", axis=0)[: codec.n_coeffs]
    ctrl = fit_least_squares(a, codec.n_coeffs, codec.degree).curve.control_points
    if codec.kind == "bspline_discrete":
        return q.encode(ctrl)
    return np.array(ctrl)


def decode(codec: Codec, code: np.ndarray, T: int) -> np.ndarray:
    code = np.asarray(code)
    q = _require_calibrated(codec)
    if code.ndim != 2:
        raise ValueError(f"code must be 2-D, got shape {code.shape}")
    if codec.kind == "bins256":
        if code.shape[0] != T:
            raise ValueError(f"bins256 code has {code.shape[0]} rows, expected {T}")
        return q.decode(code)
    if code.shape[0] != codec.n_coeffs:
        raise ValueError(f"expected {codec.n_coeffs} code rows, got {code.shape[0]}")
    if codec.kind == "dct8":
        if T < codec.n_coeffs:
            raise ValueError(f"T={T} shorter than {codec.n_coeffs} coefficients")
        spectrum = np.zeros((T, code.shape[1]))
        spectrum[: codec.n_coeffs] = code
        return idct(spectrum, type=2, norm="ortho", axis=0)
    ctrl = q.decode(code) if codec.kind == "bspline_discrete" else code.astype(float)
    return reconstruct(curve_from_points(ctrl, codec.degree), T).actions


def roundtrip(codec: Codec, chunk) -> np.ndarray:
    a = as_chunk(chunk).actions
    return decode(codec, encode(codec, a), a.shape[0])


@dataclass(frozen=True)
class ReprScore:
    mean_error: float
    snr_db: float
    rmse: float = 0.0

    def to_dict(self) -> dict:
        snr = self.snr_db if math.isfinite(self.snr_db) else "inf"
        return {"mean_error": self.mean_error, "snr_db": snr, "rmse": self.rmse}


def snr_db(signal_power: float, error_power: float) -> float:
    if error_power == 0:
        return math.inf
    return 10.0 * math.log10(signal_power / error_power)


def score(codec: Codec, dataset: Sequence) -> ReprScore:
    """Mean absolute error and pooled SNR of ``codec`` over ``dataset``."""
    chunks = [as_chunk(c).actions for c in dataset]
    if not chunks:
        raise ValueError("dataset must be non-empty")
    abs_sum = sq_err = sig = 0.0
    count = 0
    for a in chunks:
        err = a - roundtrip(codec, a)
        abs_sum += float(np.abs(err).sum())
        sq_err += float((err**2).sum())
        sig += float((a**2).sum())
        count += a.size
    return ReprScore(abs_sum / count, snr_db(sig, sq_err), math.sqrt(sq_err / count))


def chunk_errors(codec: Codec, dataset: Sequence) -> np.ndarray:
    """Per-chunk mean absolute reconstruction error."""
    return np.array([np.abs(as_chunk(c).actions - roundtrip(codec, c)).mean() for c in dataset])


def score_all(dataset: Sequence, kinds: Sequence[str] = KINDS, **kwargs) -> dict[str, tuple[Codec, ReprScore]]:
    out = {}
    for kind in kinds:
        codec = make_codec(kind, **kwargs).calibrate(dataset)
        out[kind] = (codec, score(codec, dataset))
    return out
