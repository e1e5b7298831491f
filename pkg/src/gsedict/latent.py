"""Latent tensors, seeded randomness and the standard normal CDF / quantile.

A latent is a plain ``float64`` numpy array of shape ``(c, h, w)``.  All
randomness goes through :func:`make_rng`, which is numpy's PCG64 bit
generator; a given seed yields the same stream on every platform.
"""
from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .errors import DomainError, ShapeError

LatentTensor = np.ndarray

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def check_shape(shape) -> tuple[int, int, int]:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or min(shape) < 1:
        raise ShapeError(f"latent shape must be three positive ints, got {shape}")
    return shape


def as_latent(data, shape=None) -> LatentTensor:
    """Validate ``data`` as a finite rank-3 float64 latent."""
    arr = np.asarray(data, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(check_shape(shape))
    check_shape(arr.shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError("latent contains non-finite values")
    return arr


def standard_normal_tensor(shape, rng: np.random.Generator) -> LatentTensor:
    return rng.standard_normal(check_shape(shape))


def normal_cdf(z):
    return ndtr(z)


# Acklam's rational approximation for the lower region / central region,
# accurate to ~1e-9 before refinement.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _poly(coeffs, x):
    acc = np.zeros_like(x)
    for c in coeffs:
        acc = acc * x + c
    return acc


def _lower_quantile(u: np.ndarray) -> np.ndarray:
    # u in (0, 0.5]; evaluating the lower tail keeps the residual accurate
    x = np.empty_like(u)
    tail = u < _P_LOW
    if np.any(tail):
        q = np.sqrt(-2.0 * np.log(u[tail]))
        x[tail] = _poly(_C, q) / (_poly(_D, q) * q + 1.0)
    mid = ~tail
    if np.any(mid):
        q = u[mid] - 0.5
        r = q * q
        x[mid] = _poly(_A, r) * q / (_poly(_B, r) * r + 1.0)
    # one Halley step on Phi(x) - u
    e = ndtr(x) - u
    d = e * _SQRT_2PI * np.exp(0.5 * x * x)
    return x - d / (1.0 + 0.5 * x * d)


def normal_quantile(u):
    """Inverse of :func:`normal_cdf` on the open interval (0, 1)."""
    arr = np.asarray(u, dtype=np.float64)
    if np.any(~(arr > 0.0)) or np.any(~(arr < 1.0)):
        raise DomainError("normal_quantile requires 0 < u < 1")
    flat = arr.reshape(-1)
    out = np.empty_like(flat)
    upper = flat > 0.5
    out[~upper] = _lower_quantile(flat[~upper])
    # 1 - u is exact for u >= 0.5
    out[upper] = -_lower_quantile(1.0 - flat[upper])
    out = out.reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


_LAT_HEADER = struct.Struct("<3I")


def save_latent(path, z: LatentTensor) -> None:
    """Write ``z`` as three little-endian uint32 dims followed by float64 data."""
    z = as_latent(z)
    with open(path, "wb") as fh:
        fh.write(_LAT_HEADER.pack(*z.shape))
        fh.write(z.astype("<f8").tobytes(order="C"))


def load_latent(path) -> LatentTensor:
    raw = Path(path).read_bytes()
    if len(raw) < _LAT_HEADER.size:
        raise ShapeError(f"{path}: truncated .lat header")
    shape = check_shape(_LAT_HEADER.unpack_from(raw))
    body = raw[_LAT_HEADER.size:]
    if len(body) != 8 * math.prod(shape):
        raise ShapeError(f"{path}: payload does not match dims {shape}")
    return as_latent(np.frombuffer(body, dtype="<f8").reshape(shape).astype(np.float64))
