"""Deterministic DDIM stepping and EDICT coupled-latent sampling / inversion.

Timesteps are schedule indices ``t = 0..T`` with ``alpha_bar[0] = 1``.  One
DDIM step maps a latent at ``t`` to ``t - 1``::

    x_{t-1} = a_t * x_t + b_t * eps(q, t)

where ``q`` is the latent the noise prediction is evaluated on.  EDICT
evaluates it on the partner latent of the coupled pair, so every step is an
affine function of the latent being updated and can be undone exactly.

Parity convention: at even ``t`` the x-series is updated first, at odd ``t``
the roles of x and y are swapped.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import ConfigError, ShapeError
from .latent import LatentTensor

DEFAULT_P = 0.93


class Denoiser(Protocol):
    def eps(self, z: LatentTensor, t: int) -> LatentTensor: ...


class ZeroDenoiser:
    def eps(self, z, t):
        return np.zeros_like(z)


@dataclass(frozen=True)
class DiffusionSchedule:
    alpha_bar: np.ndarray  # length T + 1, alpha_bar[0] == 1

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.ndim != 1 or ab.size < 1:
            raise ConfigError("alpha_bar must be a non-empty 1-D array")
        if ab[0] != 1.0:
            raise ConfigError("alpha_bar[0] must equal 1")
        if np.any(ab <= 0) or np.any(ab > 1) or np.any(np.diff(ab) >= 0):
            raise ConfigError("alpha_bar must be strictly decreasing inside (0, 1]")
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def T(self) -> int:
        return self.alpha_bar.size - 1

    @classmethod
    def linear(cls, T: int = 50, beta_start: float = 1e-4, beta_end: float = 0.02,
               base_steps: int = 1000) -> "DiffusionSchedule":
        """DDPM linear-beta schedule subsampled to ``T`` evenly spaced steps.

        Step ``k`` (1-based) uses base timestep ``(k - 1) * base_steps // T``.
        """
        if T < 0 or (T and base_steps % T):
            raise ConfigError(f"T={T} must divide base_steps={base_steps}")
        betas = np.linspace(beta_start, beta_end, base_steps)
        base = np.cumprod(1.0 - betas)
        idx = np.arange(T) * (base_steps // T) if T else np.arange(0)
        return cls(np.concatenate([[1.0], base[idx]]))

    def dumps(self) -> str:
        return "".join(f"{v!r}\n" for v in self.alpha_bar.tolist())

    @classmethod
    def loads(cls, text: str) -> "DiffusionSchedule":
        vals = [float(line) for line in text.split() if line.strip()]
        return cls(np.array(vals))


@dataclass(frozen=True)
class CoupledLatents:
    x: LatentTensor
    y: LatentTensor
    p: float = DEFAULT_P

    def __post_init__(self):
        if np.shape(self.x) != np.shape(self.y):
            raise ShapeError(f"coupled shapes differ: {np.shape(self.x)} vs {np.shape(self.y)}")
        check_p(self.p)

    def swapped(self) -> "CoupledLatents":
        return CoupledLatents(self.y, self.x, self.p)


def check_p(p: float) -> None:
    if not 0.0 < p <= 1.0:
        raise ConfigError(f"mixing factor p must be in (0, 1], got {p}")


def ddim_coeffs(schedule: DiffusionSchedule, t: int) -> tuple[float, float]:
    if not 1 <= t <= schedule.T:
        raise ValueError(f"timestep {t} outside [1, {schedule.T}]")
    ab_t = schedule.alpha_bar[t]
    ab_prev = schedule.alpha_bar[t - 1]
    a = np.sqrt(ab_prev / ab_t)
    b = np.sqrt(1.0 - ab_prev) - np.sqrt(ab_prev * (1.0 - ab_t) / ab_t)
    return float(a), float(b)


def _check_pair(x, q):
    if np.shape(x) != np.shape(q):
        raise ShapeError(f"shape mismatch: {np.shape(x)} vs {np.shape(q)}")


def denoise_step(x, t, partner, denoiser: Denoiser, schedule: DiffusionSchedule):
    _check_pair(x, partner)
    a, b = ddim_coeffs(schedule, t)
    return a * x + b * denoiser.eps(partner, t)


def addnoise_step(x, t, partner, denoiser: Denoiser, schedule: DiffusionSchedule):
    """Exact inverse of :func:`denoise_step` at the same ``t`` and partner."""
    _check_pair(x, partner)
    a, b = ddim_coeffs(schedule, t)
    return (x - b * denoiser.eps(partner, t)) / a


def _denoise_xy(x, y, t, p, denoiser, schedule):
    x_inter = denoise_step(x, t, y, denoiser, schedule)
    y_inter = denoise_step(y, t, x_inter, denoiser, schedule)
    x_new = p * x_inter + (1.0 - p) * y_inter
    y_new = p * y_inter + (1.0 - p) * x_new
    return x_new, y_new


def _noise_xy(x, y, t, p, denoiser, schedule):
    y_inter = (y - (1.0 - p) * x) / p
    x_inter = (x - (1.0 - p) * y_inter) / p
    y_new = addnoise_step(y_inter, t, x_inter, denoiser, schedule)
    x_new = addnoise_step(x_inter, t, y_new, denoiser, schedule)
    return x_new, y_new


def edict_denoise_step(cl: CoupledLatents, t: int, denoiser: Denoiser,
                       schedule: DiffusionSchedule, step_parity: int) -> CoupledLatents:
    check_p(cl.p)
    if step_parity % 2:
        y, x = _denoise_xy(cl.y, cl.x, t, cl.p, denoiser, schedule)
    else:
        x, y = _denoise_xy(cl.x, cl.y, t, cl.p, denoiser, schedule)
    return CoupledLatents(x, y, cl.p)


def edict_noise_step(cl: CoupledLatents, t: int, denoiser: Denoiser,
                     schedule: DiffusionSchedule, step_parity: int) -> CoupledLatents:
    """Inverse of :func:`edict_denoise_step` with the same ``t`` and parity."""
    check_p(cl.p)
    if step_parity % 2:
        y, x = _noise_xy(cl.y, cl.x, t, cl.p, denoiser, schedule)
    else:
        x, y = _noise_xy(cl.x, cl.y, t, cl.p, denoiser, schedule)
    return CoupledLatents(x, y, cl.p)


def edict_sample(z_T, denoiser: Denoiser, schedule: DiffusionSchedule,
                 p: float = DEFAULT_P, *, return_pair: bool = False):
    """Run the coupled chain from ``t = T`` down to 0 starting at ``(z_T, z_T)``.

    Returns the x member, or the whole pair with ``return_pair=True``.
    """
    z_T = np.asarray(z_T, dtype=np.float64)
    cl = CoupledLatents(z_T, z_T.copy(), p)
    for t in range(schedule.T, 0, -1):
        cl = edict_denoise_step(cl, t, denoiser, schedule, t % 2)
    return cl if return_pair else cl.x


def edict_invert(z_0, denoiser: Denoiser, schedule: DiffusionSchedule,
                 p: float = DEFAULT_P, *, return_pair: bool = False):
    """Run the coupled chain from ``t = 0`` up to ``T``.

    A single latent is duplicated into ``(z_0, z_0)``.  Passing the
    :class:`CoupledLatents` returned by ``edict_sample(..., return_pair=True)``
    inverts that chain exactly (its own ``p`` is used).
    """
    if isinstance(z_0, CoupledLatents):
        cl = z_0
    else:
        z_0 = np.asarray(z_0, dtype=np.float64)
        cl = CoupledLatents(z_0, z_0.copy(), p)
    for t in range(1, schedule.T + 1):
        cl = edict_noise_step(cl, t, denoiser, schedule, t % 2)
    return cl if return_pair else cl.x


def ddim_sample(z_T, denoiser: Denoiser, schedule: DiffusionSchedule):
    x = np.asarray(z_T, dtype=np.float64)
    for t in range(schedule.T, 0, -1):
        x = denoise_step(x, t, x, denoiser, schedule)
    return x


def ddim_invert(z_0, denoiser: Denoiser, schedule: DiffusionSchedule):
    """Naive DDIM inversion: the noise prediction is taken at the current latent
    instead of the (unknown) one at the next timestep."""
    x = np.asarray(z_0, dtype=np.float64)
    for t in range(1, schedule.T + 1):
        x = addnoise_step(x, t, x, denoiser, schedule)
    return x


def relative_error(estimate, reference) -> float:
    """Sup-norm relative error ``max|estimate - reference| / max|reference|``."""
    ref = np.asarray(reference)
    return float(np.max(np.abs(np.asarray(estimate) - ref)) / np.max(np.abs(ref)))
