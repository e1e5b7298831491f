"""Desk-scale stand-ins for the latent diffusion model, encoder and decoder.

* :class:`ToyDenoiser` predicts noise as an ideal-Gaussian prior term plus a
  bounded nonlinear residual ``gamma * tanh(M z + c(t))`` mixing each 2x2
  site's 16 values (4 channels x 2 x 2) with a seeded orthogonal matrix.
* :func:`decode` / :func:`encode` map a ``(4, h, w)`` latent to a
  ``(1, 2h, 2w)`` 8-bit grayscale image by a 4 -> 2x2 pixel shuffle and an
  affine map of ``[-4, 4]`` onto ``[0, 255]``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .codec import Watermark, WatermarkConfig, decode_watermark, encode_watermark
from .edict import (DEFAULT_P, DiffusionSchedule, ddim_invert, ddim_sample,
                    edict_invert, edict_sample)
from .errors import ShapeError
from .latent import LatentTensor, make_rng, standard_normal_tensor

LATENT_RANGE = 4.0
MODES = ("ddim", "edict")

# Pixel shuffle as an orthogonal (permutation) matrix: channel k of a site goes
# to pixel (k // 2, k % 2).  A permutation keeps the 8-bit rounding error of
# every latent value within half a quantisation step.
SHUFFLE = np.eye(4)


def _to_sites(z: np.ndarray) -> np.ndarray:
    c, h, w = z.shape
    return z.reshape(c, h // 2, 2, w // 2, 2).transpose(1, 3, 0, 2, 4).reshape(-1, 4 * c)


def _from_sites(v: np.ndarray, shape) -> np.ndarray:
    c, h, w = shape
    return v.reshape(h // 2, w // 2, c, 2, 2).transpose(2, 0, 3, 1, 4).reshape(shape)


def orthogonal_matrix(d: int, seed: int) -> np.ndarray:
    g = make_rng(seed).standard_normal((d, d))
    q, r = np.linalg.qr(g)
    return q * np.sign(np.diag(r))


def time_embedding(t: int, d: int = 16, scale: float = 0.3) -> np.ndarray:
    freqs = 10000.0 ** (-(np.arange(d) // 2) / (d // 2))
    phase = t * freqs
    return scale * np.where(np.arange(d) % 2 == 0, np.sin(phase), np.cos(phase))


@dataclass
class ToyDenoiser:
    """Deterministic noise predictor.

    With a ``schedule`` the prediction is
    ``sqrt(1 - ab_t) * z + sqrt(ab_t) * residual(z, t)``; the first term is the
    exact posterior-mean noise for N(0, I) data, so sampling keeps latents at
    unit scale.  Without a schedule only the residual is returned.
    """

    schedule: Optional[DiffusionSchedule] = None
    gamma: float = 0.8
    seed: int = 0
    time_scale: float = 0.3
    channels: int = 4
    mix_matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        self.mix_matrix = orthogonal_matrix(4 * self.channels, self.seed)

    def residual(self, z: LatentTensor, t: int) -> LatentTensor:
        z = np.asarray(z, dtype=np.float64)
        c, h, w = z.shape
        if c != self.channels or h % 2 or w % 2:
            raise ShapeError(f"toy denoiser needs ({self.channels}, even, even) latents, got {z.shape}")
        d = 4 * self.channels
        pre = _to_sites(z) @ self.mix_matrix.T + time_embedding(t, d, self.time_scale)
        return _from_sites(self.gamma * np.tanh(pre), z.shape)

    def eps(self, z: LatentTensor, t: int) -> LatentTensor:
        r = self.residual(z, t)
        if self.schedule is None:
            return r
        ab = self.schedule.alpha_bar[t]
        return np.sqrt(1.0 - ab) * np.asarray(z, dtype=np.float64) + np.sqrt(ab) * r


def toy_eps(z: LatentTensor, t: int, denoiser: ToyDenoiser) -> LatentTensor:
    return denoiser.residual(z, t)


def decode(z0: LatentTensor, quantize: bool = True) -> np.ndarray:
    """Latent ``(4, h, w)`` -> image ``(1, 2h, 2w)``; uint8 unless ``quantize=False``."""
    z0 = np.asarray(z0, dtype=np.float64)
    if z0.ndim != 3 or z0.shape[0] != 4:
        raise ShapeError(f"decode expects a (4, h, w) latent, got {z0.shape}")
    _, h, w = z0.shape
    v = np.einsum("ij,jhw->ihw", SHUFFLE, z0)
    img = v.reshape(2, 2, h, w).transpose(2, 0, 3, 1).reshape(1, 2 * h, 2 * w)
    pix = np.clip((img + LATENT_RANGE) * (255.0 / (2 * LATENT_RANGE)), 0.0, 255.0)
    if not quantize:
        return pix
    return np.floor(pix + 0.5).astype(np.uint8)


def encode(img: np.ndarray) -> LatentTensor:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 1 or img.shape[1] % 2 or img.shape[2] % 2:
        raise ShapeError(f"encode expects a (1, even, even) image, got {img.shape}")
    _, hh, ww = img.shape
    v = img[0].astype(np.float64) * (2 * LATENT_RANGE / 255.0) - LATENT_RANGE
    v = v.reshape(hh // 2, 2, ww // 2, 2).transpose(1, 3, 0, 2).reshape(4, hh // 2, ww // 2)
    return np.einsum("ji,jhw->ihw", SHUFFLE, v)


def sample_latent(z_T, denoiser, schedule, p=DEFAULT_P, mode="edict"):
    if mode == "edict":
        return edict_sample(z_T, denoiser, schedule, p)
    if mode == "ddim":
        return ddim_sample(z_T, denoiser, schedule)
    raise ValueError(f"unknown mode {mode!r}")


def invert_latent(z0, denoiser, schedule, p=DEFAULT_P, mode="edict"):
    if mode == "edict":
        return edict_invert(z0, denoiser, schedule, p)
    if mode == "ddim":
        return ddim_invert(z0, denoiser, schedule)
    raise ValueError(f"unknown mode {mode!r}")


def generate_watermarked(w: Watermark, config: WatermarkConfig, denoiser, schedule,
                         p: float, rng: np.random.Generator, *, mode: str = "edict",
                         quantize: bool = True):
    """embed -> sample -> decode.  Returns ``(image, z_T)``."""
    z_T = encode_watermark(w, config, rng)
    z0 = sample_latent(z_T, denoiser, schedule, p, mode)
    return decode(z0, quantize), z_T


def generate_plain(config: WatermarkConfig, denoiser, schedule, p: float,
                   rng: np.random.Generator, *, mode: str = "edict"):
    """Image from ordinary N(0, 1) noise, no watermark."""
    z_T = standard_normal_tensor(config.latent_shape, rng)
    return decode(sample_latent(z_T, denoiser, schedule, p, mode)), z_T


def recover_from_image(img, config: WatermarkConfig, denoiser, schedule, p: float,
                       mode: str = "edict") -> Watermark:
    """encode -> invert -> extract -> decrypt -> majority vote."""
    z_T_hat = invert_latent(encode(img), denoiser, schedule, p, mode)
    return decode_watermark(z_T_hat, config)


@dataclass
class ToyPipeline:
    config: WatermarkConfig
    steps: int = 50
    p: float = DEFAULT_P
    gamma: float = 0.8
    denoiser_seed: int = 0
    schedule: DiffusionSchedule = field(init=False)
    denoiser: ToyDenoiser = field(init=False)

    def __post_init__(self):
        self.schedule = DiffusionSchedule.linear(self.steps)
        self.denoiser = ToyDenoiser(self.schedule, self.gamma, self.denoiser_seed,
                                    channels=self.config.latent_shape[0])

    def generate(self, w: Watermark, seed: int, mode: str = "edict", quantize: bool = True):
        return generate_watermarked(w, self.config, self.denoiser, self.schedule, self.p,
                                    make_rng(seed), mode=mode, quantize=quantize)

    def generate_plain(self, seed: int, mode: str = "edict"):
        return generate_plain(self.config, self.denoiser, self.schedule, self.p,
                              make_rng(seed), mode=mode)

    def recover(self, img, mode: str = "edict") -> Watermark:
        return recover_from_image(img, self.config, self.denoiser, self.schedule, self.p, mode)


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim == 3:
        img = img[0]
    if img.dtype != np.uint8:
        raise ValueError("PGM output needs uint8 pixels")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


_PGM_TOKEN = re.compile(rb"(?:\s+|#[^\n]*\n)*(\S+)")


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) 8-bit PGM as a ``(1, H, W)`` uint8 array."""
    raw = Path(path).read_bytes()
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PGM_TOKEN.match(raw, pos)
        if not m:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5)")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    body = raw[pos + 1: pos + 1 + w * h]
    if len(body) != w * h:
        raise ValueError(f"{path}: truncated PGM data")
    return np.frombuffer(body, dtype=np.uint8).reshape(1, h, w).copy()
