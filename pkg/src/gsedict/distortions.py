"""Image manipulations applied before watermark recovery.

Images are ``(1, H, W)`` uint8 arrays.  Distortions are written as
strings ``kind[:name=value]...``, e.g. ``gaunoise:sigma=0.05:seed=3``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.fft import dctn, idctn

from .errors import DistortionError
from .latent import make_rng

# kind -> (default params, stochastic)
KINDS: dict[str, tuple[dict[str, float], bool]] = {
    "identity": ({}, False),
    "colorjitter": ({"factor": 6.0}, False),
    "gaublur": ({"radius": 4}, False),
    "gaunoise": ({"sigma": 0.05}, True),
    "jpeg": ({"quality": 25}, False),
    "medblur": ({"kernel": 7}, False),
    "randomcrop": ({"area": 0.6}, True),
    "randomdrop": ({"area": 0.8}, True),
    "resize": ({"area": 0.25}, False),
    "spnoise": ({"p": 0.05}, True),
}

DISPLAY_NAMES = {
    "identity": "Identity", "colorjitter": "ColorJitter", "gaublur": "GauBlur",
    "gaunoise": "GauNoise", "jpeg": "JPEG", "medblur": "MedBlur",
    "randomcrop": "RandomCrop", "randomdrop": "RandomDrop", "resize": "Resize",
    "spnoise": "SPNoise",
}

# IJG standard luminance quantisation table
JPEG_LUMA = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

DROP_BLOCK = 8


@dataclass(frozen=True)
class Distortion:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in KINDS:
            raise DistortionError(f"unknown distortion {self.kind!r}")
        defaults, _ = KINDS[kind]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise DistortionError(f"{kind}: unknown parameter(s) {sorted(unknown)}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", {**defaults, **self.params})
        if not KINDS[kind][1]:
            object.__setattr__(self, "seed", 0)
        _validate(kind, self.params)

    @property
    def stochastic(self) -> bool:
        return KINDS[self.kind][1]

    @property
    def name(self) -> str:
        return DISPLAY_NAMES[self.kind]

    def with_seed(self, seed: int) -> "Distortion":
        return Distortion(self.kind, dict(self.params), seed)

    def to_string(self) -> str:
        parts = [self.kind] + [f"{k}={_fmt(v)}" for k, v in self.params.items()]
        if self.stochastic:
            parts.append(f"seed={self.seed}")
        return ":".join(parts)

    @classmethod
    def parse(cls, text: str) -> "Distortion":
        kind, *items = text.strip().split(":")
        params, seed = {}, 0
        for item in items:
            key, sep, val = item.partition("=")
            if not sep:
                raise DistortionError(f"bad distortion parameter {item!r} in {text!r}")
            try:
                if key == "seed":
                    seed = int(val)
                else:
                    params[key] = float(val)
            except ValueError:
                raise DistortionError(f"non-numeric value in {item!r}") from None
        return cls(kind, params, seed)


def _fmt(v) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def _validate(kind: str, params: dict) -> None:
    def need(ok, msg):
        if not ok:
            raise DistortionError(f"{kind}: {msg}")

    if kind == "colorjitter":
        need(params["factor"] >= 0, "factor must be >= 0")
    elif kind == "gaublur":
        need(params["radius"] >= 1 and float(params["radius"]).is_integer(), "radius must be a positive integer")
    elif kind == "gaunoise":
        need(params["sigma"] >= 0, "sigma must be >= 0")
    elif kind == "jpeg":
        need(1 <= params["quality"] <= 100, "quality must be in [1, 100]")
    elif kind == "medblur":
        k = params["kernel"]
        need(k >= 1 and float(k).is_integer() and int(k) % 2 == 1, "kernel must be an odd positive integer")
    elif kind in ("randomcrop", "randomdrop", "resize"):
        need(0 < params["area"] <= 1, "area must be in (0, 1]")
    elif kind == "spnoise":
        need(0 <= params["p"] <= 1, "p must be in [0, 1]")


def standard_suite(seed: int = 0) -> list[Distortion]:
    """Identity plus the nine manipulations at their published parameters."""
    return [Distortion(kind, {}, seed) for kind in KINDS]


def _requantize(x: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


def jpeg_table(quality: float) -> np.ndarray:
    """libjpeg quality scaling of the luminance table."""
    q = int(quality)
    scale = 5000 // q if q < 50 else 200 - 2 * q
    return np.clip(np.floor((JPEG_LUMA * scale + 50) / 100), 1, 255)


def _jpeg_proxy(img2d: np.ndarray, quality: float) -> np.ndarray:
    h, w = img2d.shape
    ph, pw = -h % 8, -w % 8
    x = np.pad(img2d.astype(np.float64), ((0, ph), (0, pw)), mode="edge") - 128.0
    H, W = x.shape
    blocks = x.reshape(H // 8, 8, W // 8, 8).transpose(0, 2, 1, 3)
    table = jpeg_table(quality)
    coef = dctn(blocks, axes=(2, 3), norm="ortho")
    coef = np.round(coef / table) * table
    out = idctn(coef, axes=(2, 3), norm="ortho").transpose(0, 2, 1, 3).reshape(H, W) + 128.0
    return out[:h, :w]


def _bilinear_resize(img2d: np.ndarray, shape) -> np.ndarray:
    zoom = (shape[0] / img2d.shape[0], shape[1] / img2d.shape[1])
    return ndimage.zoom(img2d, zoom, order=1, mode="nearest", grid_mode=True)


def apply(img: np.ndarray, d: Distortion) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 1 or img.dtype != np.uint8:
        raise DistortionError(f"expected a (1, H, W) uint8 image, got {img.shape} {img.dtype}")
    x = img[0]
    h, w = x.shape
    prm = d.params
    rng = make_rng(d.seed)
    k = d.kind

    if k == "identity":
        out = x.copy()
    elif k == "colorjitter":
        out = _requantize(x * prm["factor"])
    elif k == "gaublur":
        r = int(prm["radius"])
        out = _requantize(ndimage.gaussian_filter(x.astype(np.float64), sigma=r / 2.0,
                                                  mode="reflect", radius=r))
    elif k == "gaunoise":
        noisy = x / 255.0 + rng.normal(0.0, prm["sigma"], x.shape)
        out = _requantize(np.clip(noisy, 0.0, 1.0) * 255.0)
    elif k == "jpeg":
        out = _requantize(_jpeg_proxy(x, prm["quality"]))
    elif k == "medblur":
        out = ndimage.median_filter(x, size=int(prm["kernel"]), mode="reflect")
    elif k == "randomcrop":
        s = math.sqrt(prm["area"])
        ch, cw = max(1, round(h * s)), max(1, round(w * s))
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        out = np.zeros_like(x)
        out[top:top + ch, left:left + cw] = x[top:top + ch, left:left + cw]
    elif k == "randomdrop":
        out = x.copy()
        out[drop_mask(x.shape, prm["area"], rng)] = 0
    elif k == "resize":
        s = math.sqrt(prm["area"])
        small = (max(1, round(h * s)), max(1, round(w * s)))
        down = _bilinear_resize(x.astype(np.float64), small)
        out = _requantize(_bilinear_resize(down, (h, w)))
    elif k == "spnoise":
        u = rng.random(x.shape)
        out = x.copy()
        out[u < prm["p"] / 2] = 0
        out[(u >= prm["p"] / 2) & (u < prm["p"])] = 255
    else:  # pragma: no cover - guarded by Distortion.__post_init__
        raise DistortionError(k)
    return out[None].astype(np.uint8)


def drop_mask(shape, area: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask of ``floor(area * H * W / 64)`` random 8x8 blocks."""
    h, w = shape
    bh, bw = h // DROP_BLOCK, w // DROP_BLOCK
    n = min(int(math.floor(area * h * w / DROP_BLOCK ** 2)), bh * bw)
    chosen = rng.choice(bh * bw, size=n, replace=False)
    grid = np.zeros(bh * bw, dtype=bool)
    grid[chosen] = True
    mask = np.zeros(shape, dtype=bool)
    mask[: bh * DROP_BLOCK, : bw * DROP_BLOCK] = np.kron(
        grid.reshape(bh, bw), np.ones((DROP_BLOCK, DROP_BLOCK), dtype=bool))
    return mask
