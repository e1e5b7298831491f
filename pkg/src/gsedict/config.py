"""Run configuration in a flat ``key = value`` text format.

Blank lines and ``#`` comments are ignored.  Recognised keys (defaults in
brackets)::

    latent_shape    c,h,w                       [4,64,64]
    f_c, f_hw, l    replication / bits per dim  [1, 8, 1]
    steps           diffusion steps T           [50]
    p               EDICT mixing factor         [0.93]
    gamma           toy denoiser gain           [0.8]
    denoiser_seed, image_seed, user_seed, distortion_seed, key_seed
    n_images        images per campaign         [20]
    n_users         traceability database size  [100]
    fpr             target false positive rate  [1e-6]
    distortions     comma list of distortion strings  [all ten kinds]
    modes           comma list of ddim/edict    [ddim,edict]
    workers         evaluation threads          [1]
    output_dir      report directory            [results]
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .codec import WatermarkConfig
from .distortions import KINDS, Distortion
from .edict import check_p
from .errors import ConfigError, DistortionError
from .latent import make_rng
from .toy import MODES


def key_from_seed(seed: int) -> tuple[bytes, bytes]:
    raw = make_rng(seed).bytes(44)
    return raw[:32], raw[32:]


@dataclass
class RunConfig:
    latent_shape: tuple[int, int, int] = (4, 64, 64)
    f_c: int = 1
    f_hw: int = 8
    l: int = 1
    steps: int = 50
    p: float = 0.93
    gamma: float = 0.8
    denoiser_seed: int = 0
    image_seed: int = 0
    user_seed: int = 1
    distortion_seed: int = 2
    key_seed: int = 3
    n_images: int = 20
    n_users: int = 100
    fpr: float = 1e-6
    distortions: tuple[str, ...] = tuple(KINDS)
    modes: tuple[str, ...] = MODES
    workers: int = 1
    output_dir: str = "results"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        self.watermark_config()
        try:
            check_p(self.p)
            self.distortion_list()
        except DistortionError as exc:
            raise ConfigError(str(exc)) from None
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.steps < 0 or (self.steps and 1000 % self.steps):
            raise ConfigError("steps must divide 1000")
        if self.latent_shape[0] != 4 or self.latent_shape[1] % 2 or self.latent_shape[2] % 2:
            raise ConfigError("toy pipeline needs a (4, even, even) latent")
        bad = set(self.modes) - set(MODES)
        if bad:
            raise ConfigError(f"unknown mode(s) {sorted(bad)}")
        if self.n_images < 0 or self.n_users < 1 or self.workers < 1:
            raise ConfigError("n_images >= 0, n_users >= 1 and workers >= 1 required")
        if not 0 < self.fpr < 1:
            raise ConfigError("fpr must lie in (0, 1)")

    def watermark_config(self, key: bytes = bytes(32), nonce: bytes = bytes(12)) -> WatermarkConfig:
        try:
            return WatermarkConfig(tuple(self.latent_shape), self.f_c, self.f_hw, self.l, key, nonce)
        except (ConfigError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def distortion_list(self) -> list[Distortion]:
        return [Distortion.parse(s) for s in self.distortions]

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        """Digest of everything that affects generated images or recovery."""
        skip = {"output_dir", "workers"}
        text = "".join(line + "\n" for line in self.dumps().splitlines()
                       if line.split(" = ")[0] not in skip)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if not sep or key not in known:
                raise ConfigError(f"line {lineno}: unknown or malformed entry {line!r}")
            kwargs[key] = _coerce(key, val, cls.__dataclass_fields__[key].default)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.loads(text)


def _coerce(key, val, default):
    try:
        if key == "latent_shape":
            return tuple(int(x) for x in val.split(","))
        if isinstance(default, tuple):
            return tuple(x.strip() for x in val.split(",") if x.strip())
        if isinstance(default, bool):
            return val.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(val)
        if isinstance(default, float):
            return float(val)
        return val
    except ValueError:
        raise ConfigError(f"bad value for {key}: {val!r}") from None
