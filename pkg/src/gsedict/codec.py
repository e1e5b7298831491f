"""Gaussian Shading watermark codec.

Pipeline for embedding::

    Watermark --diffuse--> DiffusedMessage --encrypt--> --embed--> latent z_T

and the reverse for recovery (extract_symbols, decrypt, recover_watermark).

Layout of ``diffuse``: the watermark is a symbol block of shape
``(c/f_c, h/f_hw, w/f_hw)`` which is tiled ``f_c`` times along channels and
``f_hw x f_hw`` times spatially (``np.tile``).  Symbols hold ``l`` bits each,
most significant bit first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

from .errors import CodecError, ConfigError
from .latent import LatentTensor, check_shape, normal_cdf, normal_quantile

# embed clamps the bucket coordinate so latents stay finite
QUANTILE_EPS = 1e-12


@dataclass(frozen=True)
class WatermarkConfig:
    latent_shape: tuple[int, int, int] = (4, 64, 64)
    f_c: int = 1
    f_hw: int = 8
    l: int = 1
    key: bytes = bytes(32)
    nonce: bytes = bytes(12)

    def __post_init__(self):
        object.__setattr__(self, "latent_shape", check_shape(self.latent_shape))
        c, h, w = self.latent_shape
        if self.f_c < 1 or self.f_hw < 1 or self.l < 1:
            raise ConfigError("f_c, f_hw and l must be positive")
        if self.l > 8:
            raise ConfigError("at most 8 bits per latent dimension are supported")
        if c % self.f_c or h % self.f_hw or w % self.f_hw:
            raise ConfigError(
                f"replication factors f_c={self.f_c}, f_hw={self.f_hw} "
                f"do not divide latent shape {self.latent_shape}")
        if len(self.key) != 32:
            raise ConfigError("key must be 32 bytes")
        if len(self.nonce) != 12:
            raise ConfigError("nonce must be 12 bytes")

    @property
    def block_shape(self) -> tuple[int, int, int]:
        c, h, w = self.latent_shape
        return c // self.f_c, h // self.f_hw, w // self.f_hw

    @property
    def n_symbols(self) -> int:
        return math.prod(self.block_shape)

    @property
    def replicas(self) -> int:
        return self.f_c * self.f_hw ** 2

    @property
    def capacity(self) -> int:
        return self.l * self.n_symbols


def capacity(config: WatermarkConfig) -> int:
    return config.capacity


def symbols_to_bits(symbols: np.ndarray, l: int) -> np.ndarray:
    sym = np.asarray(symbols, dtype=np.uint8).reshape(-1)
    shifts = np.arange(l - 1, -1, -1, dtype=np.uint8)
    return ((sym[:, None] >> shifts) & 1).reshape(-1).astype(np.uint8)


def bits_to_symbols(bits: np.ndarray, l: int) -> np.ndarray:
    b = np.asarray(bits, dtype=np.int64).reshape(-1, l)
    weights = 1 << np.arange(l - 1, -1, -1)
    return (b @ weights).astype(np.uint8)


@dataclass
class Watermark:
    symbols: np.ndarray
    l: int = 1
    owner_id: Optional[str] = None

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.uint8).reshape(-1)
        if np.any(self.symbols >= 2 ** self.l):
            raise CodecError(f"symbols must be < 2**{self.l}")

    def __len__(self) -> int:
        """Length in bits."""
        return self.l * self.symbols.size

    @property
    def bits(self) -> np.ndarray:
        return symbols_to_bits(self.symbols, self.l)

    def to_hex(self) -> str:
        return np.packbits(self.bits).tobytes().hex()

    @classmethod
    def from_hex(cls, text: str, config: WatermarkConfig, owner_id=None) -> "Watermark":
        try:
            raw = bytes.fromhex(text.strip())
        except ValueError as exc:
            raise CodecError(f"bad watermark hex: {exc}") from None
        n = config.capacity
        if len(raw) != (n + 7) // 8:
            raise CodecError(f"watermark hex has {len(raw)} bytes, expected {(n + 7) // 8}")
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[:n]
        return cls(bits_to_symbols(bits, config.l), config.l, owner_id)

    @classmethod
    def random(cls, config: WatermarkConfig, rng: np.random.Generator, owner_id=None) -> "Watermark":
        sym = rng.integers(0, 2 ** config.l, size=config.n_symbols, dtype=np.uint8)
        return cls(sym, config.l, owner_id)

    def __eq__(self, other):
        if not isinstance(other, Watermark):
            return NotImplemented
        return self.l == other.l and np.array_equal(self.symbols, other.symbols)


@dataclass
class DiffusedMessage:
    symbols: np.ndarray  # shape (c, h, w)
    l: int = 1
    encrypted: bool = False

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.uint8)
        if np.any(self.symbols >= 2 ** self.l):
            raise CodecError(f"symbols must be < 2**{self.l}")

    def __len__(self) -> int:
        return self.symbols.size


def diffuse(w: Watermark, config: WatermarkConfig) -> DiffusedMessage:
    if w.l != config.l or w.symbols.size != config.n_symbols:
        raise CodecError(
            f"watermark has {len(w)} bits (l={w.l}); config expects "
            f"{config.capacity} (l={config.l})")
    block = w.symbols.reshape(config.block_shape)
    tiled = np.tile(block, (config.f_c, config.f_hw, config.f_hw))
    return DiffusedMessage(tiled, config.l, encrypted=False)


def keystream_symbols(key: bytes, nonce: bytes, count: int, l: int) -> np.ndarray:
    """ChaCha20 (RFC 8439, block counter starting at 0) keystream cut into
    ``count`` symbols of ``l`` bits each, MSB first."""
    nbytes = (count * l + 7) // 8
    cipher = Cipher(algorithms.ChaCha20(key, (0).to_bytes(4, "little") + nonce), mode=None)
    stream = cipher.encryptor().update(bytes(nbytes))
    bits = np.unpackbits(np.frombuffer(stream, dtype=np.uint8))[: count * l]
    return bits_to_symbols(bits, l)


def _xor_stream(d: DiffusedMessage, key: bytes, nonce: bytes) -> np.ndarray:
    ks = keystream_symbols(key, nonce, d.symbols.size, d.l)
    return d.symbols ^ ks.reshape(d.symbols.shape)


def encrypt(d: DiffusedMessage, key: bytes, nonce: bytes) -> DiffusedMessage:
    if d.encrypted:
        raise CodecError("message is already encrypted")
    return DiffusedMessage(_xor_stream(d, key, nonce), d.l, encrypted=True)


def decrypt(d: DiffusedMessage, key: bytes, nonce: bytes) -> DiffusedMessage:
    if not d.encrypted:
        raise CodecError("message is not encrypted")
    return DiffusedMessage(_xor_stream(d, key, nonce), d.l, encrypted=False)


def embed(m: DiffusedMessage, config: WatermarkConfig, rng: np.random.Generator) -> LatentTensor:
    """Sample each latent dimension from the N(0,1) slice selected by its symbol.

    Uniforms are drawn from ``rng`` once per dimension in row-major order.
    """
    if not m.encrypted:
        raise CodecError("embed expects an encrypted message")
    if m.symbols.shape != config.latent_shape:
        raise CodecError(f"message shape {m.symbols.shape} != latent shape {config.latent_shape}")
    u = rng.random(m.symbols.size).reshape(m.symbols.shape)
    coord = (m.symbols + u) / 2.0 ** config.l
    coord = np.clip(coord, QUANTILE_EPS, 1.0 - QUANTILE_EPS)
    return normal_quantile(coord)


def extract_symbols(z: LatentTensor, config: WatermarkConfig) -> DiffusedMessage:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != config.latent_shape:
        raise CodecError(f"latent shape {z.shape} != {config.latent_shape}")
    n = 2 ** config.l
    y = np.floor(normal_cdf(z) * n)
    y = np.clip(y, 0, n - 1).astype(np.uint8)
    return DiffusedMessage(y, config.l, encrypted=True)


def recover_watermark(m: DiffusedMessage, config: WatermarkConfig) -> Watermark:
    """Plurality vote over the replicas of each symbol; ties go to the lowest symbol."""
    if m.encrypted:
        raise CodecError("recover_watermark expects a decrypted message")
    cb, hb, wb = config.block_shape
    f_c, f_hw = config.f_c, config.f_hw
    grid = m.symbols.reshape(f_c, cb, f_hw, hb, f_hw, wb)
    grid = grid.transpose(1, 3, 5, 0, 2, 4).reshape(cb * hb * wb, -1)
    n = 2 ** config.l
    counts = np.stack([(grid == v).sum(axis=1) for v in range(n)], axis=1)
    # argmax returns the first maximum, i.e. the lowest tied symbol
    return Watermark(np.argmax(counts, axis=1).astype(np.uint8), config.l)


def bit_accuracy(w: Watermark, w_hat: Watermark) -> float:
    if len(w) != len(w_hat):
        raise CodecError(f"length mismatch: {len(w)} vs {len(w_hat)} bits")
    return float(np.mean(w.bits == w_hat.bits))


def encode_watermark(w: Watermark, config: WatermarkConfig, rng: np.random.Generator) -> LatentTensor:
    """diffuse -> encrypt -> embed."""
    return embed(encrypt(diffuse(w, config), config.key, config.nonce), config, rng)


def decode_watermark(z: LatentTensor, config: WatermarkConfig) -> Watermark:
    """extract -> decrypt -> majority vote."""
    m = decrypt(extract_symbols(z, config), config.key, config.nonce)
    return recover_watermark(m, config)
