"""Downlink system model: channels, symbols, noise and the transmit chain.

Complex quantities are numpy complex arrays here. The convention is
``r = H^T phi(W s) + v`` with H of shape (M, K), i.e. a plain transpose.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, FormatError


@dataclass(frozen=True)
class SystemConfig:
    M: int = 64
    K: int = 1
    P_T: float | None = None
    sigma_v2: float | None = None
    snr_db: float = 20.0

    def __post_init__(self):
        if self.P_T is None:
            object.__setattr__(self, "P_T", float(self.M))
        if self.sigma_v2 is None:
            object.__setattr__(self, "sigma_v2", self.P_T / 10 ** (self.snr_db / 10))
        if not (self.M >= self.K >= 1):
            raise ConfigurationError(f"need M >= K >= 1, got M={self.M}, K={self.K}")
        if self.P_T <= 0 or self.sigma_v2 <= 0:
            raise ConfigurationError("P_T and sigma_v2 must be positive")

    @property
    def p_in(self):
        """Average input power per PA."""
        return self.P_T / self.M


def snr_to_noise(P_T, snr_db):
    """Noise variance giving ``P_T / sigma_v2 = snr_db``."""
    return P_T / 10 ** (np.asarray(snr_db, dtype=float) / 10)


def make_rng(seed):
    return np.random.default_rng(np.random.SeedSequence(seed))


def split_rng(rng, n):
    """Independent child generators; the parent stream is not consumed."""
    return rng.spawn(n)


def complex_normal(rng, shape, var=1.0, dtype=np.complex128):
    """Circularly-symmetric CN(0, var) samples."""
    scale = np.sqrt(var / 2.0)
    z = rng.standard_normal((*shape, 2))
    out = (z[..., 0] + 1j * z[..., 1]) * scale
    return out.astype(dtype, copy=False)


def sample_channel(cfg, rng):
    """One i.i.d. Rayleigh channel, shape (M, K)."""
    return complex_normal(rng, (cfg.M, cfg.K))


def sample_channels(cfg, n, rng):
    """A batch of ``n`` channels, shape (n, M, K)."""
    return complex_normal(rng, (n, cfg.M, cfg.K))


def sample_symbols(K, n, rng):
    """Unit-power CN(0, 1) symbols, shape (n, K)."""
    if n < 1:
        raise ConfigurationError("need at least one symbol vector")
    return complex_normal(rng, (n, K))


def sample_noise(K, n, sigma_v2, rng):
    return complex_normal(rng, (n, K), var=sigma_v2)


def transmit_receive(H, W, pa, s, v=None):
    """Received samples for symbol vectors ``s``.

    ``s`` is (K,) or (n, K); the result has the same leading shape. ``pa``
    is any callable applied elementwise to the per-antenna signals.
    """
    H = np.asarray(H)
    W = np.asarray(W)
    s = np.asarray(s)
    M, K = H.shape
    if W.shape != (M, K) or s.shape[-1] != K:
        raise DimensionError(f"shape mismatch: H {H.shape}, W {W.shape}, s {s.shape}")
    x = s @ W.T
    y = pa(x)
    r = y @ H
    if v is not None:
        v = np.asarray(v)
        if v.shape != r.shape:
            raise DimensionError(f"noise shape {v.shape} != received shape {r.shape}")
        r = r + v
    return r


# dataset files ---------------------------------------------------------------

MAGIC = b"MIMOCH1"
_HEADER = struct.Struct("<7sIIQB")
_PRECISION = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def write_dataset(path, H, precision=4):
    """Write channels (n, M, K) as interleaved little-endian re/im floats."""
    H = np.asarray(H)
    if H.ndim != 3:
        raise DimensionError(f"expected (count, M, K) channels, got {H.shape}")
    if precision not in _PRECISION:
        raise ConfigurationError(f"precision must be 4 or 8 bytes, got {precision}")
    n, M, K = H.shape
    body = np.stack([H.real, H.imag], axis=-1).astype(_PRECISION[precision])
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, M, K, n, precision))
        fh.write(body.tobytes())


def read_dataset(path):
    """Read a channel file written by :func:`write_dataset`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than header")
    magic, M, K, n, precision = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if precision not in _PRECISION:
        raise FormatError(f"{path}: unknown precision byte {precision}")
    expected = n * M * K * 2 * precision
    if len(raw) - _HEADER.size != expected:
        raise FormatError(f"{path}: expected {expected} payload bytes, found {len(raw) - _HEADER.size}")
    body = np.frombuffer(raw, dtype=_PRECISION[precision], offset=_HEADER.size).reshape(n, M, K, 2)
    ctype = np.complex64 if precision == 4 else np.complex128
    return (body[..., 0] + 1j * body[..., 1]).astype(ctype)
