"""Memoryless power-amplifier models and the third-order polynomial fit.

Every model is a frozen dataclass that is callable on complex arrays and
applies the same nonlinearity to every antenna.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateInputError

# Rapp parameters used to derive the polynomial coefficients (unit-gain PA).
RAPP_SMOOTHNESS = 2.0
RAPP_A = -0.315
RAPP_B = 1.137
RAPP_Q = 4.0

# Published third-order coefficients (beta1 = 1) per input back-off in dB.
TABLE_I = {
    -9.0: complex(-19.93e-3, -10.80e-3),
    -7.5: complex(-30.69e-3, -18.85e-3),
    -6.0: complex(-42.26e-3, -24.91e-3),
    -4.5: complex(-56.13e-3, -30.06e-3),
    -3.0: complex(-77.82e-3, -40.12e-3),
    -1.5: complex(-117.3e-3, -65.01e-3),
    0.0: complex(-159.1e-3, -79.25e-3),
}
IBO_GRID = tuple(sorted(TABLE_I))


@dataclass(frozen=True)
class LinearPA:
    gain: complex = 1.0

    def __call__(self, x):
        return self.gain * np.asarray(x)

    def as_poly(self):
        return PolyPA(beta1=self.gain, beta3=0.0)


@dataclass(frozen=True)
class PolyPA:
    beta1: complex = 1.0
    beta3: complex = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.beta1) and np.isfinite(self.beta3)):
            raise ConfigurationError("polynomial coefficients must be finite")

    def __call__(self, x):
        return apply_poly(self, x)

    def as_poly(self):
        return self


@dataclass(frozen=True)
class RappPA:
    p_sat: float
    S: float = RAPP_SMOOTHNESS
    A: float = RAPP_A
    B: float = RAPP_B
    q: float = RAPP_Q

    def __post_init__(self):
        if self.p_sat <= 0 or self.S <= 0 or self.q <= 0:
            raise ConfigurationError("Rapp model needs p_sat, S, q > 0")

    def __call__(self, x):
        return apply_rapp(self, x)


@dataclass(frozen=True)
class ClipPA:
    """Ideal predistorted PA: linear up to saturation, then hard-limited."""

    p_sat: float

    def __post_init__(self):
        if self.p_sat <= 0:
            raise ConfigurationError("clip model needs p_sat > 0")

    def __call__(self, x):
        return apply_clip(self, x)


def apply_poly(pa, x):
    x = np.asarray(x)
    return pa.beta1 * x + pa.beta3 * x * (x.real**2 + x.imag**2)


def apply_rapp(pa, x):
    x = np.asarray(x)
    r = np.abs(x)
    u = r / np.sqrt(pa.p_sat)
    amp = r / (1.0 + u ** (2 * pa.S)) ** (1.0 / (2 * pa.S))
    rq = r**pa.q
    dphi = pa.A * rq / (1.0 + (r / pa.B) ** pa.q)
    return amp * np.exp(1j * (np.angle(x) + dphi))


def apply_clip(pa, x):
    x = np.asarray(x)
    r = np.abs(x)
    limit = np.sqrt(pa.p_sat)
    scale = np.where(r > limit, limit / np.where(r > 0, r, 1.0), 1.0)
    return x * scale


def ibo_to_psat(ibo_db, p_in=1.0):
    """Saturation power giving ``p_in / p_sat`` equal to ``ibo_db``."""
    if p_in <= 0:
        raise ConfigurationError("p_in must be positive")
    return p_in / 10 ** (ibo_db / 10)


def rapp_for_ibo(ibo_db, p_in=1.0):
    return RappPA(p_sat=ibo_to_psat(ibo_db, p_in))


def table_poly(ibo_db):
    """Polynomial PA with the tabulated coefficient for ``ibo_db``."""
    key = float(ibo_db)
    if key not in TABLE_I:
        raise ConfigurationError(f"no tabulated coefficient for IBO {ibo_db} dB; grid is {IBO_GRID}")
    return PolyPA(beta1=1.0, beta3=TABLE_I[key])


def fit_poly(pa, p_in=1.0, n_samples=10**6, seed=0):
    """Least-squares third-order fit to ``pa`` with beta1 pinned to 1.

    Samples are drawn from CN(0, p_in), the marginal distribution of a
    Gaussian precoded signal at one antenna. Returns a :class:`PolyPA`.
    """
    if p_in <= 0:
        raise ConfigurationError("p_in must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    z = rng.standard_normal((n_samples, 2)) * np.sqrt(p_in / 2)
    x = z[:, 0] + 1j * z[:, 1]
    return fit_poly_samples(pa, x)


def fit_poly_samples(pa, x):
    """Closed-form beta3 for given input samples ``x`` (beta1 = 1)."""
    x = np.asarray(x, dtype=complex)
    p = x.real**2 + x.imag**2
    denom = np.sum(p**3)
    if not denom > 0:
        raise DegenerateInputError("cannot fit a polynomial to all-zero samples")
    resid = pa(x) - x
    beta3 = np.sum(np.conj(x) * p * resid) / denom
    return PolyPA(beta1=1.0, beta3=complex(beta3))


# Spelled out for callers that think in terms of the Rapp reference model.
fit_poly_to_rapp = fit_poly


def fit_table(ibo_grid=IBO_GRID, p_in=1.0, n_samples=10**6, seed=0):
    """Refit beta3 at every IBO point; returns a list of (ibo_db, beta3)."""
    return [(ibo, fit_poly(rapp_for_ibo(ibo, p_in), p_in, n_samples, seed).beta3) for ibo in ibo_grid]
