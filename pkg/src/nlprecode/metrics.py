"""SNIDR and achievable sum rate under PA distortion.

Two independent routes are provided. The closed form linearizes a
third-order polynomial PA with Bussgang's theorem and is exact for Gaussian
symbols. The Monte-Carlo route estimates the linear gain and the residual
power of the received signal directly, for any memoryless PA. Noise is
added analytically in both, so the expensive terms are computed once and
reused across noise levels.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, ContractError
from .pa import LinearPA, PolyPA
from .system import sample_symbols

MIN_MC_SAMPLES = 10**4


@dataclass
class MetricsReport:
    """Per-user received power split; all arrays have shape (..., K)."""

    signal: np.ndarray
    interference: np.ndarray
    distortion: np.ndarray
    sigma_v2: float

    @property
    def snidr(self):
        return snidr(self.signal, self.interference, self.distortion, self.sigma_v2)

    @property
    def rate(self):
        return np.log2(1.0 + self.snidr)

    @property
    def sum_rate(self):
        return self.rate.sum(axis=-1)

    def with_noise(self, sigma_v2):
        return MetricsReport(self.signal, self.interference, self.distortion, sigma_v2)


def snidr(signal, interference, distortion, sigma_v2):
    return signal / (interference + distortion + sigma_v2)


def sum_rate(report_or_snidr):
    """Sum over users of log2(1 + SNIDR)."""
    if isinstance(report_or_snidr, MetricsReport):
        return report_or_snidr.sum_rate
    return np.log2(1.0 + np.asarray(report_or_snidr, dtype=float)).sum(axis=-1)


def _as_poly(pa):
    if isinstance(pa, (PolyPA, LinearPA)):
        return pa.as_poly()
    raise ConfigurationError(
        f"closed form needs a polynomial PA, got {type(pa).__name__}; use the Monte-Carlo path"
    )


def _herm(A):
    return np.conj(np.swapaxes(A, -1, -2))


def input_covariance(W):
    """C_x = W W^H (batched over leading axes)."""
    W = np.asarray(W)
    return W @ _herm(W)


def bussgang_gain(W, pa):
    """Diagonal of the Bussgang gain matrix, shape (..., M)."""
    poly = _as_poly(pa)
    d = np.einsum("...mk,...mk->...m", W, np.conj(W)).real
    return poly.beta1 + 2.0 * poly.beta3 * d


def distortion_covariance(W, pa):
    """C_e = 2|beta3|^2 C_x (elementwise) |C_x|^2."""
    poly = _as_poly(pa)
    Cx = input_covariance(W)
    return 2.0 * abs(poly.beta3) ** 2 * Cx * (Cx.real**2 + Cx.imag**2)


def closed_form_terms(H, W, pa, sigma_v2=1.0):
    """Closed-form power split for one instance or a batch (..., M, K)."""
    H = np.asarray(H)
    W = np.asarray(W)
    poly = _as_poly(pa)
    G = bussgang_gain(W, poly)
    T = np.swapaxes(H, -1, -2) @ (G[..., :, None] * W)  # T[k, k'] = h_k^T G w_k'
    P = T.real**2 + T.imag**2
    K = P.shape[-1]
    off = 1.0 - np.eye(K)
    signal = np.diagonal(P, axis1=-2, axis2=-1).copy()
    interference = (P * off).sum(axis=-1)
    if poly.beta3 == 0:
        distortion = np.zeros_like(signal)
    else:
        Ce = distortion_covariance(W, poly)
        distortion = np.einsum("...mk,...mn,...nk->...k", H, Ce, np.conj(H)).real
    return MetricsReport(signal, interference, distortion, sigma_v2)


def snidr_closed_form(H, W, pa, sigma_v2):
    return closed_form_terms(H, W, pa, sigma_v2)


def _mc_block(H, W, pa, n, rng):
    K = H.shape[1]
    s = sample_symbols(K, n, rng)
    r = pa(s @ W.T) @ H
    cross = r.T @ np.conj(s)  # sum_n r_k s_k'^*
    gram = s.T @ np.conj(s)
    power = (r.real**2 + r.imag**2).sum(axis=0)
    return cross, gram, power


def monte_carlo_terms(H, W, pa, sigma_v2, n_samples, rng, block=1 << 15, workers=1):
    """Sample-based power split for any PA, averaged over symbol draws.

    The linear gain B toward user k from symbol k' is the least-squares
    fit of r on s, i.e. E[r s^H] E[s s^H]^-1 with sample moments (the
    second factor tends to I). |B_kk|^2 is the useful signal, the other
    |B_kk'|^2 are interference, and the residual power of r - B s is
    distortion, which keeps it nonnegative at any sample size. Each block of
    ``block`` draws uses its own child stream of ``rng`` and blocks are
    reduced in index order, so the result does not depend on ``workers``.
    """
    if n_samples < MIN_MC_SAMPLES:
        raise ContractError(f"n_samples must be >= {MIN_MC_SAMPLES}, got {n_samples}")
    H = np.asarray(H)
    W = np.asarray(W)
    sizes = [min(block, n_samples - i) for i in range(0, n_samples, block)]
    streams = rng.spawn(len(sizes))
    jobs = list(zip(sizes, streams))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda job: _mc_block(H, W, pa, *job), jobs))
    else:
        parts = [_mc_block(H, W, pa, *job) for job in jobs]
    K = H.shape[1]
    cross = np.zeros((K, K), dtype=complex)
    gram = np.zeros((K, K), dtype=complex)
    power = np.zeros(K)
    for c, g, p in parts:
        cross += c
        gram += g
        power += p
    cross /= n_samples
    gram /= n_samples
    power /= n_samples
    B = np.linalg.solve(gram.T, cross.T).T
    P = B.real**2 + B.imag**2
    signal = np.diagonal(P).copy()
    interference = (P * (1.0 - np.eye(K))).sum(axis=-1)
    explained = np.einsum("ki,ij,kj->k", B, gram, np.conj(B)).real
    distortion = np.maximum(power - explained, 0.0)
    return MetricsReport(signal, interference, distortion, sigma_v2)


def snidr_monte_carlo(H, W, pa, sigma_v2, n_samples, rng, **kwargs):
    return monte_carlo_terms(H, W, pa, sigma_v2, n_samples, rng, **kwargs)


# differentiable objective ----------------------------------------------------


def sum_rate_tensor(H, Wr, Wi, pa, sigma_v2):
    """Per-instance closed-form sum rate as a graph-connected (B,) tensor.

    ``H`` is a complex (B, M, K) array treated as a constant; ``Wr`` and
    ``Wi`` are (B, M, K) tensors holding the real and imaginary parts of
    the precoder.
    """
    poly = _as_poly(pa)
    dtype = Wr.dtype
    Hr = np.ascontiguousarray(H.real, dtype=dtype)
    Hi = np.ascontiguousarray(H.imag, dtype=dtype)
    HrT = np.ascontiguousarray(np.swapaxes(Hr, 1, 2))
    HiT = np.ascontiguousarray(np.swapaxes(Hi, 1, 2))
    b1 = complex(poly.beta1)
    b3 = complex(poly.beta3)
    K = H.shape[-1]

    d = ad.sum(Wr * Wr + Wi * Wi, axis=2, keepdims=True)
    Gr = b1.real + (2.0 * b3.real) * d
    Gi = b1.imag + (2.0 * b3.imag) * d
    Ar = Gr * Wr - Gi * Wi
    Ai = Gr * Wi + Gi * Wr
    Tr = ad.matmul(HrT, Ar) - ad.matmul(HiT, Ai)
    Ti = ad.matmul(HrT, Ai) + ad.matmul(HiT, Ar)
    P = Tr * Tr + Ti * Ti
    eye = np.eye(K, dtype=dtype)
    signal = ad.sum(P * eye, axis=2)
    leak = ad.sum(P * (1.0 - eye), axis=2) + sigma_v2

    c = 2.0 * abs(b3) ** 2
    if c > 0:
        WrT = ad.swapaxes(Wr, 1, 2)
        WiT = ad.swapaxes(Wi, 1, 2)
        Cr = ad.matmul(Wr, WrT) + ad.matmul(Wi, WiT)
        Ci = ad.matmul(Wi, WrT) - ad.matmul(Wr, WiT)
        mag = (Cr * Cr + Ci * Ci) * c
        Er = Cr * mag
        Ei = Ci * mag
        Yr = ad.matmul(Er, Hr) + ad.matmul(Ei, Hi)
        Yi = ad.matmul(Ei, Hr) - ad.matmul(Er, Hi)
        leak = leak + ad.sum(Yr * Hr - Yi * Hi, axis=1)

    ratio = signal / leak
    return ad.sum(ad.log2(ratio + 1.0), axis=1)


def sum_rate_differentiable(H, Wr, Wi, pa, sigma_v2):
    """Batch-mean closed-form sum rate, graph-connected to ``Wr``/``Wi``."""
    return ad.mean(sum_rate_tensor(H, Wr, Wi, pa, sigma_v2))
