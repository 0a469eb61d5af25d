"""Baseline precoders and a projected-gradient sum-rate optimizer."""

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, DegenerateInputError, OptimizerError
from .metrics import closed_form_terms, sum_rate_tensor

log = logging.getLogger(__name__)

COND_WARN = 1e8
COND_FAIL = 1e12


def normalize_power(W, P_T):
    """Scale ``W`` (or each matrix of a batch) to total power ``P_T``."""
    W = np.asarray(W)
    power = (W.real**2 + W.imag**2).sum(axis=(-2, -1), keepdims=True)
    if np.any(power <= 0):
        raise DegenerateInputError("cannot normalize an all-zero precoder")
    return W * np.sqrt(P_T / power)


def mrt(H, P_T):
    """Maximum-ratio transmission: columns proportional to conj(h_k)."""
    return normalize_power(np.conj(np.asarray(H)), P_T)


def zf(H, P_T):
    """Zero-forcing precoder with H^T W proportional to the identity.

    Solved through a QR factorization of conj(H). For a single user this is
    MRT and the MRT expression is returned directly.
    """
    H = np.asarray(H)
    if H.ndim == 3:
        return np.stack([zf(h, P_T) for h in H])
    M, K = H.shape
    if K == 1:
        return mrt(H, P_T)
    sv = np.linalg.svd(H, compute_uv=False)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if cond > COND_FAIL:
        raise DegenerateInputError(f"channel is rank deficient (condition number {cond:.3g})")
    if cond > COND_WARN:
        log.warning("ill-conditioned channel, condition number %.3g", cond)
    Q, R = np.linalg.qr(np.conj(H))
    # H^T = R^H Q^H, so W = Q R^{-H} is its right inverse.
    W = Q @ np.linalg.inv(np.conj(R).T)
    return normalize_power(W, P_T)


@dataclass
class PGDConfig:
    step: float = 0.1
    backtrack: float = 0.5
    max_iter: int = 500
    restarts: int = 10
    tol: float = 1e-10
    max_backtracks: int = 40
    constraint: str = "ball"

    def __post_init__(self):
        if self.restarts < 1 or self.step <= 0 or not (0 < self.backtrack < 1):
            raise ConfigurationError("PGDConfig needs restarts >= 1, step > 0, 0 < backtrack < 1")
        if self.constraint not in ("ball", "sphere"):
            raise ConfigurationError(f"constraint must be 'ball' or 'sphere', got {self.constraint!r}")


def _project(W, P_T, sphere=False):
    power = (W.real**2 + W.imag**2).sum()
    if sphere or power > P_T:
        W = W * np.sqrt(P_T / power)
    return W


def _objective(H, W, pa, sigma_v2):
    return float(closed_form_terms(H, W, pa, sigma_v2).sum_rate)


def _gradient(H, W, pa, sigma_v2):
    g = ad.Graph()
    Wr = g.leaf(W.real[None].copy())
    Wi = g.leaf(W.imag[None].copy())
    total = ad.sum(sum_rate_tensor(H[None], Wr, Wi, pa, sigma_v2))
    grads = g.backward(total)
    return grads[Wr.node][0] + 1j * grads[Wi.node][0]


def _ascend(H, W, pa, sigma_v2, P_T, cfg):
    f = _objective(H, W, pa, sigma_v2)
    step = cfg.step
    for _ in range(cfg.max_iter):
        grad = _gradient(H, W, pa, sigma_v2)
        for _ in range(cfg.max_backtracks):
            cand = _project(W + step * grad, P_T, cfg.constraint == "sphere")
            fc = _objective(H, cand, pa, sigma_v2)
            if np.isfinite(fc) and fc >= f:
                break
            step *= cfg.backtrack
        else:
            break
        gain = fc - f
        W, f = cand, fc
        step /= cfg.backtrack
        if gain <= cfg.tol * max(1.0, abs(f)):
            break
    return W, f


def pgd_optimize(H, pa, sigma_v2, P_T, cfg=None, rng=None):
    """Projected gradient ascent on the closed-form sum rate.

    Restart 0 starts from ZF, the others from random CN(0, 1) matrices
    scaled to full power. Each run is monotone in the objective thanks to
    backtracking. The best run is returned, ties going to the lowest index.

    With ``cfg.constraint == "ball"`` iterates are projected onto
    Tr(W W^H) <= P_T; ``"sphere"`` keeps them at exactly P_T, the feasible
    set of the network's power layer.
    """
    cfg = cfg or PGDConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    H = np.asarray(H, dtype=complex)
    M, K = H.shape
    best_W, best_f = None, -np.inf
    for i in range(cfg.restarts):
        if i == 0:
            W0 = zf(H, P_T)
        else:
            z = rng.standard_normal((M, K, 2))
            W0 = normalize_power(z[..., 0] + 1j * z[..., 1], P_T)
        W, f = _ascend(H, W0, pa, sigma_v2, P_T, cfg)
        if np.isfinite(f) and f > best_f:
            best_W, best_f = W, f
    if best_W is None:
        raise OptimizerError("every PGD restart produced a non-finite objective")
    return best_W
