"""Self-supervised training of the circular CNN on the negated sum rate."""

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import ccnn
from .adam import AdamState, adam_step
from .errors import ConfigurationError, OptimizerError
from .metrics import closed_form_terms, monte_carlo_terms, sum_rate_differentiable
from .pa import table_poly
from .precoders import zf
from .system import read_dataset, sample_channels, snr_to_noise, write_dataset, SystemConfig

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class TrainConfig:
    M: int = 16
    K: int = 2
    n_train: int = 20000
    n_val: int = 1000
    n_test: int = 2000
    batch_size: int = 256
    lr: float = 5e-3
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    min_lr: float = 1e-5
    early_stop_patience: int = 8
    max_epochs: int = 50
    ibo_db: float = -3.0
    snr_db: float = 20.0
    P_T: float | None = None
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.P_T is None:
            self.P_T = float(self.M)
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2 (batch norm)")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ConfigurationError("dataset sizes must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def sigma_v2(self):
        return float(snr_to_noise(self.P_T, self.snr_db))

    @property
    def pa(self):
        return table_poly(self.ibo_db)

    @classmethod
    def full_scale(cls, **overrides):
        base = dict(M=64, n_train=200000, n_val=2000, n_test=10000)
        base.update(overrides)
        return cls(**base)


# datasets --------------------------------------------------------------------


def generate_channels(cfg):
    """Train/val/test channel arrays from disjoint child streams of the seed."""
    root = np.random.SeedSequence(cfg.seed)
    streams = [np.random.default_rng(s) for s in root.spawn(len(SPLITS))]
    sys_cfg = SystemConfig(M=cfg.M, K=cfg.K, P_T=cfg.P_T, snr_db=cfg.snr_db)
    sizes = (cfg.n_train, cfg.n_val, cfg.n_test)
    return {name: sample_channels(sys_cfg, n, rng) for name, n, rng in zip(SPLITS, sizes, streams)}


def generate_dataset(cfg, out_dir, precision=4):
    """Write ``train.ch``, ``val.ch`` and ``test.ch`` under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, H in generate_channels(cfg).items():
        paths[name] = out_dir / f"{name}.ch"
        write_dataset(paths[name], H, precision)
    return paths


def load_dataset(data_dir):
    data_dir = Path(data_dir)
    return {name: read_dataset(data_dir / f"{name}.ch") for name in SPLITS}


# optimization ----------------------------------------------------------------


class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` bad epochs."""

    def __init__(self, lr, factor=0.5, patience=3, min_lr=0.0):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = -np.inf
        self.bad_epochs = 0

    def step(self, metric):
        """Record a validation score (higher is better); return the new lr."""
        if metric > self.best:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr


class Trainer:
    """One network plus its Adam state; :meth:`step` does one update."""

    def __init__(self, params, pa, sigma_v2, P_T, lr):
        self.params = params
        self.pa = pa
        self.sigma_v2 = sigma_v2
        self.P_T = P_T
        self.adam = AdamState(lr=lr)
        self.steps = 0

    def loss(self, H, train=True):
        graph = ad.Graph()
        Wr, Wi, leaves = ccnn.forward(self.params, H, self.P_T, train=train, graph=graph)
        loss = -sum_rate_differentiable(H, Wr, Wi, self.pa, self.sigma_v2)
        return graph, loss, leaves

    def step(self, H):
        graph, loss, leaves = self.loss(H)
        value = float(loss.data)
        if not np.isfinite(value):
            raise OptimizerError(f"non-finite loss at step {self.steps} (lr={self.adam.lr:g})")
        grads = graph.backward(loss)
        adam_step(self.params.tensors, {name: grads[t.node] for name, t in leaves.items()}, self.adam)
        self.steps += 1
        return value


def mean_sum_rate(params, H, pa, sigma_v2, P_T):
    W = ccnn.precode(params, H, P_T)
    return float(closed_form_terms(H, W, pa, sigma_v2).sum_rate.mean())


@dataclass
class TrainResult:
    params: ccnn.NetworkParams
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = -np.inf


def train(net_cfg, cfg, data=None, callback=None):
    """Train from scratch; returns the best-validation parameters and history.

    ``data`` is a dict of channel arrays (as from :func:`generate_channels`)
    or a directory holding the dataset files; by default the channels are
    generated from ``cfg.seed``.
    """
    if data is None:
        data = generate_channels(cfg)
    elif not isinstance(data, dict):
        data = load_dataset(data)
    dtype = np.dtype(cfg.dtype)
    root = np.random.SeedSequence(cfg.seed + 1)
    init_rng, shuffle_rng = (np.random.default_rng(s) for s in root.spawn(2))
    params = ccnn.init_params(net_cfg, init_rng, dtype)
    H_train = data["train"].astype(np.complex64 if dtype == np.float32 else np.complex128)
    H_val = data["val"]
    pa, sigma_v2, P_T = cfg.pa, cfg.sigma_v2, cfg.P_T

    trainer = Trainer(params, pa, sigma_v2, P_T, cfg.lr)
    schedule = PlateauSchedule(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr)
    result = TrainResult(params.copy())
    since_best = 0
    n = len(H_train)
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        losses = []
        for i in range(0, n, cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            if len(idx) < 2:
                continue
            try:
                losses.append(trainer.step(H_train[idx]))
            except OptimizerError as exc:
                raise OptimizerError(f"epoch {epoch}, batch {i // cfg.batch_size}: {exc}") from exc
        val = mean_sum_rate(trainer.params, H_val, pa, sigma_v2, P_T)
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_sum_rate": val,
            "lr": trainer.adam.lr,
            "seconds": time.perf_counter() - t0,
        }
        result.history.append(row)
        log.info("epoch %d loss %.4f val %.4f lr %.2e", epoch, row["train_loss"], val, row["lr"])
        if callback is not None:
            callback(row)
        if val > result.best_val:
            result.best_val, result.best_epoch = val, epoch
            result.params = trainer.params.copy()
            since_best = 0
        else:
            since_best += 1
        trainer.adam.lr = schedule.step(val)
        if since_best >= cfg.early_stop_patience:
            log.info("early stop after epoch %d", epoch)
            break
    return result


def write_history(history, path):
    fields = ["epoch", "train_loss", "val_sum_rate", "lr"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


# evaluation ------------------------------------------------------------------


def nn_precoder(params):
    return lambda H, P_T: ccnn.precode(params, H, P_T)


def zf_precoder(H, P_T):
    return zf(H, P_T)


@dataclass
class Evaluation:
    sum_rates: np.ndarray

    @property
    def mean(self):
        return float(self.sum_rates.mean())

    def cdf(self):
        """Sorted sum rates and their empirical CDF values i/n."""
        x = np.sort(self.sum_rates)
        return x, np.arange(1, len(x) + 1) / len(x)


def evaluate(precoder, H, pa, sigma_v2, P_T, mode="closed-form", n_samples=10**6, seed=0):
    """Sum rate per channel for ``precoder(H_batch, P_T) -> W_batch``.

    ``mode`` selects the closed-form route (polynomial PAs only) or the
    Monte-Carlo route (any PA, one child stream of ``seed`` per channel).
    """
    H = np.asarray(H).astype(np.complex128)
    W = np.asarray(precoder(H, P_T), dtype=np.complex128)
    if mode == "closed-form":
        rates = closed_form_terms(H, W, pa, sigma_v2).sum_rate
    elif mode == "monte-carlo":
        streams = np.random.SeedSequence(seed).spawn(len(H))
        rates = np.array(
            [
                monte_carlo_terms(h, w, pa, sigma_v2, n_samples, np.random.default_rng(s)).sum_rate
                for h, w, s in zip(H, W, streams)
            ]
        )
    else:
        raise ConfigurationError(f"unknown evaluation mode {mode!r}")
    return Evaluation(np.asarray(rates, dtype=float))


def config_dict(cfg):
    return asdict(cfg)
