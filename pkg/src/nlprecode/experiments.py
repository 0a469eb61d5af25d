"""Experiment protocols: SNR and IBO sweeps, sum-rate CDFs, PA fits, training.

Every protocol takes an :class:`ExperimentSpec` and writes CSV files under
``spec.out``. Each CSV starts with a ``#`` comment line carrying the seed
and the config hash, followed by a header row.
"""

import csv
import dataclasses
import hashlib
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from . import ccnn, kernels
from . import trainer as tr
from .errors import ConfigurationError
from .metrics import MetricsReport, closed_form_terms, monte_carlo_terms
from .pa import IBO_GRID, ClipPA, LinearPA, fit_poly, ibo_to_psat, rapp_for_ibo, table_poly
from .precoders import PGDConfig, mrt, pgd_optimize, zf
from .system import SystemConfig, sample_channels, snr_to_noise

log = logging.getLogger(__name__)

KINDS = ("sweep-snr", "sweep-ibo", "cdf", "fit-pa", "train", "eval", "generate-data")
PRECODERS = ("zf", "zf-linear", "zf-dpd", "mrt", "nn", "pgd")
PA_SOURCES = ("table", "fit")
DEFAULT_SNR_GRID = tuple(float(x) for x in np.linspace(-30.0, 35.0, 24))
DEFAULT_N_CHANNELS = {"cdf": 2000, "eval": 2000}
SWEEP_N_CHANNELS = 500


@dataclass
class ExperimentSpec:
    """Validated experiment description; build one with :func:`spec_from_dict`."""

    kind: str
    M: int = 64
    K: int = 1
    snr_db: float = 20.0
    P_T: float | None = None
    ibo_db: float = -3.0
    pa: str = "table"
    precoders: tuple = ("zf",)
    snr_grid: tuple = DEFAULT_SNR_GRID
    ibo_grid: tuple = IBO_GRID
    n_channels: int | None = None
    seed: int = 0
    out: str = "results"
    checkpoint: str | None = None
    checkpoints: dict = field(default_factory=dict)
    data: str | None = None
    mc_samples: int = 10**5
    fit_samples: int = 10**6
    eval_mode: str = "closed-form"
    network: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    pgd: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.P_T is None:
            self.P_T = float(self.M)
        if self.n_channels is None:
            self.n_channels = DEFAULT_N_CHANNELS.get(self.kind, SWEEP_N_CHANNELS)
        self.precoders = tuple(self.precoders)
        self.snr_grid = tuple(float(x) for x in self.snr_grid)
        self.ibo_grid = tuple(float(x) for x in self.ibo_grid)
        self.checkpoints = {float(k): v for k, v in self.checkpoints.items()}
        problems = _problems(self)
        if problems:
            raise ConfigurationError("invalid experiment config: " + "; ".join(problems))

    @property
    def p_in(self):
        return self.P_T / self.M

    @property
    def sigma_v2(self):
        return float(snr_to_noise(self.P_T, self.snr_db))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["checkpoints"] = {repr(k): v for k, v in self.checkpoints.items()}
        return d

    def config_hash(self):
        """SHA-256 of the canonical JSON form.

        The output location is left out and input files (checkpoints, the
        dataset) enter by content, so moving files does not change the hash.
        """
        d = self.to_dict()
        d.pop("out")
        d["checkpoint"] = _content_digest(self.checkpoint)
        d["checkpoints"] = {k: _content_digest(v) for k, v in d["checkpoints"].items()}
        d["data"] = _content_digest(self.data)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def system(self):
        return SystemConfig(M=self.M, K=self.K, P_T=self.P_T, snr_db=self.snr_db)

    def train_config(self):
        base = dict(M=self.M, K=self.K, P_T=self.P_T, snr_db=self.snr_db, ibo_db=self.ibo_db, seed=self.seed)
        base.update(self.training)
        return tr.TrainConfig(**base)

    def network_config(self):
        return ccnn.NetworkConfig(**self.network)


def _content_digest(path):
    """Digest of a checkpoint (manifest + blob) or dataset directory; the path if absent."""
    if path is None:
        return None
    path = Path(path)
    if path.is_dir():
        files = [path / f"{name}.ch" for name in tr.SPLITS]
    else:
        files = [path, path.with_name(path.name + ".bin")]
    if not all(f.is_file() for f in files):
        return str(path)
    h = hashlib.sha256()
    for f in files:
        with open(f, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return "sha256:" + h.hexdigest()


def _problems(spec):
    out = []
    if spec.kind not in KINDS:
        out.append(f"kind: must be one of {KINDS}, got {spec.kind!r}")
    if not (isinstance(spec.M, int) and isinstance(spec.K, int) and spec.M >= spec.K >= 1):
        out.append(f"M, K: need integers with M >= K >= 1, got M={spec.M!r}, K={spec.K!r}")
    if not spec.P_T > 0:
        out.append("P_T: must be positive")
    if spec.pa not in PA_SOURCES:
        out.append(f"pa: must be one of {PA_SOURCES}, got {spec.pa!r}")
    unknown = [p for p in spec.precoders if p not in PRECODERS]
    if unknown or not spec.precoders:
        out.append(f"precoders: need a non-empty subset of {PRECODERS}, got {list(spec.precoders)}")
    if not spec.snr_grid:
        out.append("snr_grid: must be non-empty")
    if not spec.ibo_grid:
        out.append("ibo_grid: must be non-empty")
    if not (isinstance(spec.n_channels, int) and spec.n_channels >= 1):
        out.append(f"n_channels: must be an integer >= 1, got {spec.n_channels!r}")
    if not (isinstance(spec.seed, int) and 0 <= spec.seed < 2**64):
        out.append(f"seed: must be an unsigned 64-bit integer, got {spec.seed!r}")
    if spec.eval_mode not in ("closed-form", "monte-carlo"):
        out.append(f"eval_mode: must be closed-form or monte-carlo, got {spec.eval_mode!r}")
    if spec.mc_samples < 10**4:
        out.append("mc_samples: must be >= 10000")
    if spec.kind == "train" and spec.pa != "table":
        out.append("pa: training uses the tabulated coefficients; set pa to 'table'")
    return out


def spec_from_dict(d):
    """Build a spec from parsed JSON, naming every unknown or missing field."""
    if not isinstance(d, dict):
        raise ConfigurationError("experiment config must be a JSON object")
    names = {f.name for f in dataclasses.fields(ExperimentSpec)}
    problems = [f"{k}: unknown field" for k in d if k not in names]
    if "kind" not in d:
        problems.append("kind: required field missing")
    if problems:
        raise ConfigurationError("invalid experiment config: " + "; ".join(problems))
    try:
        return ExperimentSpec(**d)
    except TypeError as exc:
        raise ConfigurationError(f"invalid experiment config: {exc}") from exc


def load_spec(path, **overrides):
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: not valid JSON ({exc})") from exc
    if isinstance(d, dict):
        d.update({k: v for k, v in overrides.items() if v is not None})
    return spec_from_dict(d)


# shared pieces ---------------------------------------------------------------


def eval_channels(spec):
    """Evaluation channels: the dataset's test split if given, else fresh draws."""
    if spec.data is not None:
        H = tr.load_dataset(spec.data)["test"][: spec.n_channels]
        if H.shape[1:] != (spec.M, spec.K):
            raise ConfigurationError(f"dataset holds {H.shape[1:]} channels, config wants {(spec.M, spec.K)}")
        return H.astype(np.complex128)
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    return sample_channels(spec.system(), spec.n_channels, rng)


def poly_for(spec, ibo_db):
    if spec.pa == "table":
        return table_poly(ibo_db)
    return fit_poly(rapp_for_ibo(ibo_db, spec.p_in), spec.p_in, spec.fit_samples, spec.seed)


def _load_net(path):
    if path is None:
        raise ConfigurationError("the nn precoder needs a trained checkpoint")
    if not Path(path).exists():
        raise ConfigurationError(f"checkpoint {path} does not exist")
    return ccnn.load_checkpoint(path)


def _check_checkpoints(spec, ibo_points=None):
    if "nn" not in spec.precoders:
        return
    if ibo_points is None:
        _load_net(spec.checkpoint)
        return
    missing = [ibo for ibo in ibo_points if ibo not in spec.checkpoints]
    if missing:
        raise ConfigurationError(f"checkpoints: no trained network for IBO {missing}")


def _mc_terms(spec, H, W, pa, stream_key):
    # one child stream per channel so the result does not depend on ordering
    streams = np.random.SeedSequence([spec.seed, stream_key]).spawn(len(H))
    reports = [
        monte_carlo_terms(h, w, pa, 1.0, spec.mc_samples, np.random.default_rng(s))
        for h, w, s in zip(H, W, streams)
    ]
    return MetricsReport(
        np.stack([r.signal for r in reports]),
        np.stack([r.interference for r in reports]),
        np.stack([r.distortion for r in reports]),
        1.0,
    )


def _noise_free_terms(spec, name, H, pa, ibo_db, net=None):
    """Received power split for one curve; noise enters later analytically."""
    P_T = spec.P_T
    if name == "zf":
        return closed_form_terms(H, zf(H, P_T), pa, 1.0)
    if name == "zf-linear":
        return closed_form_terms(H, zf(H, P_T), LinearPA().as_poly(), 1.0)
    if name == "mrt":
        return closed_form_terms(H, mrt(H, P_T), pa, 1.0)
    if name == "nn":
        return closed_form_terms(H, ccnn.precode(net, H, P_T), pa, 1.0)
    if name == "zf-dpd":
        clip = ClipPA(p_sat=ibo_to_psat(ibo_db, spec.p_in))
        return _mc_terms(spec, H, zf(H, P_T), clip, int(round(ibo_db * 100)) % 2**32)
    raise ConfigurationError(f"no noise-independent route for precoder {name!r}")


def _pgd_rates(spec, H, pa, sigma_v2):
    cfg = PGDConfig(**spec.pgd)
    streams = np.random.SeedSequence([spec.seed, 7]).spawn(len(H))
    rates = []
    for h, s in zip(H, streams):
        W = pgd_optimize(h, pa, sigma_v2, spec.P_T, cfg, np.random.default_rng(s))
        rates.append(float(closed_form_terms(h, W, pa, sigma_v2).sum_rate))
    return np.array(rates)


def _curve_rates(spec, name, H, pa, ibo_db, sigma_grid, net=None):
    """Per-channel sum rates, shape (len(sigma_grid), n_channels)."""
    if name == "pgd":
        return np.stack([_pgd_rates(spec, H, pa, s2) for s2 in sigma_grid])
    terms = _noise_free_terms(spec, name, H, pa, ibo_db, net)
    return np.stack([terms.with_noise(s2).sum_rate for s2 in sigma_grid])


# CSV output ------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path, header, rows, spec):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={spec.seed} config_hash={spec.config_hash()}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path):
    """Rows of a CSV written by :func:`write_csv`, as dicts of strings."""
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


# protocols -------------------------------------------------------------------


def sweep_snr(spec):
    """Mean sum rate per (SNR, precoder); writes ``sweep_snr.csv``."""
    _check_checkpoints(spec)
    net = _load_net(spec.checkpoint) if "nn" in spec.precoders else None
    H = eval_channels(spec)
    pa = poly_for(spec, spec.ibo_db)
    sigmas = [snr_to_noise(spec.P_T, snr) for snr in spec.snr_grid]
    rows = []
    for name in spec.precoders:
        rates = _curve_rates(spec, name, H, pa, spec.ibo_db, sigmas, net)
        rows += [(snr, name, float(r.mean())) for snr, r in zip(spec.snr_grid, rates)]
        log.info("sweep-snr %s done", name)
    path = write_csv(Path(spec.out) / "sweep_snr.csv", ["snr_db", "precoder", "mean_sum_rate"], rows, spec)
    return path, rows


def sweep_ibo(spec):
    """Mean sum rate per (IBO, precoder) at ``spec.snr_db``; writes ``sweep_ibo.csv``."""
    _check_checkpoints(spec, spec.ibo_grid)
    H = eval_channels(spec)
    sigma = [spec.sigma_v2]
    rows = []
    for name in spec.precoders:
        for ibo in spec.ibo_grid:
            net = _load_net(spec.checkpoints[ibo]) if name == "nn" else None
            rates = _curve_rates(spec, name, H, poly_for(spec, ibo), ibo, sigma, net)[0]
            rows.append((ibo, name, float(rates.mean())))
        log.info("sweep-ibo %s done", name)
    path = write_csv(Path(spec.out) / "sweep_ibo.csv", ["ibo_db", "precoder", "mean_sum_rate"], rows, spec)
    return path, rows


def per_channel_rates(spec):
    """Sum rate of every evaluation channel for each requested precoder."""
    _check_checkpoints(spec)
    net = _load_net(spec.checkpoint) if "nn" in spec.precoders else None
    H = eval_channels(spec)
    pa = poly_for(spec, spec.ibo_db)
    return {name: _curve_rates(spec, name, H, pa, spec.ibo_db, [spec.sigma_v2], net)[0] for name in spec.precoders}


def cdf(spec):
    """Empirical sum-rate CDF per precoder; writes ``cdf.csv``."""
    rows = []
    for name, rates in per_channel_rates(spec).items():
        x, p = tr.Evaluation(rates).cdf()
        rows += [(name, float(a), float(b)) for a, b in zip(x, p)]
    path = write_csv(Path(spec.out) / "cdf.csv", ["precoder", "sum_rate", "cdf"], rows, spec)
    return path, rows


def evaluate(spec):
    """Per-channel sum rates through :func:`trainer.evaluate`; writes ``eval.csv``."""
    _check_checkpoints(spec)
    H = eval_channels(spec)
    pa = poly_for(spec, spec.ibo_db)
    rows = []
    for name in spec.precoders:
        if name == "nn":
            precoder = tr.nn_precoder(_load_net(spec.checkpoint))
        elif name in ("zf", "zf-linear", "zf-dpd"):
            precoder = tr.zf_precoder
        elif name == "mrt":
            precoder = mrt
        else:
            raise ConfigurationError(f"eval does not support precoder {name!r}; use sweep-snr")
        curve_pa, mode = pa, spec.eval_mode
        if name == "zf-linear":
            curve_pa = LinearPA().as_poly()
        elif name == "zf-dpd":
            curve_pa, mode = ClipPA(p_sat=ibo_to_psat(spec.ibo_db, spec.p_in)), "monte-carlo"
        ev = tr.evaluate(precoder, H, curve_pa, spec.sigma_v2, spec.P_T, mode, spec.mc_samples, spec.seed)
        rows += [(name, i, float(r)) for i, r in enumerate(ev.sum_rates)]
    path = write_csv(Path(spec.out) / "eval.csv", ["precoder", "channel", "sum_rate"], rows, spec)
    return path, rows


def fit_pa(spec):
    """Third-order fit to the Rapp model at every IBO point; writes ``fit_pa.csv``."""
    rows = []
    for ibo in spec.ibo_grid:
        beta3 = fit_poly(rapp_for_ibo(ibo, spec.p_in), spec.p_in, spec.fit_samples, spec.seed).beta3
        rows.append((ibo, beta3.real, beta3.imag))
    path = write_csv(Path(spec.out) / "fit_pa.csv", ["ibo_db", "beta3_re", "beta3_im"], rows, spec)
    return path, rows


def generate_data(spec):
    paths = tr.generate_dataset(spec.train_config(), Path(spec.out) / "data")
    return paths["train"].parent, paths


def train(spec):
    """Train one network; writes ``model.json`` (+ blob) and ``history.csv``."""
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    result = tr.train(spec.network_config(), spec.train_config(), spec.data)
    ckpt = ccnn.save_checkpoint(result.params, out / "model.json")
    rows = [(r["epoch"], r["train_loss"], r["val_sum_rate"], r["lr"]) for r in result.history]
    write_csv(out / "history.csv", ["epoch", "train_loss", "val_sum_rate", "lr"], rows, spec)
    return ckpt, result


RUNNERS = {
    "sweep-snr": sweep_snr,
    "sweep-ibo": sweep_ibo,
    "cdf": cdf,
    "eval": evaluate,
    "fit-pa": fit_pa,
    "train": train,
    "generate-data": generate_data,
}


def versions():
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"package": pkg, "python": platform.python_version(), "numpy": np.__version__, "kernels": kernels.BACKEND}


def run(spec):
    """Execute ``spec`` and write ``manifest.json`` next to its outputs."""
    t0 = time.perf_counter()
    primary, _ = RUNNERS[spec.kind](spec)
    manifest = {
        "kind": spec.kind,
        "config": spec.to_dict(),
        "config_hash": spec.config_hash(),
        "seed": spec.seed,
        "versions": versions(),
        "output": str(primary),
        "wall_time_s": time.perf_counter() - t0,
    }
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def run_config(path, **overrides):
    return run(load_spec(path, **overrides))
