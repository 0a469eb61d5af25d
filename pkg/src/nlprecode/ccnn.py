"""Circular convolutional residual network mapping channels to precoders.

Layout (activations channels-last, spatial grid = antennas x users)::

    (re H, im H) -> conv -> lrelu
                 -> n_blocks x [conv -> BN -> lrelu -> conv -> +skip -> lrelu]
                 -> conv (2 channels) -> per-instance power normalization

Every convolution pads circularly on both axes, so one set of weights runs
on any (M, K) and the map commutes with cyclic shifts of antennas and users.
"""

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, DimensionError, FormatError

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    n_filters: int = 256
    kernel_h: int = 9
    kernel_w: int = 3
    n_blocks: int = 3
    slope: float = 0.01
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.kernel_h % 2 == 0 or self.kernel_w % 2 == 0:
            raise ConfigurationError(f"kernel dims must be odd, got {self.kernel_h}x{self.kernel_w}")
        if self.n_filters < 2:
            raise ConfigurationError("n_filters must be >= 2")
        if self.n_blocks < 0:
            raise ConfigurationError("n_blocks must be >= 0")


class NetworkParams:
    """Named trainable tensors plus batch-norm running statistics."""

    def __init__(self, config, tensors, bn_states):
        self.config = config
        self.tensors = tensors
        self.bn_states = bn_states

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def copy(self):
        bn = {}
        for name, st in self.bn_states.items():
            new = ad.BatchNormState(len(st.running_mean), st.running_mean.dtype, st.momentum, st.eps)
            new.running_mean = st.running_mean.copy()
            new.running_var = st.running_var.copy()
            bn[name] = new
        return NetworkParams(self.config, {k: v.copy() for k, v in self.tensors.items()}, bn)

    def buffers(self):
        out = {}
        for name, st in self.bn_states.items():
            out[f"{name}.running_mean"] = st.running_mean
            out[f"{name}.running_var"] = st.running_var
        return out

    def n_parameters(self):
        return int(sum(t.size for t in self.tensors.values()))


def _conv_names(cfg):
    names = ["stem"]
    for i in range(cfg.n_blocks):
        names += [f"block{i}.conv1", f"block{i}.conv2"]
    return names + ["head"]


def init_params(cfg, rng, dtype=np.float64):
    """He-style init corrected for leaky ReLU; zero biases, BN at identity."""
    C = cfg.n_filters
    kh, kw = cfg.kernel_h, cfg.kernel_w
    gain = 2.0 / (1.0 + cfg.slope**2)
    tensors = {}

    def conv(name, cout, cin):
        std = np.sqrt(gain / (cin * kh * kw))
        tensors[f"{name}.w"] = (rng.standard_normal((cout, cin, kh, kw)) * std).astype(dtype)
        tensors[f"{name}.b"] = np.zeros(cout, dtype=dtype)

    bn = {}
    conv("stem", C, 2)
    for i in range(cfg.n_blocks):
        conv(f"block{i}.conv1", C, C)
        tensors[f"block{i}.bn.gamma"] = np.ones(C, dtype=dtype)
        tensors[f"block{i}.bn.beta"] = np.zeros(C, dtype=dtype)
        bn[f"block{i}.bn"] = ad.BatchNormState(C, dtype, cfg.bn_momentum, cfg.bn_eps)
        conv(f"block{i}.conv2", C, C)
    conv("head", 2, C)
    return NetworkParams(cfg, tensors, bn)


def channel_planes(H, dtype):
    """Stack (re H, im H) into a (B, M, K, 2) real array."""
    H = np.asarray(H)
    if H.ndim != 3:
        raise DimensionError(f"expected a (B, M, K) channel batch, got shape {H.shape}")
    return np.ascontiguousarray(np.stack([H.real, H.imag], axis=-1), dtype=dtype)


def forward(params, H, P_T, train=False, graph=None):
    """Run the network on a (B, M, K) complex channel batch.

    Returns ``(Wr, Wi, leaves)``: real and imaginary precoder tensors of shape
    (B, M, K), each instance scaled to total power ``P_T``, and the dict of
    graph leaves for the parameters (empty when ``graph`` is None). In
    train mode batch-norm running statistics are updated.
    """
    cfg = params.config
    if graph is not None:
        p = {name: graph.leaf(t) for name, t in params.tensors.items()}
    else:
        p = {name: ad.Tensor(t) for name, t in params.tensors.items()}
    slope = cfg.slope

    x = ad.Tensor(channel_planes(H, params.dtype))
    h = ad.leaky_relu(ad.conv2d_circular(x, p["stem.w"], p["stem.b"]), slope)
    for i in range(cfg.n_blocks):
        pre = f"block{i}"
        y = ad.conv2d_circular(h, p[f"{pre}.conv1.w"], p[f"{pre}.conv1.b"])
        y = ad.batchnorm(y, p[f"{pre}.bn.gamma"], p[f"{pre}.bn.beta"], params.bn_states[f"{pre}.bn"], train)
        y = ad.leaky_relu(y, slope)
        y = ad.conv2d_circular(y, p[f"{pre}.conv2.w"], p[f"{pre}.conv2.b"])
        h = ad.leaky_relu(h + y, slope)
    out = ad.conv2d_circular(h, p["head.w"], p["head.b"])

    power = ad.sum(out * out, axis=(1, 2, 3), keepdims=True)
    out = out * ad.sqrt(P_T / power)
    Wr = out[..., 0]
    Wi = out[..., 1]
    return Wr, Wi, (p if graph is not None else {})


def precode(params, H, P_T, batch_size=512):
    """Eval-mode precoders for a channel batch, as a complex array."""
    H = np.asarray(H)
    chunks = []
    for i in range(0, len(H), batch_size):
        Wr, Wi, _ = forward(params, H[i : i + batch_size], P_T, train=False)
        chunks.append(Wr.data.astype(np.float64) + 1j * Wi.data.astype(np.float64))
    return np.concatenate(chunks)


def receptive_field(cfg):
    """Receptive field (rows, cols) of the stacked convolutions."""
    n_convs = 2 + 2 * cfg.n_blocks
    return n_convs * (cfg.kernel_h - 1) + 1, n_convs * (cfg.kernel_w - 1) + 1


# checkpoints -----------------------------------------------------------------


def save_checkpoint(params, path):
    """Write ``<path>`` (JSON manifest) and ``<path>.bin`` (raw tensors)."""
    path = Path(path)
    blob_path = path.with_name(path.name + ".bin")
    entries = []
    chunks = []
    offset = 0
    items = list(params.tensors.items()) + list(params.buffers().items())
    for name, arr in items:
        data = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name, "offset": offset, "nbytes": len(data)}
        )
        chunks.append(data)
        offset += len(data)
    blob = b"".join(chunks)
    manifest = {
        "format": "nlprecode-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "tensors": entries,
        "n_buffers": len(params.bn_states) * 2,
        "blob": blob_path.name,
        "blob_bytes": len(blob),
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    blob_path.write_bytes(blob)
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_checkpoint(path):
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable manifest ({exc})") from exc
    if manifest.get("format") != "nlprecode-checkpoint":
        raise FormatError(f"{path}: not a checkpoint manifest")
    blob_path = path.with_name(manifest["blob"])
    try:
        blob = blob_path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{blob_path}: {exc}") from exc
    if len(blob) != manifest["blob_bytes"]:
        raise FormatError(f"{blob_path}: expected {manifest['blob_bytes']} bytes, found {len(blob)}")
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise FormatError(f"{blob_path}: checksum mismatch")
    try:
        cfg = NetworkConfig(**manifest["config"])
    except TypeError as exc:
        raise FormatError(f"{path}: bad config ({exc})") from exc
    arrays = {}
    for e in manifest["tensors"]:
        dt = np.dtype(e["dtype"]).newbyteorder("<")
        raw = blob[e["offset"] : e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=dt)
        if arr.size != int(np.prod(e["shape"])):
            raise FormatError(f"{path}: tensor {e['name']} size does not match its shape")
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(np.dtype(e["dtype"]))

    dtype = arrays["stem.w"].dtype if "stem.w" in arrays else np.float64
    template = init_params(cfg, np.random.default_rng(0), dtype)
    expected = set(template.tensors) | set(template.buffers())
    if set(arrays) != expected:
        raise FormatError(f"{path}: tensor names do not match the configured architecture")
    for name, t in template.tensors.items():
        if arrays[name].shape != t.shape:
            raise FormatError(f"{path}: tensor {name} has shape {arrays[name].shape}, expected {t.shape}")
        template.tensors[name] = arrays[name]
    for name, st in template.bn_states.items():
        st.running_mean = arrays[f"{name}.running_mean"]
        st.running_var = arrays[f"{name}.running_var"]
    return template
