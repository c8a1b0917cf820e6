"""Embedding networks (CNN-ED-5, CNN-ED-10, bidirectional RNN / GRU) and checkpoints.

All four share the same top: two fully connected layers followed by a
non-affine batch norm, so each output element is pushed toward N(0, 1).

Checkpoint container (little-endian)::

    8 bytes   magic  b"LVEMBCKP"
    4 bytes   uint32 format version
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header: {"spec": {...}, "meta": {...},
              "tensors": [{"name": str, "shape": [int, ...]}, ...]}
    rest      float64 values of every tensor, row-major, in header order

The batch-norm running statistics are stored as the tensors ``bn.running_mean``
and ``bn.running_var``.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .special import make_rng
from .tensor import BatchNormState, Tensor

ARCHS = ("cnn-ed-5", "cnn-ed-10", "rnn", "gru")
N_POOLS = 5
MAGIC = b"LVEMBCKP"
FORMAT_VERSION = 1
_INIT_STREAM = 11


class SpecError(ValueError):
    """Invalid model specification or a checkpoint that does not match one."""


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    input_len: int = 160
    embed_dim: int = 80
    fc_hidden: int = 256
    hidden_size: int = 64
    channels: int = 64
    in_channels: int = 5
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise SpecError(f"unknown architecture {self.arch!r}; choose one of {', '.join(ARCHS)}")
        for name in ("input_len", "embed_dim", "fc_hidden", "hidden_size", "channels", "in_channels"):
            if getattr(self, name) < 1:
                raise SpecError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.arch.startswith("cnn") and self.input_len % 2 ** N_POOLS:
            raise SpecError(
                f"{self.arch} needs input_len divisible by {2 ** N_POOLS}, got {self.input_len};"
                f" pad sequences to {-(-self.input_len // 32) * 32}"
            )

    @property
    def fc_in(self) -> int:
        if self.arch.startswith("cnn"):
            return self.channels * (self.input_len // 2 ** N_POOLS)
        return 2 * self.hidden_size


@dataclass
class EmbeddingNet:
    """One parameter set; both Siamese branches call :meth:`forward` on it."""

    spec: ModelSpec
    params: dict[str, Tensor] = field(default_factory=dict)
    bn: BatchNormState = None

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def features(self, x, train: bool = False) -> Tensor:
        """Input of the fully connected top, shape (B, fc_in)."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        spec = self.spec
        if x.ndim != 3 or x.shape[1:] != (spec.input_len, spec.in_channels):
            raise T.ShapeError(
                f"forward: expected batch of shape (B, {spec.input_len}, {spec.in_channels}), got {x.shape}"
            )
        if spec.arch.startswith("cnn"):
            return self._cnn_features(x)
        return self._recurrent_features(x)

    def forward(self, x, train: bool = False) -> Tensor:
        """Un-rescaled embeddings of a one-hot batch (B, L, 5) -> (B, n)."""
        h = self.features(x, train)
        p = self.params
        h = T.matmul(h, p["fc1.w"]) + p["fc1.b"]
        h = T.matmul(h, p["fc2.w"]) + p["fc2.b"]
        return T.batchnorm1d(h, self.bn, train)

    __call__ = forward

    def _cnn_features(self, x: Tensor) -> Tensor:
        p = self.params
        h = x.transpose(0, 2, 1)
        per_block = 1 if self.spec.arch == "cnn-ed-5" else 2
        for blk in range(N_POOLS):
            for j in range(per_block):
                name = f"conv{blk * per_block + j}"
                h = T.conv1d(h, p[name + ".w"], p[name + ".b"], stride=1, pad=1)
                if j < per_block - 1:
                    h = T.relu(h)
            h = T.relu(T.avgpool1d(h, 2))
        return h.reshape(h.shape[0], -1)

    def _recurrent_features(self, x: Tensor) -> Tensor:
        L = x.shape[1]
        seq = x
        finals = None
        for layer in range(2):
            outs, finals = [], []
            for direction in ("f", "b"):
                steps = range(L) if direction == "f" else range(L - 1, -1, -1)
                hs, h_last = self._run_direction(seq, f"rnn{layer}{direction}", steps)
                if direction == "b":
                    hs = hs[::-1]
                outs.append(T.stack(hs, axis=1))
                finals.append(h_last)
            seq = T.concat(outs, axis=2)
        return T.concat(finals, axis=1)

    def _run_direction(self, seq: Tensor, prefix: str, steps):
        p = self.params
        H = self.spec.hidden_size
        B = seq.shape[0]
        gi = T.matmul(seq, p[prefix + ".w_ih"]) + p[prefix + ".b_ih"]
        w_hh, b_hh = p[prefix + ".w_hh"], p[prefix + ".b_hh"]
        h = Tensor(np.zeros((B, H)))
        hs = []
        gru = self.spec.arch == "gru"
        for t in steps:
            x_t = gi[:, t, :]
            gh = T.matmul(h, w_hh) + b_hh
            if gru:
                r = T.sigmoid(x_t[:, :H] + gh[:, :H])
                z = T.sigmoid(x_t[:, H:2 * H] + gh[:, H:2 * H])
                n = T.tanh(x_t[:, 2 * H:] + r * gh[:, 2 * H:])
                h = n + z * (h - n)
            else:
                h = T.tanh(x_t + gh)
            hs.append(h)
        return hs, h


def param_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes; the single source of truth for a spec."""
    spec.validate()
    shapes: dict[str, tuple[int, ...]] = {}
    if spec.arch.startswith("cnn"):
        n_conv = N_POOLS * (1 if spec.arch == "cnn-ed-5" else 2)
        c_in = spec.in_channels
        for i in range(n_conv):
            shapes[f"conv{i}.w"] = (spec.channels, c_in, 3)
            shapes[f"conv{i}.b"] = (spec.channels,)
            c_in = spec.channels
    else:
        H = spec.hidden_size
        gates = 3 if spec.arch == "gru" else 1
        for layer in range(2):
            d_in = spec.in_channels if layer == 0 else 2 * H
            for direction in "fb":
                pre = f"rnn{layer}{direction}"
                shapes[pre + ".w_ih"] = (d_in, gates * H)
                shapes[pre + ".w_hh"] = (H, gates * H)
                shapes[pre + ".b_ih"] = (gates * H,)
                shapes[pre + ".b_hh"] = (gates * H,)
    shapes["fc1.w"] = (spec.fc_in, spec.fc_hidden)
    shapes["fc1.b"] = (spec.fc_hidden,)
    shapes["fc2.w"] = (spec.fc_hidden, spec.embed_dim)
    shapes["fc2.b"] = (spec.embed_dim,)
    return shapes


def _fan_in(name: str, spec: ModelSpec, shape) -> int:
    if name.startswith("conv"):
        c_in = spec.in_channels if name.startswith("conv0.") else spec.channels
        return c_in * 3
    if name.startswith("rnn"):
        return spec.hidden_size
    return shape[0] if name.endswith(".w") else {"fc1": spec.fc_in, "fc2": spec.fc_hidden}[name[:3]]


def _init_bound(name: str, spec: ModelSpec, shape) -> float:
    fan_in = _fan_in(name, spec, shape)
    if not name.endswith(".w") or name.startswith("rnn"):
        return 1.0 / np.sqrt(fan_in)
    # variance preserving: conv outputs feed relu, the fc top is linear
    gain = 6.0 if name.startswith("conv") else 3.0
    return np.sqrt(gain / fan_in)


def build(spec: ModelSpec, seed: int = 0) -> EmbeddingNet:
    """Construct a network with fan-in scaled uniform initialisation."""
    shapes = param_shapes(spec)
    params = {}
    for i, (name, shape) in enumerate(shapes.items()):
        bound = _init_bound(name, spec, shape)
        rng = make_rng(seed, _INIT_STREAM, i)
        params[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
    bn = BatchNormState(spec.embed_dim, momentum=spec.bn_momentum, eps=spec.bn_eps)
    return EmbeddingNet(spec, params, bn)


def _tensor_items(model: EmbeddingNet):
    items = [(name, p.data) for name, p in model.params.items()]
    items.append(("bn.running_mean", model.bn.running_mean))
    items.append(("bn.running_var", model.bn.running_var))
    return items


def save_checkpoint(model: EmbeddingNet, path: str | os.PathLike, meta: dict | None = None) -> None:
    items = _tensor_items(model)
    header = {
        "spec": asdict(model.spec),
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in items],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for _, arr in items:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_checkpoint_meta(path: str | os.PathLike) -> dict:
    return _read(path)[0].get("meta", {})


def _read(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    prefix = len(MAGIC) + 12
    if len(blob) < prefix or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic or truncated header)")
    version, hlen = struct.unpack("<IQ", blob[len(MAGIC):prefix])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    if len(blob) < prefix + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[prefix:prefix + hlen])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    return header, blob[prefix + hlen:]


def load_checkpoint(path: str | os.PathLike, expect: ModelSpec | None = None) -> EmbeddingNet:
    header, body = _read(path)
    spec = ModelSpec(**header["spec"])
    if expect is not None and expect != spec:
        raise SpecError(f"{path}: checkpoint holds {spec}, expected {expect}")
    model = build(spec)
    expected = [(n, a.shape) for n, a in _tensor_items(model)]
    stored = [(t["name"], tuple(t["shape"])) for t in header["tensors"]]
    if stored != expected:
        raise SpecError(f"{path}: tensor layout does not match the network built from its spec")
    total = sum(int(np.prod(s)) for _, s in stored)
    if len(body) != 8 * total:
        raise CheckpointError(f"{path}: expected {8 * total} bytes of values, found {len(body)}")
    values = np.frombuffer(body, dtype="<f8")
    off = 0
    for name, shape in stored:
        size = int(np.prod(shape))
        arr = values[off:off + size].astype(np.float64).reshape(shape)
        off += size
        if name == "bn.running_mean":
            model.bn.running_mean = arr
        elif name == "bn.running_var":
            model.bn.running_var = arr
        else:
            model.params[name].data = arr
    return model
