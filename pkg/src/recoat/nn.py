"""Parameter store and the layer set used by the network.

Layers are plain functions over ``Tensor`` values; their parameters live in a
``ParamStore`` keyed by dotted names.  A parameter's partition label is derived
from its name: ``decoder_<j>.regression.*`` and ``decoder_<j>.scoring.*`` belong
to decoder ``j``; everything else is ``shared``.
"""

from __future__ import annotations

import re
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor

SHARED = "shared"
_DECODER_RE = re.compile(r"^decoder_(\d+)\.(regression|scoring)\.")


def partition_of(name: str) -> str:
    m = _DECODER_RE.match(name)
    return f"decoder_{m.group(1)}.{m.group(2)}" if m else SHARED


class ParamStore:
    """Ordered named float64 arrays with partition labels."""

    def __init__(self, arrays: Mapping[str, np.ndarray] | None = None):
        self._arrays: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, value in (arrays or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> np.ndarray:
        if name in self._arrays:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._arrays[name] = np.array(value, dtype=np.float64)
        return self._arrays[name]

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self._arrays:
            raise KeyError(name)
        if np.shape(value) != self._arrays[name].shape:
            raise ValueError(f"shape mismatch for {name}: {np.shape(value)} vs {self._arrays[name].shape}")
        self._arrays[name] = np.array(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def label(self, name: str) -> str:
        if name not in self._arrays:
            raise KeyError(name)
        return partition_of(name)

    def partition(self, label: str) -> list[str]:
        return [n for n in self._arrays if partition_of(n) == label]

    def decoder_count(self) -> int:
        ids = {int(m.group(1)) for n in self._arrays if (m := _DECODER_RE.match(n))}
        return len(ids)

    def validate(self) -> None:
        """Every decoder must own both a regression and a scoring partition."""
        for j in range(self.decoder_count()):
            for part in ("regression", "scoring"):
                if not self.partition(f"decoder_{j}.{part}"):
                    raise ValueError(f"decoder_{j} has an empty {part} partition")

    def copy(self) -> "ParamStore":
        return ParamStore({n: a.copy() for n, a in self._arrays.items()})

    def leaves(self) -> dict[str, Tensor]:
        return {n: Tensor(a, requires_grad=True, name=n) for n, a in self._arrays.items()}

    def constants(self) -> dict[str, Tensor]:
        return {n: Tensor(a, name=n) for n, a in self._arrays.items()}

    def total_size(self) -> int:
        return int(sum(a.size for a in self._arrays.values()))


# ---------------------------------------------------------------- initializers

def fan_in_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_dense(store: ParamStore, name: str, n_in: int, n_out: int, rng) -> None:
    store.add(f"{name}.w", fan_in_uniform(rng, (n_in, n_out), n_in))
    store.add(f"{name}.b", np.zeros(n_out))


def init_conv1d(store: ParamStore, name: str, k: int, c_in: int, c_out: int, rng) -> None:
    store.add(f"{name}.w", fan_in_uniform(rng, (k, c_in, c_out), k * c_in))
    store.add(f"{name}.b", np.zeros(c_out))


def init_conv2d(store: ParamStore, name: str, k: int, c_in: int, c_out: int, rng) -> None:
    store.add(f"{name}.w", fan_in_uniform(rng, (k, k, c_in, c_out), k * k * c_in))
    store.add(f"{name}.b", np.zeros(c_out))


def init_lstm(store: ParamStore, name: str, n_in: int, hidden: int, rng, forget_bias: float = 1.0) -> None:
    store.add(f"{name}.kernel", fan_in_uniform(rng, (n_in, 4 * hidden), n_in))
    store.add(f"{name}.recurrent", fan_in_uniform(rng, (hidden, 4 * hidden), hidden))
    bias = np.zeros(4 * hidden)
    bias[hidden:2 * hidden] = forget_bias
    store.add(f"{name}.bias", bias)


# ---------------------------------------------------------------- layers

def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.shape[-1] != w.shape[0] or w.shape[1:] != b.shape:
        raise ValueError(f"dense shape mismatch: input {x.shape}, weights {w.shape}, bias {b.shape}")
    return ag.matmul(x, w) + b


elu = ag.elu
dropout = ag.dropout
conv1d = ag.conv1d


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, kernel: Tensor, recurrent: Tensor, bias: Tensor):
    """One LSTM step, gate order (input, forget, cell, output).  Returns (h, c)."""
    hid = recurrent.shape[0]
    if x.shape[-1] != kernel.shape[0] or kernel.shape[1] != 4 * hid:
        raise ValueError(f"lstm shape mismatch: input {x.shape}, kernel {kernel.shape}")
    z = ag.matmul(x, kernel) + ag.matmul(h, recurrent) + bias
    i = ag.sigmoid(z[..., :hid])
    f = ag.sigmoid(z[..., hid:2 * hid])
    g = ag.tanh(z[..., 2 * hid:3 * hid])
    o = ag.sigmoid(z[..., 3 * hid:])
    c_new = f * c + i * g
    return o * ag.tanh(c_new), c_new


def lstm_sequence(xs: Tensor, kernel: Tensor, recurrent: Tensor, bias: Tensor) -> Tensor:
    """Run the LSTM over axis -2 of ``xs`` (..., T, F) from zero state; return the last hidden state."""
    hid = recurrent.shape[0]
    if xs.shape[-1] != kernel.shape[0] or kernel.shape[1] != 4 * hid:
        raise ValueError(f"lstm shape mismatch: input {xs.shape}, kernel {kernel.shape}")
    lead = xs.shape[:-2]
    h = Tensor(np.zeros(lead + (hid,)))
    c = Tensor(np.zeros(lead + (hid,)))
    # input projection for all steps at once; same sums as lstm_cell
    xk = ag.matmul(xs, kernel) + bias
    for t in range(xs.shape[-2]):
        z = xk[..., t, :] + ag.matmul(h, recurrent)
        i = ag.sigmoid(z[..., :hid])
        f = ag.sigmoid(z[..., hid:2 * hid])
        g = ag.tanh(z[..., 2 * hid:3 * hid])
        o = ag.sigmoid(z[..., 3 * hid:])
        c = f * c + i * g
        h = o * ag.tanh(c)
    return h


@dataclass(frozen=True)
class CNNConfig:
    """Strided conv stack: one (kernel, stride, channels) triple per block."""

    blocks: tuple[tuple[int, int, int], ...] = ((6, 6, 16), (2, 2, 32), (2, 2, 64), (2, 2, 256))
    out_dim: int = 128
    image_size: int = 240
    in_channels: int = 3

    @property
    def feature_dim(self) -> int:
        return self.blocks[-1][2]


def init_cnn(store: ParamStore, name: str, cfg: CNNConfig, rng) -> None:
    c_in = cfg.in_channels
    for i, (k, _, c_out) in enumerate(cfg.blocks):
        init_conv2d(store, f"{name}.conv{i}", k, c_in, c_out, rng)
        c_in = c_out
    init_dense(store, f"{name}.proj", cfg.feature_dim, cfg.out_dim, rng)


def cnn_encode(image: Tensor, p: Mapping[str, Tensor], name: str, cfg: CNNConfig,
               training: bool = False, rng=None, dropout_rate: float = 0.0) -> Tensor:
    """(B, H, W, 3) images in [0, 1] -> (B, out_dim) context features."""
    s = cfg.image_size
    if image.ndim != 4 or image.shape[1:] != (s, s, cfg.in_channels):
        raise ValueError(f"expected images of shape (B, {s}, {s}, {cfg.in_channels}), got {image.shape}")
    x = image
    for i, (_, stride, _) in enumerate(cfg.blocks):
        x = ag.elu(ag.conv2d(x, p[f"{name}.conv{i}.w"], p[f"{name}.conv{i}.b"], stride=stride))
    pooled = ag.mean(x, axis=(1, 2))
    out = ag.elu(dense(pooled, p[f"{name}.proj.w"], p[f"{name}.proj.b"]))
    return ag.dropout(out, dropout_rate, training, rng)
