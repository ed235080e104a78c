"""ReCoAt forward pass: trajectory/context/path encoders, distance attention and
the ensemble of trajectory decoders with a scoring head."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import (CNNConfig, ParamStore, cnn_encode, dense, init_cnn, init_conv1d, init_dense, init_lstm,
                 lstm_sequence)
from .raster import RasterConfig, RasterPalette, rasterize
from .scene import (FUTURE_STEPS, HISTORY_STEPS, MAX_NEIGHBORS, STATE_DIM, AgentType, Scene,
                    build_neighbor_tensor, scene_to_target_frame, target_state_tensor)

PRED_SCHEMA = "recoat-pred/1"
MODES = ("train", "infer")


@dataclass(frozen=True)
class AttentionConfig:
    alpha: float = 10.0
    mask_value: float = -1e9
    distance_floor: float = 0.1

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.distance_floor > 0:
            raise ValueError("distance_floor must be positive")


@dataclass(frozen=True)
class ModelConfig:
    agent_type: AgentType = AgentType.VEHICLE
    num_modes: int = 6
    future_steps: int = FUTURE_STEPS
    hidden: int = 128
    conv_channels: int = 64
    conv_kernel: int = 3
    cnn: CNNConfig = field(default_factory=CNNConfig)
    path_points: int = 50
    max_paths: int = 3
    score_hidden: int = 64
    dropout: float = 0.5
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    # divides (x, y, vx, vy, heading) before the encoders
    state_scale: tuple[float, ...] = (5.0, 5.0, 5.0, 5.0, 1.0)
    path_scale: float = 10.0
    # decoder outputs are multiplied by this many meters
    output_scale: float = 10.0
    # stop scoring-loss gradients from reaching the regression branches
    detach_score_input: bool = True

    def __post_init__(self):
        object.__setattr__(self, "agent_type", AgentType(self.agent_type))
        if self.cnn.out_dim != self.hidden:
            raise ValueError("cnn.out_dim must equal hidden")

    @property
    def uses_paths(self) -> bool:
        return self.agent_type is AgentType.VEHICLE

    @property
    def fused_dim(self) -> int:
        return self.hidden * (4 if self.uses_paths else 3)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["agent_type"] = self.agent_type.value
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        d = dict(d)
        cnn = d.pop("cnn", None)
        att = d.pop("attention", None)
        kw = {}
        if cnn is not None:
            cnn = dict(cnn)
            cnn["blocks"] = tuple(tuple(b) for b in cnn["blocks"])
            kw["cnn"] = CNNConfig(**cnn)
        if att is not None:
            kw["attention"] = AttentionConfig(**att)
        if "state_scale" in d:
            d["state_scale"] = tuple(d["state_scale"])
        return cls(**d, **kw)


def tiny_config(agent_type=AgentType.VEHICLE, **overrides) -> ModelConfig:
    """Small widths for fast tests; same wiring as the default."""
    base = dict(
        agent_type=agent_type, hidden=8, conv_channels=4, score_hidden=5,
        cnn=CNNConfig(blocks=((8, 8, 3), (3, 3, 4), (2, 2, 5)), out_dim=8), path_points=6,
    )
    base.update(overrides)
    return ModelConfig(**base)


def init_params(cfg: ModelConfig, seed: int = 0) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    h = cfg.hidden
    for enc in ("target_enc", "neighbor_enc"):
        init_conv1d(store, f"{enc}.conv", cfg.conv_kernel, STATE_DIM, cfg.conv_channels, rng)
        init_lstm(store, f"{enc}.lstm", cfg.conv_channels, h, rng)
    init_cnn(store, "image_enc", cfg.cnn, rng)
    if cfg.uses_paths:
        init_dense(store, "path_enc.fc1", 2 * cfg.path_points, h, rng)
        init_dense(store, "path_enc.fc2", h, h, rng)
    t = cfg.future_steps
    for j in range(cfg.num_modes):
        init_dense(store, f"decoder_{j}.regression.x", cfg.fused_dim, t, rng)
        init_dense(store, f"decoder_{j}.regression.y", cfg.fused_dim, t, rng)
        init_dense(store, f"decoder_{j}.scoring.traj", 2 * t, cfg.score_hidden, rng)
        init_dense(store, f"decoder_{j}.scoring.hidden", cfg.fused_dim + cfg.score_hidden, cfg.score_hidden, rng)
        init_dense(store, f"decoder_{j}.scoring.out", cfg.score_hidden, 1, rng)
    store.validate()
    return store


# ---------------------------------------------------------------- inputs

@dataclass
class ModelInputs:
    """A batch of network inputs; the leading axis is the example."""

    target: np.ndarray  # (B, 10, 5)
    neighbors: np.ndarray  # (B, 10, 10, 5)
    neighbor_count: np.ndarray  # (B,)
    neighbor_pos: np.ndarray  # (B, 10, 2)
    image: np.ndarray  # (B, 240, 240, 3) uint8
    paths: np.ndarray  # (B, max_paths, path_points, 2)
    path_count: np.ndarray  # (B,)

    def __len__(self):
        return self.target.shape[0]

    def take(self, idx) -> "ModelInputs":
        return ModelInputs(**{k: v[idx] for k, v in self.__dict__.items()})

    @staticmethod
    def concat(parts: Sequence["ModelInputs"]) -> "ModelInputs":
        keys = parts[0].__dict__.keys()
        return ModelInputs(**{k: np.concatenate([getattr(p, k) for p in parts]) for k in keys})


def resample_polyline(line: np.ndarray, n: int) -> np.ndarray:
    """``n`` points equally spaced in arc length along ``line``."""
    line = np.asarray(line, dtype=np.float64).reshape(-1, 2)
    if len(line) == 1:
        return np.repeat(line, n, axis=0)
    seg = np.hypot(*np.diff(line, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0:
        return np.repeat(line[:1], n, axis=0)
    q = np.linspace(0.0, s[-1], n)
    return np.stack([np.interp(q, s, line[:, 0]), np.interp(q, s, line[:, 1])], axis=1)


def select_centerlines(centerlines: Iterable[np.ndarray], max_paths: int, points: int) -> tuple[np.ndarray, int]:
    """Nearest ``max_paths`` centerlines (by closest vertex to the origin), resampled and zero padded."""
    lines = [np.asarray(c, dtype=np.float64).reshape(-1, 2) for c in centerlines]
    lines = [c for c in lines if len(c)]
    order = sorted(range(len(lines)), key=lambda i: float(np.hypot(*lines[i].T).min()))[:max_paths]
    out = np.zeros((max_paths, points, 2))
    for row, i in enumerate(order):
        out[row] = resample_polyline(lines[i], points)
    return out, len(order)


def prepare_example(scene: Scene, cfg: ModelConfig, palette: RasterPalette | None = None,
                    raster_config: RasterConfig | None = None, in_target_frame: bool = False) -> ModelInputs:
    local = scene if in_target_frame else scene_to_target_frame(scene)
    nb = build_neighbor_tensor(local)
    paths, n_paths = select_centerlines(local.centerlines, cfg.max_paths, cfg.path_points)
    img = rasterize(local, cfg.agent_type, palette, raster_config).pixels
    return ModelInputs(
        target=target_state_tensor(local)[None],
        neighbors=nb.data[None],
        neighbor_count=np.array([nb.count]),
        neighbor_pos=nb.positions[None],
        image=img[None],
        paths=paths[None],
        path_count=np.array([n_paths]),
    )


# ---------------------------------------------------------------- attention

def att_scores(neighbor_positions: np.ndarray, count, cfg: AttentionConfig = AttentionConfig()) -> np.ndarray:
    """alpha / max(floor, distance) for real rows, ``mask_value`` for padding.  Works on (..., 10, 2)."""
    pos = np.asarray(neighbor_positions, dtype=np.float64)
    d = np.maximum(cfg.distance_floor, np.sqrt(pos[..., 0] ** 2 + pos[..., 1] ** 2))
    real = np.arange(pos.shape[-2]) < np.asarray(count)[..., None]
    return np.where(real, cfg.alpha / d, cfg.mask_value)


def att_weights(scores: np.ndarray, mask_value: float = AttentionConfig.mask_value) -> np.ndarray:
    """Softmax over the last axis.  A row with no real entries (all masked) gets all-zero weights."""
    s = np.asarray(scores, dtype=np.float64)
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    w = e / e.sum(axis=-1, keepdims=True)
    empty = (s <= 0.5 * mask_value).all(axis=-1, keepdims=True)
    return np.where(empty, 0.0, w)


def att_pool(weights, values):
    """sum_i weights_i * values_i over axis -2; accepts arrays or Tensors."""
    w = ag.as_tensor(weights)
    v = ag.as_tensor(values)
    if w.shape[-1] != v.shape[-2]:
        raise ValueError(f"att_pool shape mismatch: weights {w.shape}, values {v.shape}")
    out = ag.matmul(ag.reshape(w, w.shape[:-1] + (1, w.shape[-1])), v)
    pooled = ag.reshape(out, out.shape[:-2] + (out.shape[-1],))
    return pooled if isinstance(values, Tensor) or isinstance(weights, Tensor) else pooled.data


# ---------------------------------------------------------------- encoders

def encode_track(states, p: Mapping[str, Tensor], prefix: str, cfg: ModelConfig) -> Tensor:
    """(..., 10, 5) target-frame states -> (..., hidden) via conv1d then LSTM."""
    x = ag.as_tensor(states)
    if x.shape[-2:] != (HISTORY_STEPS, STATE_DIM):
        raise ValueError(f"expected track states (..., {HISTORY_STEPS}, {STATE_DIM}), got {x.shape}")
    x = x * (1.0 / np.asarray(cfg.state_scale))
    seq = ag.conv1d(x, p[f"{prefix}.conv.w"], p[f"{prefix}.conv.b"], padding="same")
    return lstm_sequence(seq, p[f"{prefix}.lstm.kernel"], p[f"{prefix}.lstm.recurrent"], p[f"{prefix}.lstm.bias"])


def encode_paths(paths, path_count, p: Mapping[str, Tensor], cfg: ModelConfig,
                 training: bool = False, rng=None) -> Tensor:
    """(B, P, n, 2) resampled centerlines -> (B, hidden); max over real polylines, zero if none."""
    paths = np.asarray(paths, dtype=np.float64)
    b, n_paths = paths.shape[:2]
    flat = Tensor(paths.reshape(b, n_paths, -1) / cfg.path_scale)
    h = ag.dropout(ag.elu(dense(flat, p["path_enc.fc1.w"], p["path_enc.fc1.b"])), cfg.dropout, training, rng)
    h = ag.dropout(ag.elu(dense(h, p["path_enc.fc2.w"], p["path_enc.fc2.b"])), cfg.dropout, training, rng)
    real = np.arange(n_paths)[None, :] < np.asarray(path_count)[:, None]
    h = h + Tensor(np.where(real, 0.0, -1e9)[..., None])
    pooled = ag.tmax(h, axis=1)
    return pooled * Tensor((np.asarray(path_count) > 0).astype(np.float64)[:, None])


# ---------------------------------------------------------------- forward

@dataclass
class ForwardResult:
    trajectories: Tensor  # (B, K, T, 2)
    logits: Tensor  # (B, K)
    probs: Tensor  # (B, K)
    attention: np.ndarray  # (B, 10)


@dataclass
class PredictionSet:
    trajectories: np.ndarray  # (K, T, 2)
    probs: np.ndarray  # (K,)

    def __post_init__(self):
        self.trajectories = np.asarray(self.trajectories, dtype=np.float64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.trajectories.ndim != 3 or self.trajectories.shape[-1] != 2:
            raise ValueError(f"trajectories must be (K, T, 2), got {self.trajectories.shape}")
        if self.probs.shape != self.trajectories.shape[:1]:
            raise ValueError("probs length must match the number of trajectories")


def forward(inputs: ModelInputs, params: Mapping[str, Tensor] | ParamStore, cfg: ModelConfig,
            mode: str = "infer", rng: np.random.Generator | None = None) -> ForwardResult:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    p = params.constants() if isinstance(params, ParamStore) else params
    training = mode == "train"
    rate = cfg.dropout
    b = len(inputs)

    target_feat = encode_track(inputs.target, p, "target_enc", cfg)

    # only real rows are encoded; padded rows stay zero and carry zero attention weight
    real = (np.arange(MAX_NEIGHBORS)[None, :] < np.asarray(inputs.neighbor_count)[:, None]).reshape(-1)
    rows = np.flatnonzero(real)
    if rows.size:
        flat = inputs.neighbors.reshape(b * MAX_NEIGHBORS, HISTORY_STEPS, STATE_DIM)[rows]
        nb_feat = ag.scatter_rows(encode_track(flat, p, "neighbor_enc", cfg), rows, b * MAX_NEIGHBORS)
    else:
        nb_feat = Tensor(np.zeros((b * MAX_NEIGHBORS, cfg.hidden)))
    values = ag.reshape(nb_feat, (b, MAX_NEIGHBORS, cfg.hidden))
    weights = att_weights(att_scores(inputs.neighbor_pos, inputs.neighbor_count, cfg.attention),
                          cfg.attention.mask_value)
    att_feat = att_pool(Tensor(weights), values)

    image = Tensor(inputs.image.astype(np.float64) * (1.0 / 255.0))
    img_feat = cnn_encode(image, p, "image_enc", cfg.cnn, training, rng, rate)

    parts = [target_feat, img_feat, att_feat]
    if cfg.uses_paths:
        parts.append(encode_paths(inputs.paths, inputs.path_count, p, cfg, training, rng))
    fused = ag.concat(parts, axis=-1)

    trajs, logits = [], []
    t = cfg.future_steps
    for j in range(cfg.num_modes):
        reg = f"decoder_{j}.regression"
        xs = dense(fused, p[f"{reg}.x.w"], p[f"{reg}.x.b"])
        ys = dense(fused, p[f"{reg}.y.w"], p[f"{reg}.y.b"])
        traj = ag.stack([xs, ys], axis=-1) * cfg.output_scale  # (B, T, 2)
        trajs.append(traj)

        sc = f"decoder_{j}.scoring"
        flat = ag.reshape(traj, (b, 2 * t)) * (1.0 / cfg.output_scale)
        if cfg.detach_score_input:
            flat = ag.detach(flat)
        tf = ag.dropout(ag.elu(dense(flat, p[f"{sc}.traj.w"], p[f"{sc}.traj.b"])), rate, training, rng)
        hid = ag.concat([fused, tf], axis=-1)
        hid = ag.dropout(ag.elu(dense(hid, p[f"{sc}.hidden.w"], p[f"{sc}.hidden.b"])), rate, training, rng)
        logits.append(dense(hid, p[f"{sc}.out.w"], p[f"{sc}.out.b"]))

    trajectories = ag.stack(trajs, axis=1)
    logit = ag.reshape(ag.concat(logits, axis=-1), (b, cfg.num_modes))
    return ForwardResult(trajectories, logit, ag.softmax(logit, axis=-1), weights)


def predict(inputs: ModelInputs, params: ParamStore, cfg: ModelConfig, batch_size: int = 64) -> list[PredictionSet]:
    out = []
    with ag.no_grad():
        for start in range(0, len(inputs), batch_size):
            res = forward(inputs.take(slice(start, start + batch_size)), params, cfg, "infer")
            out += [PredictionSet(t, pr) for t, pr in zip(res.trajectories.data, res.probs.data)]
    return out


# ---------------------------------------------------------------- prediction files

def prediction_record(scenario_id: str, pred: PredictionSet) -> dict:
    return {
        "version": PRED_SCHEMA,
        "scenario_id": scenario_id,
        "trajectories": pred.trajectories.tolist(),
        "probs": pred.probs.tolist(),
    }


def write_predictions(path: str | os.PathLike, items: Iterable[tuple[str, PredictionSet]]) -> None:
    """One JSON record per line."""
    with open(path, "w") as fh:
        for sid, pred in items:
            fh.write(json.dumps(prediction_record(sid, pred), separators=(",", ":")) + "\n")


def read_predictions(path: str | os.PathLike) -> dict[str, PredictionSet]:
    out: dict[str, PredictionSet] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("version") != PRED_SCHEMA:
            raise ValueError(f"{path}:{lineno}: unsupported prediction schema {rec.get('version')!r}")
        out[rec["scenario_id"]] = PredictionSet(rec["trajectories"], rec["probs"])
    return out


__all__ = [
    "AttentionConfig", "ModelConfig", "ModelInputs", "PredictionSet", "ForwardResult", "att_scores",
    "att_weights", "att_pool", "encode_track", "encode_paths", "forward", "init_params", "predict",
    "prepare_example", "read_predictions", "write_predictions", "tiny_config", "PRED_SCHEMA",
]
