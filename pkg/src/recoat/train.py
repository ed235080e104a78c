"""Training loop: seeded shuffling, winner-take-all routing, Nadam, per-epoch checkpoints."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autograd as ag
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint, to_float32_grid
from .metrics import EvalRecord, evaluate
from .model import ModelConfig, ModelInputs, PredictionSet, forward, init_params, predict, prepare_example
from .nn import ParamStore
from .objective import BatchLoss, LossConfig, batch_loss, wta_gradient_mask, winner_histogram
from .optim import NadamState, clip_by_global_norm, optimizer_step
from .raster import RasterPalette
from .scene import AgentType, Scene, scene_to_target_frame, target_speed

CONFIG_NAME = "config.json"
LOG_NAME = "train_log.csv"
OPT_M, OPT_V = "opt.m.", "opt.v."
META_STEP, META_EPOCH = "train.step", "train.epoch"


class TrainError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    decay: float = 0.9
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    agent_type: AgentType = AgentType.VEHICLE
    clip_norm: float | None = None  # global-norm clipping, off by default
    model: ModelConfig | None = None  # None: defaults for agent_type
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        object.__setattr__(self, "agent_type", AgentType(self.agent_type))
        if self.model is None:
            object.__setattr__(self, "model", ModelConfig(agent_type=self.agent_type))
        if self.model.agent_type is not self.agent_type:
            raise ValueError("model.agent_type must match agent_type")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must be in (0, 1]")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * self.decay ** epoch

    def to_dict(self) -> dict:
        d = asdict(self)
        d["agent_type"] = self.agent_type.value
        d["model"] = self.model.to_dict()
        d["loss"] = asdict(self.loss)
        return d

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        if d.get("model") is not None:
            d["model"] = ModelConfig.from_dict(d["model"])
        if d.get("loss") is not None:
            loss = dict(d["loss"])
            loss["speed_weight"] = tuple(loss.get("speed_weight", LossConfig.speed_weight))
            d["loss"] = LossConfig(**loss)
        return cls(**d)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- data

@dataclass
class PreparedData:
    """Network inputs plus target-frame ground truth for a list of scenes."""

    ids: list[str]
    inputs: ModelInputs
    gt: np.ndarray  # (N, T, 2)
    speed: np.ndarray  # (N,)
    others: list[list[np.ndarray]]  # neighbor futures per scene, target frame

    def __len__(self):
        return len(self.ids)

    def take(self, idx: Sequence[int]) -> "PreparedData":
        idx = np.asarray(idx, dtype=np.int64)
        return PreparedData([self.ids[i] for i in idx], self.inputs.take(idx), self.gt[idx],
                            self.speed[idx], [self.others[i] for i in idx])


def prepare_dataset(scenes: Iterable[Scene], cfg: ModelConfig, palette: RasterPalette | None = None) -> PreparedData:
    ids, parts, gts, speeds, others = [], [], [], [], []
    for scene in scenes:
        if scene.agent_type is not cfg.agent_type:
            raise TrainError(f"{scene.scenario_id}: agent type {scene.agent_type.value} "
                             f"in a {cfg.agent_type.value} dataset")
        local = scene_to_target_frame(scene)
        ids.append(scene.scenario_id)
        parts.append(prepare_example(local, cfg, palette, in_target_frame=True))
        gts.append(local.target_future)
        speeds.append(target_speed(local))
        others.append(list(local.neighbor_futures or []))
    if not ids:
        raise TrainError("dataset is empty")
    return PreparedData(ids, ModelInputs.concat(parts), np.stack(gts), np.array(speeds), others)


def eval_records(data: PreparedData, preds: Sequence[PredictionSet]) -> list[EvalRecord]:
    return [EvalRecord(sid, p, gt, oth) for sid, p, gt, oth in zip(data.ids, preds, data.gt, data.others)]


def evaluate_model(params: ParamStore, cfg: ModelConfig, data: PreparedData, horizons=None):
    return evaluate(eval_records(data, predict(data.inputs, params, cfg)), horizons=horizons)


# ---------------------------------------------------------------- one step

def _leaf_grads(leaves) -> dict[str, np.ndarray]:
    return {n: (t.grad if t.grad is not None else np.zeros_like(t.data)) for n, t in leaves.items()}


def compute_gradients(params: ParamStore, inputs: ModelInputs, gt, speed, cfg: ModelConfig,
                      loss_cfg: LossConfig = LossConfig(), rng: np.random.Generator | None = None,
                      mode: str = "train") -> tuple[dict[str, np.ndarray], BatchLoss]:
    """Raw (unrouted) gradients of the batch loss for every parameter."""
    leaves = params.leaves()
    res = forward(inputs, leaves, cfg, mode, rng)
    loss = batch_loss(res.trajectories, res.probs, gt, speed, loss_cfg)
    ag.backward(loss.total)
    return _leaf_grads(leaves), loss


def compute_split_gradients(params: ParamStore, inputs: ModelInputs, gt, speed, cfg: ModelConfig,
                            loss_cfg: LossConfig = LossConfig(), rng: np.random.Generator | None = None,
                            mode: str = "train"):
    """Gradients of the trajectory term and of the scoring term, from one forward pass."""
    leaves = params.leaves()
    res = forward(inputs, leaves, cfg, mode, rng)
    loss = batch_loss(res.trajectories, res.probs, gt, speed, loss_cfg)
    ag.backward(loss.traj_term)
    traj = _leaf_grads(leaves)
    for t in leaves.values():
        t.grad = None
    ag.backward(loss.score_term)
    return traj, _leaf_grads(leaves), loss


def routed_gradients(params: ParamStore, inputs: ModelInputs, gt, speed, cfg: ModelConfig,
                     loss_cfg: LossConfig = LossConfig(), rng=None, mode: str = "train"):
    """Batch-loss gradients with winner-take-all routing.

    Non-winning decoders lose the trajectory-loss part of their regression
    gradients and keep everything that comes from the scoring loss.  When the
    scoring head sees a detached trajectory the scoring loss never reaches a
    regression branch, so one backward pass and a whole-partition mask suffice.
    """
    if cfg.detach_score_input:
        grads, loss = compute_gradients(params, inputs, gt, speed, cfg, loss_cfg, rng, mode)
        return wta_gradient_mask(grads, loss.winners, num_modes=cfg.num_modes), loss
    traj, score, loss = compute_split_gradients(params, inputs, gt, speed, cfg, loss_cfg, rng, mode)
    traj = wta_gradient_mask(traj, loss.winners, num_modes=cfg.num_modes)
    return {n: traj[n] + score[n] for n in traj}, loss


def train_step(params: ParamStore, state: NadamState, inputs: ModelInputs, gt, speed, cfg: ModelConfig,
               lr: float, loss_cfg: LossConfig = LossConfig(), rng=None, clip_norm: float | None = None,
               float32_grid: bool = True, mode: str = "train") -> tuple[NadamState, BatchLoss]:
    grads, loss = routed_gradients(params, inputs, gt, speed, cfg, loss_cfg, rng, mode)
    if clip_norm is not None:
        grads = clip_by_global_norm(grads, clip_norm)
    state = optimizer_step(params, grads, state, lr, float32_grid=float32_grid)
    return state, loss


# ---------------------------------------------------------------- checkpoints

def checkpoint_name(epoch: int) -> str:
    """File written after ``epoch`` epochs have completed."""
    return f"epoch_{epoch:03d}.rcat"


def save_training_checkpoint(path, params: ParamStore, state: NadamState, epochs_done: int) -> None:
    tensors = dict(params.items())
    tensors.update({OPT_M + n: a for n, a in state.m.items()})
    tensors.update({OPT_V + n: a for n, a in state.v.items()})
    tensors[META_STEP] = np.array([state.step], dtype=np.float64)
    tensors[META_EPOCH] = np.array([epochs_done], dtype=np.float64)
    save_checkpoint(path, tensors)


def _check_names(params: ParamStore, loaded: dict, path) -> None:
    for name, ref in params.items():
        if name not in loaded:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        if loaded[name].shape != ref.shape:
            raise CheckpointError(f"{path}: {name!r} has shape {loaded[name].shape}, expected {ref.shape}")


def load_params(path, cfg: ModelConfig) -> ParamStore:
    """Model parameters from a checkpoint, validated against ``cfg``."""
    loaded = load_checkpoint(path)
    params = init_params(cfg, 0)
    _check_names(params, loaded, path)
    extra = [n for n in loaded if n not in params and not n.startswith((OPT_M, OPT_V, "train."))]
    if extra:
        raise CheckpointError(f"{path}: unexpected tensors {extra[:3]}")
    for name in params:
        params[name] = loaded[name]
    return params


def load_training_checkpoint(path, cfg: ModelConfig) -> tuple[ParamStore, NadamState, int]:
    params = load_params(path, cfg)
    loaded = load_checkpoint(path)
    try:
        m = {n: loaded[OPT_M + n] for n in params}
        v = {n: loaded[OPT_V + n] for n in params}
        step = int(loaded[META_STEP][0])
        epoch = int(loaded[META_EPOCH][0])
    except KeyError as exc:
        raise CheckpointError(f"{path}: not a training checkpoint (missing {exc})") from None
    return params, NadamState(m, v, step), epoch


def latest_checkpoint(run_dir) -> Path | None:
    found = sorted(Path(run_dir).glob("epoch_*.rcat"))
    return found[-1] if found else None


# ---------------------------------------------------------------- loop

LOG_FIELDS = ["epoch", "batch", "lr", "traj_loss", "score_loss", "total"]


def _log_header(num_modes: int) -> list[str]:
    return LOG_FIELDS + [f"win_{j}" for j in range(num_modes)]


@dataclass
class TrainResult:
    params: ParamStore
    state: NadamState
    epochs_done: int
    log: list[list]


def batch_order(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Seeded shuffle for one epoch; the last partial batch is kept."""
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train(config: TrainConfig, data: PreparedData, run_dir: str | os.PathLike, resume: bool = False,
          progress: Callable[[str], None] | None = None) -> TrainResult:
    """Train for ``config.epochs`` epochs, writing a checkpoint and log rows after each epoch.

    With ``resume`` the latest checkpoint in ``run_dir`` is loaded and training
    continues from the next epoch; the result is bit-identical to a run that
    was never interrupted.
    """
    if len(data) == 0:
        raise TrainError("dataset is empty")
    cfg = config.model
    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    cfg_path = run / CONFIG_NAME
    header = _log_header(cfg.num_modes)
    log: list[list] = []

    ckpt = latest_checkpoint(run) if resume else None
    if ckpt is not None:
        # the epoch budget may grow on resume; everything else must match
        saved = TrainConfig.load(cfg_path) if cfg_path.exists() else None
        if saved is None or replace(saved, epochs=config.epochs).to_dict() != config.to_dict():
            raise CheckpointError(f"{run}: existing run has a different configuration")
        params, state, start = load_training_checkpoint(ckpt, cfg)
        log = [r for r in _read_log(run / LOG_NAME) if int(r[0]) < start]
    else:
        params = init_params(cfg, config.seed)
        for name in params:
            params[name] = to_float32_grid(params[name])
        state = NadamState.zeros_like(dict(params.items()))
        start = 0
    config.save(cfg_path)

    for epoch in range(start, config.epochs):
        lr = config.lr_at(epoch)
        for b, idx in enumerate(batch_order(len(data), config.batch_size, config.seed, epoch)):
            batch = data.take(idx)
            rng = np.random.default_rng([config.seed, epoch, b])
            state, loss = train_step(params, state, batch.inputs, batch.gt, batch.speed, cfg, lr,
                                     config.loss, rng, config.clip_norm)
            hist = winner_histogram(loss.winners, cfg.num_modes)
            log.append([epoch, b, lr, float(loss.traj.mean()), float(loss.score.mean()),
                        float(loss.total.data), *hist.tolist()])
        save_training_checkpoint(run / checkpoint_name(epoch + 1), params, state, epoch + 1)
        _write_log(run / LOG_NAME, header, log)
        if progress is not None:
            rows = [r for r in log if r[0] == epoch]
            progress(f"epoch {epoch + 1}/{config.epochs} lr {lr:.3g} "
                     f"loss {np.mean([r[5] for r in rows]):.4f}")
    if not log:
        _write_log(run / LOG_NAME, header, log)
    return TrainResult(params, state, max(start, config.epochs), log)


def _write_log(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in r])


def _read_log(path: Path) -> list[list]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    out = []
    for r in rows:
        out.append([int(r[0]), int(r[1]), *map(float, r[2:6]), *map(int, r[6:])])
    return out
