"""Training loop, deterministic checkpoint container, sampled inference."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigurationError, DataError, NumericError, TrainingError
from .ingest import TurningSequence, pad_to, slide_windows
from .model import InteractionModel, ModelConfig, elbo_loss

CHECKPOINT_MAGIC = b"TWCK0001"


@dataclass
class TrainingConfig:
    parsing: str = "sliding"        # "sliding" | "padding"
    window: int = 8
    stride: int = 8
    t_star: int = 100
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    deterministic: bool = True
    n_samples: int = 100
    eval_repeats: int = 10
    max_length: int | None = None   # length policy; None = mode default

    def validate(self):
        if self.parsing not in ("sliding", "padding"):
            raise ConfigurationError(f"unknown parsing mode {self.parsing!r}")
        if self.window < 1 or not (1 <= self.stride <= self.window):
            raise ConfigurationError("invalid window/stride")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if self.n_samples < 1:
            raise ConfigurationError("n_samples must be >= 1")

    def active_max_length(self) -> int:
        if self.max_length is not None:
            return self.max_length
        return 500 if self.parsing == "sliding" else self.t_star

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        cfg = cls(**data)
        cfg.betas = tuple(cfg.betas)
        return cfg


@dataclass
class TrainState:
    model: InteractionModel
    model_config: ModelConfig
    train_config: TrainingConfig
    epoch: int
    seed: int
    history: list[dict] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Batch assembly
# ---------------------------------------------------------------------------

def _training_items(sequences: list[TurningSequence], cfg: TrainingConfig) -> list[tuple]:
    """Flat list of trainable rows: (seq_idx, start) windows or (seq_idx,)."""
    items = []
    if cfg.parsing == "sliding":
        for i, seq in enumerate(sequences):
            t = seq.length
            k = max(1, math.ceil((t - cfg.window) / cfg.stride) + 1)
            items.extend((i, j * cfg.stride) for j in range(k))
    else:
        items.extend((i,) for i in range(len(sequences)))
    return items


def _gather_batch(sequences, items, cfg: TrainingConfig):
    """Assemble (objects, flows, targets, valid) torch tensors for a batch."""
    if cfg.parsing == "sliding":
        steps = cfg.window
    else:
        steps = cfg.t_star
    first = sequences[0]
    b = len(items)
    w, h = first.object_frames.shape[1:3]
    obj = np.zeros((b, steps, w, h, 4), dtype=np.float32)
    flow = np.zeros((b, steps, w, h, 3), dtype=np.float32)
    targets = np.zeros((b, steps, 2), dtype=np.float32)
    valid = np.zeros((b, steps), dtype=bool)
    for row, item in enumerate(items):
        seq = sequences[item[0]]
        if cfg.parsing == "sliding":
            start = item[1]
            n = max(0, min(steps, seq.length - start))
            if n > 0:
                obj[row, :n] = seq.object_frames[start:start + n]
                flow[row, :n] = seq.flow_frames[start:start + n]
                valid[row, :n] = True
                targets[row, :n] = seq.label.one_hot
        else:
            n = seq.length
            if n > steps:
                raise DataError(
                    f"{seq.id}: length {n} exceeds padded length {steps}"
                )
            obj[row, :n] = seq.object_frames
            flow[row, :n] = seq.flow_frames
            valid[row, :n] = True
            targets[row, :n] = seq.label.one_hot
    return (
        torch.from_numpy(obj),
        torch.from_numpy(flow),
        torch.from_numpy(targets),
        torch.from_numpy(valid),
    )


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train(
    train_sequences: list[TurningSequence],
    val_sequences: list[TurningSequence],
    model_cfg: ModelConfig,
    train_cfg: TrainingConfig,
    log=None,
) -> TrainState:
    """Optimize the model on pre-split sequences; returns the trained state
    with a per-epoch loss history (kl, recon, total, val_total)."""
    train_cfg.validate()
    model_cfg.validate()
    if not train_sequences:
        raise DataError("empty training split")
    if train_cfg.deterministic:
        torch.use_deterministic_algorithms(True)
    torch.manual_seed(train_cfg.seed)
    model = InteractionModel(model_cfg)
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=train_cfg.learning_rate,
        betas=train_cfg.betas,
        weight_decay=0.0,
    )
    noise_gen = torch.Generator().manual_seed(train_cfg.seed + 1)
    order_rng = np.random.default_rng(train_cfg.seed + 2)
    items = _training_items(train_sequences, train_cfg)
    state = TrainState(model, model_cfg, train_cfg, 0, train_cfg.seed)

    for epoch in range(train_cfg.epochs):
        model.train()
        perm = order_rng.permutation(len(items))
        sums = {"kl": 0.0, "recon": 0.0, "total": 0.0}
        n_batches = 0
        for lo in range(0, len(perm), train_cfg.batch_size):
            batch_items = [items[i] for i in perm[lo:lo + train_cfg.batch_size]]
            obj, flow, targets, valid = _gather_batch(train_sequences, batch_items, train_cfg)
            optimizer.zero_grad()
            if model_cfg.variant == "cvae":
                noise = torch.randn(
                    len(batch_items), model_cfg.latent_dim, generator=noise_gen
                )
            else:
                noise = None
            try:
                probs, g = model(obj, flow, targets=targets, valid=valid, noise=noise)
                total, kl, recon = elbo_loss(
                    targets, probs, g, valid_mask=valid, kl_weight=model_cfg.kl_weight
                )
                diverged = not math.isfinite(total.item())
            except NumericError:
                diverged = True
            if diverged:
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}",
                    state_dump={"epoch": epoch, "batch": n_batches, "history": state.history},
                )
            total.backward()
            optimizer.step()
            sums["kl"] += kl.item()
            sums["recon"] += recon.item()
            sums["total"] += total.item()
            n_batches += 1
        row = {
            "epoch": epoch,
            "kl": sums["kl"] / n_batches,
            "recon": sums["recon"] / n_batches,
            "total": sums["total"] / n_batches,
            "val_total": _validation_loss(model, val_sequences, model_cfg, train_cfg),
        }
        state.history.append(row)
        state.epoch = epoch + 1
        if log is not None:
            log(row)
    return state


def _validation_loss(model, sequences, model_cfg, train_cfg) -> float:
    """Deterministic monitor loss: latent noise fixed at zero."""
    if not sequences:
        return float("nan")
    model.eval()
    items = _training_items(sequences, train_cfg)
    total = 0.0
    count = 0
    with torch.no_grad():
        for lo in range(0, len(items), train_cfg.batch_size):
            batch_items = items[lo:lo + train_cfg.batch_size]
            obj, flow, targets, valid = _gather_batch(sequences, batch_items, train_cfg)
            noise = (
                torch.zeros(len(batch_items), model_cfg.latent_dim)
                if model_cfg.variant == "cvae"
                else None
            )
            probs, g = model(obj, flow, targets=targets, valid=valid, noise=noise)
            loss, _, _ = elbo_loss(
                targets, probs, g, valid_mask=valid, kl_weight=model_cfg.kl_weight
            )
            total += loss.item() * len(batch_items)
            count += len(batch_items)
    model.train()
    return total / count


def write_loss_csv(path: str | Path, history: list[dict]):
    lines = ["epoch,kl,recon,total,val_total"]
    for row in history:
        lines.append(
            f"{row['epoch']},{row['kl']:.8f},{row['recon']:.8f},"
            f"{row['total']:.8f},{row['val_total']:.8f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Checkpoint container: magic, length-prefixed JSON header, raw tensor bytes
# ---------------------------------------------------------------------------

def save_checkpoint(path: str | Path, state: TrainState):
    tensors = []
    blobs = []
    for name, tensor in state.model.state_dict().items():
        arr = np.ascontiguousarray(tensor.detach().numpy())
        tensors.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = {
        "version": 1,
        "model_config": state.model_config.as_dict(),
        "train_config": state.train_config.as_dict(),
        "seed": state.seed,
        "epoch": state.epoch,
        "tensors": tensors,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> TrainState:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        model_cfg = ModelConfig.from_dict(header["model_config"])
        train_cfg = TrainingConfig.from_dict(header["train_config"])
        model = InteractionModel(model_cfg)
        state_dict = {}
        for spec in header["tensors"]:
            dtype = np.dtype(spec["dtype"])
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            raw = fh.read(count * dtype.itemsize)
            arr = np.frombuffer(raw, dtype=dtype).reshape(spec["shape"]).copy()
            state_dict[spec["name"]] = torch.from_numpy(arr)
        model.load_state_dict(state_dict)
    model.eval()
    return TrainState(
        model,
        model_cfg,
        train_cfg,
        epoch=header["epoch"],
        seed=header["seed"],
    )


# ---------------------------------------------------------------------------
# Sampled inference
# ---------------------------------------------------------------------------

def infer(
    seq: TurningSequence,
    state: TrainState,
    n: int | None = None,
    generator: torch.Generator | None = None,
    zero_noise: bool = False,
):
    """Run multi-sample inference on one sequence.

    Parses the sequence per the training configuration, encodes features once,
    then decodes n independent prior draws (the deterministic variant yields
    one output replicated n times). Returns an (n, T, 2) ensemble over the
    true sequence length; overlapping window predictions are averaged.
    """
    from .uncertainty import PredictionEnsemble

    cfg = state.train_config
    n = cfg.n_samples if n is None else n
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    model = state.model
    model.eval()
    t_true = seq.length

    if cfg.parsing == "sliding":
        batch = slide_windows(seq, cfg.window, cfg.stride)
        obj, flow = batch.object_windows, batch.flow_windows
        valid_np = batch.per_frame_valid
        frame_index = batch.frame_index
    else:
        padded = pad_to(seq, cfg.t_star)
        obj = padded.object_frames[None]
        flow = padded.flow_frames[None]
        valid_np = padded.mask[None]
        frame_index = np.where(valid_np, np.arange(cfg.t_star)[None, :], -1)

    valid = torch.from_numpy(valid_np)
    with torch.no_grad():
        features = model.x_encode(obj.astype(np.float32), flow.astype(np.float32))
        rows = features.shape[0]
        outputs = []
        if state.model_config.variant == "s2s":
            probs = model.decode(features, valid=valid)
            outputs = [probs.numpy()] * n
        else:
            for _ in range(n):
                if zero_noise:
                    z = torch.zeros(rows, state.model_config.latent_dim)
                else:
                    z = torch.randn(
                        rows, state.model_config.latent_dim, generator=generator
                    )
                probs = model.decode(features, z, valid=valid)
                outputs.append(probs.numpy())

    samples = np.zeros((n, t_true, 2), dtype=np.float64)
    counts = np.zeros(t_true, dtype=np.int64)
    for j in range(rows):
        for i in np.nonzero(valid_np[j])[0]:
            counts[frame_index[j, i]] += 1
    for s_idx, out in enumerate(outputs):
        acc = np.zeros((t_true, 2), dtype=np.float64)
        for j in range(rows):
            idx = frame_index[j][valid_np[j]]
            acc[idx] += out[j][valid_np[j]]
        samples[s_idx] = acc / counts[:, None]
    return PredictionEnsemble(samples, np.ones(t_true, dtype=bool))
