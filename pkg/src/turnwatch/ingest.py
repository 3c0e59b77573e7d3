"""Sequence preparation: frame-rate alignment, sliding windows, zero padding
with validity masks, class balancing and deterministic splits.

Reads the on-disk scenario container and the line-delimited detection-record
format written by external extractors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, SequenceTooLongError
from .scenario import (
    FLOW_CHANNELS,
    OBJECT_CHANNELS,
    AgentClass,
    InteractionLabel,
    RegionMask,
    apply_lane_filter,
)


@dataclass
class TurningSequence:
    """One turning episode ready for parsing: aligned frame streams + label."""

    id: str
    object_frames: np.ndarray  # (T, W, H, 4) uint8
    flow_frames: np.ndarray    # (T, W, H, 3) float32
    label: InteractionLabel
    fps: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.object_frames) != len(self.flow_frames):
            raise DataError(
                f"{self.id}: object/flow frame counts differ "
                f"({len(self.object_frames)} vs {len(self.flow_frames)})"
            )
        if len(self.object_frames) < 1:
            raise DataError(f"{self.id}: empty sequence")

    @property
    def length(self) -> int:
        return len(self.object_frames)


@dataclass
class WindowBatch:
    """Fixed-size windows covering one sequence, tail zero-padded."""

    object_windows: np.ndarray   # (k, w, W, H, 4)
    flow_windows: np.ndarray     # (k, w, W, H, 3)
    per_frame_valid: np.ndarray  # (k, w) bool
    frame_index: np.ndarray      # (k, w) int64, source frame index, -1 for padding
    parent_id: str
    window_size: int


@dataclass
class PaddedBatch:
    """One sequence extended to a fixed length with an explicit mask."""

    object_frames: np.ndarray  # (T*, W, H, 4)
    flow_frames: np.ndarray    # (T*, W, H, 3)
    mask: np.ndarray           # (T*,) bool
    true_length: int
    parent_id: str


@dataclass
class DatasetSplit:
    train: list[str]
    validation: list[str]
    test: list[str]
    class_counts: dict

    def all_ids(self) -> list[str]:
        return self.train + self.validation + self.test


# ---------------------------------------------------------------------------
# Parsing operations
# ---------------------------------------------------------------------------

def align_rates(seq: TurningSequence, factor: int) -> TurningSequence:
    """Keep every factor-th frame of both streams (frame-rate down-sampling)."""
    if factor < 1:
        raise ConfigurationError(f"down-sampling factor must be >= 1, got {factor}")
    if factor == 1:
        return seq
    return TurningSequence(
        id=seq.id,
        object_frames=seq.object_frames[::factor],
        flow_frames=seq.flow_frames[::factor],
        label=seq.label,
        fps=seq.fps / factor,
        meta=dict(seq.meta),
    )


def slide_windows(seq: TurningSequence, w: int, stride: int | None = None) -> WindowBatch:
    """Chunk the sequence into k windows of size w; the final partial window
    is zero-padded and its tail marked invalid. Default stride equals w."""
    if stride is None:
        stride = w
    if w < 1:
        raise ConfigurationError(f"window size must be >= 1, got {w}")
    if not (1 <= stride <= w):
        raise ConfigurationError(f"stride must be in [1, {w}], got {stride}")
    t = seq.length
    k = max(1, math.ceil((t - w) / stride) + 1)
    shape_o = (k, w) + seq.object_frames.shape[1:]
    shape_f = (k, w) + seq.flow_frames.shape[1:]
    obj = np.zeros(shape_o, dtype=seq.object_frames.dtype)
    flow = np.zeros(shape_f, dtype=seq.flow_frames.dtype)
    valid = np.zeros((k, w), dtype=bool)
    index = np.full((k, w), -1, dtype=np.int64)
    for j in range(k):
        start = j * stride
        n = min(w, t - start)
        if n > 0:
            obj[j, :n] = seq.object_frames[start:start + n]
            flow[j, :n] = seq.flow_frames[start:start + n]
            valid[j, :n] = True
            index[j, :n] = np.arange(start, start + n)
    return WindowBatch(obj, flow, valid, index, seq.id, w)


def pad_to(seq: TurningSequence, t_star: int) -> PaddedBatch:
    """Zero-pad the sequence to length t_star with a validity mask."""
    t = seq.length
    if t > t_star:
        raise SequenceTooLongError(
            f"{seq.id}: length {t} exceeds padded length {t_star}; sequence must be discarded"
        )
    obj = np.zeros((t_star,) + seq.object_frames.shape[1:], dtype=seq.object_frames.dtype)
    flow = np.zeros((t_star,) + seq.flow_frames.shape[1:], dtype=seq.flow_frames.dtype)
    obj[:t] = seq.object_frames
    flow[:t] = seq.flow_frames
    mask = np.zeros(t_star, dtype=bool)
    mask[:t] = True
    return PaddedBatch(obj, flow, mask, t, seq.id)


def reconstruct_from_windows(batch: WindowBatch) -> tuple[np.ndarray, np.ndarray]:
    """Invert slide_windows: place every valid frame back at its source index."""
    t = int(batch.frame_index.max()) + 1
    obj = np.zeros((t,) + batch.object_windows.shape[2:], dtype=batch.object_windows.dtype)
    flow = np.zeros((t,) + batch.flow_windows.shape[2:], dtype=batch.flow_windows.dtype)
    for j in range(batch.object_windows.shape[0]):
        for i in np.nonzero(batch.per_frame_valid[j])[0]:
            src = batch.frame_index[j, i]
            obj[src] = batch.object_windows[j, i]
            flow[src] = batch.flow_windows[j, i]
    return obj, flow


def reconstruct_from_padded(batch: PaddedBatch) -> tuple[np.ndarray, np.ndarray]:
    return batch.object_frames[batch.mask], batch.flow_frames[batch.mask]


# ---------------------------------------------------------------------------
# Balancing and splits
# ---------------------------------------------------------------------------

def build_splits(
    labeled_ids: list[tuple[str, InteractionLabel]],
    ratio: tuple[float, float] = (0.7, 0.3),
    val_fraction: float = 0.2,
    seed: int = 0,
    lengths: dict[str, int] | None = None,
    max_length: int | None = None,
) -> DatasetSplit:
    """Class-balanced train/validation/test split.

    Sequences above max_length are excluded first (the active length policy),
    then the larger class is down-sampled to the smaller one. Per class:
    test = floor(n * test_ratio), validation = floor(train_pool * val_fraction),
    remainder goes to train. Deterministic under the seed.
    """
    if abs(ratio[0] + ratio[1] - 1.0) > 1e-9 or min(ratio) <= 0:
        raise ConfigurationError(f"train/test ratio must be positive and sum to 1, got {ratio}")
    if not (0.0 <= val_fraction < 1.0):
        raise ConfigurationError(f"val_fraction must be in [0, 1), got {val_fraction}")

    pool: dict[InteractionLabel, list[str]] = {l: [] for l in InteractionLabel}
    for sid, label in labeled_ids:
        if max_length is not None and lengths is not None and lengths[sid] > max_length:
            continue
        pool[label].append(sid)
    for label, ids in pool.items():
        if not ids:
            raise DataError(f"class {label.name.lower()} has no usable sequences")

    rng = np.random.default_rng(seed)
    n_keep = min(len(ids) for ids in pool.values())
    split: dict[str, list[str]] = {"train": [], "validation": [], "test": []}
    counts: dict[str, dict[str, int]] = {}
    for label in InteractionLabel:
        ids = sorted(pool[label])
        order = rng.permutation(len(ids))
        kept = [ids[i] for i in order[:n_keep]]
        n_test = int(n_keep * ratio[1])
        n_val = int((n_keep - n_test) * val_fraction)
        split["test"].extend(kept[:n_test])
        split["validation"].extend(kept[n_test:n_test + n_val])
        split["train"].extend(kept[n_test + n_val:])
        counts[label.name.lower()] = {
            "train": n_keep - n_test - n_val, "validation": n_val, "test": n_test,
        }
    return DatasetSplit(split["train"], split["validation"], split["test"], counts)


def write_split_manifest(path: str | Path, split: DatasetSplit, seed: int):
    payload = {
        "seed": seed,
        "train": split.train,
        "validation": split.validation,
        "test": split.test,
        "class_counts": split.class_counts,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2))


def read_split_manifest(path: str | Path) -> DatasetSplit:
    payload = json.loads(Path(path).read_text())
    return DatasetSplit(
        payload["train"], payload["validation"], payload["test"], payload["class_counts"]
    )


# ---------------------------------------------------------------------------
# Per-frame targets (sequence label duplicated at each valid frame)
# ---------------------------------------------------------------------------

def window_targets(batch: WindowBatch, label: InteractionLabel) -> np.ndarray:
    """(k, w, 2) one-hot rows at valid frames, zeros at padding."""
    k, w = batch.per_frame_valid.shape
    targets = np.zeros((k, w, 2), dtype=np.float32)
    targets[batch.per_frame_valid] = label.one_hot
    return targets


def padded_targets(batch: PaddedBatch, label: InteractionLabel) -> np.ndarray:
    """(T*, 2) one-hot rows at valid frames, zeros at padding."""
    targets = np.zeros((len(batch.mask), 2), dtype=np.float32)
    targets[batch.mask] = label.one_hot
    return targets


# ---------------------------------------------------------------------------
# Scenario container reader
# ---------------------------------------------------------------------------

def load_dataset(dataset_dir: str | Path) -> tuple[list[TurningSequence], RegionMask, dict]:
    """Load a dataset written by the scenario container writer."""
    root = Path(dataset_dir)
    meta_path = root / "dataset.json"
    if not meta_path.exists():
        raise DataError(f"not a dataset directory: {root} (missing dataset.json)")
    meta = json.loads(meta_path.read_text())
    mask = RegionMask(np.load(root / "mask.npy").astype(bool))
    sequences = []
    for sid in meta["ids"]:
        seq_dir = root / f"seq_{sid}"
        manifest = json.loads((seq_dir / "manifest.json").read_text())
        sequences.append(
            TurningSequence(
                id=sid,
                object_frames=np.load(seq_dir / "object.npy"),
                flow_frames=np.load(seq_dir / "flow.npy"),
                label=InteractionLabel.from_name(manifest["label"]),
                fps=manifest["fps"],
                meta={k: v for k, v in manifest.items() if k not in ("id", "label", "fps")},
            )
        )
    return sequences, mask, meta


# ---------------------------------------------------------------------------
# Detection-record ingestion (external extractor outputs)
# ---------------------------------------------------------------------------

_CLASS_NAMES = {c.name.lower(): c for c in AgentClass}


def load_detection_records(
    records_path: str | Path,
    frame_size: tuple[int, int],
    labels: dict[str, str] | None = None,
    flow_dir: str | Path | None = None,
    mask: RegionMask | None = None,
    fps: float = 12.5,
) -> list[TurningSequence]:
    """Build sequences from line-delimited detection records.

    Each line is a JSON object {sequence_id, frame_idx, class, bbox} with the
    bbox as normalized [x, y, w, h] (top-left corner plus extents). Boxes are
    rasterized into the per-class occupancy channels; when a mask is given the
    through-lane filter is applied per frame. Flow tensors are read from
    flow_dir/<sequence_id>.npy when present, otherwise zero.
    """
    w, h = frame_size
    per_seq: dict[str, dict[int, list]] = {}
    for line_no, line in enumerate(Path(records_path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            sid = str(rec["sequence_id"])
            frame_idx = int(rec["frame_idx"])
            cls = _CLASS_NAMES[rec["class"].lower()]
            bx, by, bw, bh = (float(v) for v in rec["bbox"])
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"{records_path}:{line_no}: bad detection record ({exc})") from exc
        per_seq.setdefault(sid, {}).setdefault(frame_idx, []).append((cls, bx, by, bw, bh))

    sequences = []
    for sid in sorted(per_seq):
        frames = per_seq[sid]
        length = max(frames) + 1
        objects = np.zeros((length, w, h, OBJECT_CHANNELS), dtype=np.uint8)
        for frame_idx, dets in frames.items():
            boxes = []
            for cls, bx, by, bw, bh in dets:
                x0 = int(round(bx * (w - 1)))
                x1 = int(round((bx + bw) * (w - 1)))
                y0 = int(round(by * (h - 1)))
                y1 = int(round((by + bh) * (h - 1)))
                boxes.append((cls, (x0, x1, y0, y1)))
                cx0, cy0 = max(x0, 0), max(y0, 0)
                cx1, cy1 = min(x1, w - 1), min(y1, h - 1)
                if cx0 <= cx1 and cy0 <= cy1:
                    objects[frame_idx, cx0:cx1 + 1, cy0:cy1 + 1, cls.value] = 1
            if mask is not None:
                objects[frame_idx] = apply_lane_filter(objects[frame_idx], boxes, mask)
        flow_path = Path(flow_dir) / f"{sid}.npy" if flow_dir is not None else None
        if flow_path is not None and flow_path.exists():
            flows = np.load(flow_path).astype(np.float32)
            if flows.shape != (length, w, h, FLOW_CHANNELS):
                raise DataError(
                    f"{sid}: flow tensor shape {flows.shape} does not match "
                    f"({length}, {w}, {h}, {FLOW_CHANNELS})"
                )
        else:
            flows = np.zeros((length, w, h, FLOW_CHANNELS), dtype=np.float32)
        if labels is not None:
            if sid not in labels:
                raise DataError(f"{sid}: no label provided")
            label = InteractionLabel.from_name(labels[sid])
        else:
            label = InteractionLabel.NON_INTERACTION
        sequences.append(TurningSequence(sid, objects, flows, label, fps))
    return sequences
