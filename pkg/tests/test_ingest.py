import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from turnwatch.errors import ConfigurationError, DataError, SequenceTooLongError
from turnwatch.ingest import (
    TurningSequence,
    align_rates,
    build_splits,
    load_dataset,
    load_detection_records,
    pad_to,
    padded_targets,
    read_split_manifest,
    reconstruct_from_padded,
    reconstruct_from_windows,
    slide_windows,
    window_targets,
    write_split_manifest,
)
from turnwatch.scenario import InteractionLabel, RegionMask

from conftest import random_sequence

RNG = np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# align_rates
# ---------------------------------------------------------------------------

def test_align_rates_halves_30fps():
    seq = random_sequence(RNG, 30)
    seq.fps = 30.0
    out = align_rates(seq, 2)
    assert out.length == 15 and out.fps == 15.0


def test_align_rates_identity():
    seq = random_sequence(RNG, 9)
    out = align_rates(seq, 1)
    assert out is seq


def test_align_rates_kept_indices():
    seq = random_sequence(RNG, 7)
    out = align_rates(seq, 2)
    kept = [0, 2, 4, 6]  # brute-force enumeration of every factor-th index
    assert out.length == 4
    assert np.array_equal(out.object_frames, seq.object_frames[kept])
    assert np.array_equal(out.flow_frames, seq.flow_frames[kept])


def test_align_rates_invalid_factor():
    with pytest.raises(ConfigurationError):
        align_rates(random_sequence(RNG, 5), 0)


@given(t=st.integers(2, 40), a=st.integers(1, 4), b=st.integers(1, 4))
@settings(max_examples=40, deadline=None)
def test_align_rates_composition(t, a, b):
    seq = random_sequence(np.random.default_rng(t * 100 + a * 10 + b), t)
    twice = align_rates(align_rates(seq, a), b)
    kept = list(range(t))[::a][::b]
    once_oracle = seq.object_frames[kept]
    assert np.array_equal(twice.object_frames, once_oracle)


# ---------------------------------------------------------------------------
# slide_windows
# ---------------------------------------------------------------------------

def test_windows_exact_cover():
    seq = random_sequence(RNG, 16)
    batch = slide_windows(seq, 8, 8)
    assert batch.object_windows.shape[0] == 2
    assert batch.per_frame_valid.all()
    assert np.array_equal(batch.object_windows.reshape(16, *seq.object_frames.shape[1:]),
                          seq.object_frames)


def test_single_window_identity():
    seq = random_sequence(RNG, 8)
    batch = slide_windows(seq, 8)
    assert batch.object_windows.shape[0] == 1
    assert np.array_equal(batch.object_windows[0], seq.object_frames)
    assert batch.per_frame_valid.all()


def test_partial_tail_window():
    seq = random_sequence(RNG, 10)
    batch = slide_windows(seq, 8, 8)
    assert batch.object_windows.shape[0] == 2
    assert batch.per_frame_valid[0].all()
    assert batch.per_frame_valid[1].tolist() == [True, True] + [False] * 6
    assert batch.object_windows[1, 2:].sum() == 0
    # brute-force index partition oracle
    assert batch.frame_index[1].tolist() == [8, 9, -1, -1, -1, -1, -1, -1]


def test_window_param_validation():
    seq = random_sequence(RNG, 6)
    with pytest.raises(ConfigurationError):
        slide_windows(seq, 0)
    with pytest.raises(ConfigurationError):
        slide_windows(seq, 4, 5)
    with pytest.raises(ConfigurationError):
        slide_windows(seq, 4, 0)


@given(t=st.integers(1, 60), w=st.integers(1, 12), data=st.data())
@settings(max_examples=60, deadline=None)
def test_window_round_trip(t, w, data):
    stride = data.draw(st.integers(1, w))
    seq = random_sequence(np.random.default_rng(t * 1000 + w * 13 + stride), t)
    batch = slide_windows(seq, w, stride)
    obj, flow = reconstruct_from_windows(batch)
    assert np.array_equal(obj, seq.object_frames)
    assert np.array_equal(flow, seq.flow_frames)
    if stride == w:
        assert batch.object_windows.shape[0] == -(-t // w)
        assert batch.per_frame_valid.sum() == t  # no overlap: each frame once


# ---------------------------------------------------------------------------
# pad_to
# ---------------------------------------------------------------------------

def test_pad_mask_layout():
    seq = random_sequence(RNG, 5)
    batch = pad_to(seq, 8)
    assert batch.mask.tolist() == [True] * 5 + [False] * 3
    assert batch.object_frames[5:].sum() == 0
    assert batch.flow_frames[5:].sum() == 0
    assert batch.true_length == 5


def test_pad_identity_at_exact_length():
    seq = random_sequence(RNG, 8)
    batch = pad_to(seq, 8)
    assert batch.mask.all()
    assert np.array_equal(batch.object_frames, seq.object_frames)


def test_pad_rejects_too_long():
    seq = random_sequence(RNG, 101)
    with pytest.raises(SequenceTooLongError):
        pad_to(seq, 100)


@given(t=st.integers(1, 30), extra=st.integers(0, 20))
@settings(max_examples=40, deadline=None)
def test_pad_round_trip(t, extra):
    seq = random_sequence(np.random.default_rng(t * 31 + extra), t)
    batch = pad_to(seq, t + extra)
    assert batch.mask.sum() == t
    obj, flow = reconstruct_from_padded(batch)
    assert np.array_equal(obj, seq.object_frames)
    assert np.array_equal(flow, seq.flow_frames)


# ---------------------------------------------------------------------------
# build_splits
# ---------------------------------------------------------------------------

def _pool(n_interaction, n_non):
    ids = [(f"i{k}", InteractionLabel.INTERACTION) for k in range(n_interaction)]
    ids += [(f"n{k}", InteractionLabel.NON_INTERACTION) for k in range(n_non)]
    return ids


def test_split_sizes_match_reference_partition():
    split = build_splits(_pool(642, 642), ratio=(0.7, 0.3), val_fraction=0.2, seed=1)
    counts = split.class_counts
    for cls in ("interaction", "non_interaction"):
        assert counts[cls] == {"train": 360, "validation": 90, "test": 192}
    assert len(split.train) == 720 and len(split.validation) == 180 and len(split.test) == 384


def test_split_small_pool_floor_rounding():
    # floor per class per split, remainder to train: 10 -> test 3, val 1, train 6
    split = build_splits(_pool(10, 10), ratio=(0.7, 0.3), val_fraction=0.2, seed=1)
    for cls in ("interaction", "non_interaction"):
        assert split.class_counts[cls] == {"train": 6, "validation": 1, "test": 3}


def test_split_deterministic_under_seed():
    a = build_splits(_pool(50, 61), seed=9)
    b = build_splits(_pool(50, 61), seed=9)
    assert a.train == b.train and a.validation == b.validation and a.test == b.test
    c = build_splits(_pool(50, 61), seed=10)
    assert c.train != a.train


def test_split_balances_by_downsampling():
    split = build_splits(_pool(30, 80), seed=3)
    labels = dict(_pool(30, 80))
    for part in (split.train, split.validation, split.test):
        pos = sum(labels[i] is InteractionLabel.INTERACTION for i in part)
        assert pos * 2 == len(part)


def test_split_empty_class_rejected():
    with pytest.raises(DataError):
        build_splits(_pool(10, 0))


def test_split_length_policy_excludes_before_split():
    ids = _pool(12, 12)
    lengths = {sid: (120 if sid.endswith("0") else 50) for sid, _ in ids}
    split = build_splits(ids, seed=0, lengths=lengths, max_length=100)
    kept = set(split.all_ids())
    assert all(lengths[sid] <= 100 for sid in kept)


@given(n_pos=st.integers(4, 60), n_neg=st.integers(4, 60), seed=st.integers(0, 99))
@settings(max_examples=40, deadline=None)
def test_split_disjoint_exhaustive_balanced(n_pos, n_neg, seed):
    pool = _pool(n_pos, n_neg)
    split = build_splits(pool, seed=seed)
    parts = [set(split.train), set(split.validation), set(split.test)]
    assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
    n_keep = min(n_pos, n_neg)
    assert sum(len(p) for p in parts) == 2 * n_keep
    labels = dict(pool)
    for part in parts:
        if part:
            pos = sum(labels[i] is InteractionLabel.INTERACTION for i in part)
            assert pos * 2 == len(part)


def test_split_manifest_round_trip(tmp_path):
    split = build_splits(_pool(10, 10), seed=5)
    write_split_manifest(tmp_path / "split.json", split, seed=5)
    loaded = read_split_manifest(tmp_path / "split.json")
    assert loaded.train == split.train
    assert loaded.test == split.test
    assert json.loads((tmp_path / "split.json").read_text())["seed"] == 5


# ---------------------------------------------------------------------------
# per-frame targets
# ---------------------------------------------------------------------------

def test_window_targets_duplicate_label():
    seq = random_sequence(RNG, 10)
    batch = slide_windows(seq, 8, 8)
    targets = window_targets(batch, InteractionLabel.INTERACTION)
    assert targets.shape == (2, 8, 2)
    assert np.array_equal(targets[0], np.tile([0.0, 1.0], (8, 1)))
    assert targets[1, 2:].sum() == 0  # padded frames carry no target mass
    assert np.array_equal(targets[1, :2], np.tile([0.0, 1.0], (2, 1)))


def test_padded_targets_respect_mask():
    seq = random_sequence(RNG, 5)
    batch = pad_to(seq, 9)
    targets = padded_targets(batch, InteractionLabel.NON_INTERACTION)
    assert np.array_equal(targets[:5], np.tile([1.0, 0.0], (5, 1)))
    assert targets[5:].sum() == 0


# ---------------------------------------------------------------------------
# container and detection records
# ---------------------------------------------------------------------------

def test_load_dataset_missing_dir(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "nope")


def test_detection_records_round_trip(tmp_path):
    records = [
        {"sequence_id": "a", "frame_idx": 0, "class": "pedestrian", "bbox": [0.1, 0.2, 0.2, 0.2]},
        {"sequence_id": "a", "frame_idx": 1, "class": "car_truck", "bbox": [0.5, 0.5, 0.3, 0.2]},
        {"sequence_id": "b", "frame_idx": 0, "class": "bus", "bbox": [0.0, 0.0, 0.5, 0.5]},
    ]
    path = tmp_path / "dets.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    seqs = load_detection_records(
        path, (20, 10), labels={"a": "interaction", "b": "non_interaction"}, fps=25.0
    )
    assert [s.id for s in seqs] == ["a", "b"]
    a = seqs[0]
    assert a.length == 2 and a.label is InteractionLabel.INTERACTION
    # frame 0: pedestrian box x in [round(.1*19), round(.3*19)] = [2, 6]
    ped = a.object_frames[0, :, :, 0]
    assert ped[2:7, 2:5].all() and ped.sum() == 5 * 3
    assert a.object_frames[1, :, :, 2].sum() > 0
    assert a.flow_frames.shape == (2, 20, 10, 3) and a.flow_frames.sum() == 0


def test_detection_records_with_flow_and_mask(tmp_path):
    path = tmp_path / "dets.jsonl"
    path.write_text(json.dumps(
        {"sequence_id": "s", "frame_idx": 0, "class": "car_truck", "bbox": [0.1, 0.0, 0.2, 0.2]}
    ) + "\n")
    flow_dir = tmp_path / "flows"
    flow_dir.mkdir()
    flow = np.full((1, 16, 12, 3), 0.25, dtype=np.float32)
    np.save(flow_dir / "s.npy", flow)
    grid = np.zeros((16, 12), dtype=bool)
    grid[:, 6:] = True  # car's lower midpoint lands outside -> filtered
    seqs = load_detection_records(
        path, (16, 12), labels={"s": "non_interaction"},
        flow_dir=flow_dir, mask=RegionMask(grid),
    )
    assert seqs[0].object_frames.sum() == 0
    assert np.array_equal(seqs[0].flow_frames, flow)


def test_detection_records_bad_line(tmp_path):
    path = tmp_path / "dets.jsonl"
    path.write_text('{"sequence_id": "a", "frame_idx": 0, "class": "ufo", "bbox": [0,0,1,1]}\n')
    with pytest.raises(DataError):
        load_detection_records(path, (8, 8))


def test_turning_sequence_invariants():
    obj = np.zeros((3, 4, 4, 4), dtype=np.uint8)
    flow = np.zeros((2, 4, 4, 3), dtype=np.float32)
    with pytest.raises(DataError):
        TurningSequence("x", obj, flow, InteractionLabel.INTERACTION, 12.5)
    with pytest.raises(DataError):
        TurningSequence("y", obj[:0], np.zeros((0, 4, 4, 3), np.float32),
                        InteractionLabel.INTERACTION, 12.5)
