"""Experiment orchestration: dataset generation, training runs, sampled
evaluation with repeats, the model ablation grid, cross-dataset transfer
and report emission. All artifacts are plain files under a run directory."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from scipy import stats

from .errors import ConfigurationError, DataError
from .ingest import (
    DatasetSplit,
    TurningSequence,
    build_splits,
    load_dataset,
    read_split_manifest,
    write_split_manifest,
)
from .metrics import ConfusionMatrix, MetricsReport, confusion, metrics, vote
from .model import ModelConfig
from .scenario import (
    InteractionLabel,
    ScenarioConfig,
    gen_scenario,
    label_scenario,
    render_scenario,
    write_dataset,
)
from .training import (
    TrainingConfig,
    TrainState,
    infer,
    save_checkpoint,
    train,
    write_loss_csv,
)
from .uncertainty import uncertainty_scores

# variant rows of the model matrix: (variant, use_object, use_flow, attention)
VARIANT_MATRIX = {
    "s2s_ob_op_att": ("s2s", True, True, True),
    "cvae_op_att": ("cvae", False, True, True),
    "cvae_ob_att": ("cvae", True, False, True),
    "cvae_ob_op": ("cvae", True, True, False),
    "cvae_ob_op_att": ("cvae", True, True, True),
}


@dataclass
class ExperimentConfig:
    """Flat experiment configuration; every key can come from a key=value
    config file or a --set override."""

    # scenario generation
    frame_width: int = 128
    frame_height: int = 96
    step_rate: float = 12.5
    steps_min: int = 40
    steps_max: int = 80
    turn: str = "right"
    vru_min: int = 1
    vru_max: int = 3
    ambiguity: float = 0.0
    v_cap: float = 8.0
    n_per_class: int = 50
    data_seed: int = 7
    modality_split: bool = False
    # parsing
    parsing: str = "sliding"
    window: int = 8
    stride: int = 8
    t_star: int = 100
    max_length: int = 0            # 0 = mode default (500 sliding / t_star padding)
    # split
    test_ratio: float = 0.3
    val_fraction: float = 0.2
    split_seed: int = 11
    # model
    variant: str = "cvae"
    use_object: bool = True
    use_flow: bool = True
    attention: bool = True
    conv_filters: tuple[int, ...] = (16, 32, 64)
    label_embed_dim: int = 32
    latent_dim: int = 64
    kl_weight: float = 1.0
    allow_custom_variant: bool = False
    # training
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-4
    train_seed: int = 0
    deterministic: bool = True
    # evaluation
    n_samples: int = 100
    eval_repeats: int = 10
    eval_seed: int = 123
    keep_ensembles: int = 4

    def validate(self):
        key = (self.variant, self.use_object, self.use_flow, self.attention)
        if not self.allow_custom_variant and key not in VARIANT_MATRIX.values():
            raise ConfigurationError(
                f"variant/modality/attention combination {key} is not a model-matrix "
                f"row; set allow_custom_variant=true to use it"
            )
        self.model_config().validate()
        self.training_config().validate()

    def scenario_config(self, intent: str) -> ScenarioConfig:
        return ScenarioConfig(
            frame_size=(self.frame_width, self.frame_height),
            step_rate=self.step_rate,
            steps=(self.steps_min, self.steps_max),
            turn=self.turn,
            intent=intent,
            vru_count=(max(self.vru_min, 1) if intent == "interaction" else self.vru_min,
                       self.vru_max),
            ambiguity=self.ambiguity,
            v_cap=self.v_cap,
        )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            frame_size=(self.frame_width, self.frame_height),
            conv_filters=tuple(self.conv_filters),
            conv_kernels=(8, 4, 2)[: len(self.conv_filters)],
            label_embed_dim=self.label_embed_dim,
            latent_dim=self.latent_dim,
            attention=self.attention,
            use_object=self.use_object,
            use_flow=self.use_flow,
            variant=self.variant,
            kl_weight=self.kl_weight,
        )

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            parsing=self.parsing,
            window=self.window,
            stride=self.stride,
            t_star=self.t_star,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.train_seed,
            deterministic=self.deterministic,
            n_samples=self.n_samples,
            eval_repeats=self.eval_repeats,
            max_length=self.max_length if self.max_length > 0 else None,
        )

    def as_dict(self) -> dict:
        return asdict(self)


_BOOL_WORDS = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


def parse_config_value(key: str, raw: str):
    """Coerce a raw config-file string to the field's type."""
    fields = {f.name: f.type for f in ExperimentConfig.__dataclass_fields__.values()}
    if key not in fields:
        raise ConfigurationError(f"unknown config key {key!r}")
    current = getattr(ExperimentConfig(), key)
    raw = raw.strip()
    if isinstance(current, bool):
        if raw.lower() not in _BOOL_WORDS:
            raise ConfigurationError(f"{key}: expected a boolean, got {raw!r}")
        return _BOOL_WORDS[raw.lower()]
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        return tuple(int(v) for v in raw.split(","))
    return raw


def load_config_file(path: str | Path) -> dict:
    """Parse a flat `key = value` config file (# starts a comment)."""
    overrides = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{line_no}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        overrides[key] = parse_config_value(key, raw)
    return overrides


def make_config(file_path=None, overrides=None) -> ExperimentConfig:
    values = {}
    if file_path is not None:
        values.update(load_config_file(file_path))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        values[key.strip()] = parse_config_value(key.strip(), raw)
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def write_config_echo(out_dir: Path, cfg: ExperimentConfig, extra: dict | None = None):
    payload = cfg.as_dict()
    if extra:
        payload.update(extra)
    (out_dir / "config.json").write_text(json.dumps(payload, sort_keys=True, indent=2))


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

def generate_dataset(cfg: ExperimentConfig, out_dir: str | Path) -> dict:
    """Write a balanced synthetic dataset to the scenario container format.

    With modality_split on, sequences alternate between motion-only signal
    (occupancy channels blanked, as if the object detector dropped out) and
    occupancy-only signal (motion channels blanked).
    """
    if cfg.n_per_class < 1:
        raise DataError("n_per_class must be >= 1")
    entries = []
    mask = None
    for class_idx, intent in enumerate(("interaction", "non_interaction")):
        scenario_cfg = cfg.scenario_config(intent)
        for i in range(cfg.n_per_class):
            seed = cfg.data_seed + 500_000 * class_idx + i
            scen = gen_scenario(scenario_cfg, seed)
            objects, flows = render_scenario(scen)
            group = "full"
            if cfg.modality_split:
                group = "motion_only" if i % 2 == 0 else "occupancy_only"
                if group == "motion_only":
                    objects = np.zeros_like(objects)
                else:
                    flows = np.zeros_like(flows)
            mask = scen.region_mask
            entries.append({
                "id": f"{intent[:3]}{i:05d}",
                "label": label_scenario(scen, scenario_cfg.label_rule),
                "objects": objects,
                "flows": flows,
                "fps": cfg.step_rate,
                "seed": seed,
                "extra": {
                    "ambiguous": bool(scen.metadata["ambiguous"]),
                    "group": group,
                    "length": len(objects),
                },
            })
    meta = {
        "frame_size": [cfg.frame_width, cfg.frame_height],
        "step_rate": cfg.step_rate,
        "v_cap": cfg.v_cap,
        "turn": cfg.turn,
        "seed": cfg.data_seed,
        "ambiguity": cfg.ambiguity,
        "n_per_class": cfg.n_per_class,
        "modality_split": cfg.modality_split,
    }
    write_dataset(out_dir, entries, mask, meta)
    return meta


# ---------------------------------------------------------------------------
# Training runs
# ---------------------------------------------------------------------------

def build_dataset_split(sequences: list[TurningSequence], cfg: ExperimentConfig) -> DatasetSplit:
    labeled = [(s.id, s.label) for s in sequences]
    lengths = {s.id: s.length for s in sequences}
    max_length = cfg.training_config().active_max_length()
    return build_splits(
        labeled,
        ratio=(1.0 - cfg.test_ratio, cfg.test_ratio),
        val_fraction=cfg.val_fraction,
        seed=cfg.split_seed,
        lengths=lengths,
        max_length=max_length,
    )


def run_training(dataset_dir: str | Path, cfg: ExperimentConfig, out_dir: str | Path,
                 log=None) -> TrainState:
    """Train one model on the dataset; writes checkpoint, loss curve, split
    manifest and the resolved config echo into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sequences, _, _ = load_dataset(dataset_dir)
    split = build_dataset_split(sequences, cfg)
    by_id = {s.id: s for s in sequences}
    state = train(
        [by_id[i] for i in split.train],
        [by_id[i] for i in split.validation],
        cfg.model_config(),
        cfg.training_config(),
        log=log,
    )
    write_config_echo(out, cfg, {"dataset_dir": str(dataset_dir)})
    write_split_manifest(out / "split.json", split, cfg.split_seed)
    write_loss_csv(out / "loss.csv", state.history)
    save_checkpoint(out / "checkpoint.twck", state)
    return state


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class SequenceEval:
    id: str
    truth: InteractionLabel
    predicted: InteractionLabel
    gamma: float
    ambiguous: bool
    mean_curve: np.ndarray  # (T, 2)
    std_curve: np.ndarray   # (T, 2)


@dataclass
class EvalRun:
    metrics_runs: list[MetricsReport]
    confusion: ConfusionMatrix
    per_sequence: list[SequenceEval]
    ensembles: dict[str, np.ndarray] = field(default_factory=dict)

    def metric_summary(self) -> dict:
        """mean and std per metric over the evaluation repeats."""
        out = {}
        for name in ("accuracy", "precision", "recall", "f1"):
            values = [getattr(m, name) for m in self.metrics_runs]
            out[name] = {
                "mean": float(np.mean(values)),
                "std": float(np.std(values)) if len(values) > 1 else 0.0,
            }
        return out


def evaluate_checkpoint(
    state: TrainState,
    sequences: list[TurningSequence],
    n_samples: int | None = None,
    repeats: int = 1,
    seed: int = 123,
    keep_ensembles: int = 0,
) -> EvalRun:
    """Run the sampled evaluation `repeats` times; voting on the per-frame
    means gives the sequence prediction, uncertainty is scored on the first
    repeat's ensembles with a shared normalization."""
    if not sequences:
        raise DataError("no sequences to evaluate")
    if state.model_config.variant == "s2s":
        repeats = 1  # deterministic output, repeats are identical
    metrics_runs = []
    first_cm = None
    per_sequence: list[SequenceEval] = []
    kept: dict[str, np.ndarray] = {}
    truths = [s.label for s in sequences]
    for r in range(repeats):
        generator = torch.Generator().manual_seed(seed + 1000 * r)
        ensembles = [infer(s, state, n=n_samples, generator=generator) for s in sequences]
        preds = [vote(e.samples.mean(axis=0), e.valid_mask) for e in ensembles]
        cm = confusion(preds, truths)
        metrics_runs.append(metrics(cm))
        if r == 0:
            first_cm = cm
            scores = uncertainty_scores(ensembles)
            for i, (seq, ens, score) in enumerate(zip(sequences, ensembles, scores)):
                per_sequence.append(
                    SequenceEval(
                        id=seq.id,
                        truth=seq.label,
                        predicted=preds[i],
                        gamma=score.gamma,
                        ambiguous=bool(seq.meta.get("ambiguous", False)),
                        mean_curve=ens.samples.mean(axis=0),
                        std_curve=ens.samples.std(axis=0),
                    )
                )
                if len(kept) < keep_ensembles:
                    kept[seq.id] = ens.samples
    return EvalRun(metrics_runs, first_cm, per_sequence, kept)


def write_eval_artifacts(out_dir: str | Path, run: EvalRun):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = run.metric_summary()
    lines = ["run,accuracy,precision,recall,f1"]
    for i, m in enumerate(run.metrics_runs):
        lines.append(f"{i},{m.accuracy:.6f},{m.precision:.6f},{m.recall:.6f},{m.f1:.6f}")
    for stat in ("mean", "std"):
        lines.append(
            stat + "," + ",".join(
                f"{summary[name][stat]:.6f}" for name in ("accuracy", "precision", "recall", "f1")
            )
        )
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")

    cm = run.confusion
    (out / "confusion.csv").write_text(
        "tp,tn,fp,fn\n" f"{cm.tp},{cm.tn},{cm.fp},{cm.fn}\n"
    )

    lines = ["id,truth,predicted,gamma,ambiguous"]
    for s in run.per_sequence:
        lines.append(
            f"{s.id},{s.truth.name.lower()},{s.predicted.name.lower()},"
            f"{s.gamma:.6f},{int(s.ambiguous)}"
        )
    (out / "gamma.csv").write_text("\n".join(lines) + "\n")

    curves = out / "curves"
    curves.mkdir(exist_ok=True)
    for s in run.per_sequence[: max(len(run.ensembles), 4)]:
        rows = ["step,mean_non_interaction,mean_interaction,std_interaction"]
        for t in range(len(s.mean_curve)):
            rows.append(
                f"{t},{s.mean_curve[t, 0]:.6f},{s.mean_curve[t, 1]:.6f},{s.std_curve[t, 1]:.6f}"
            )
        (curves / f"seq_{s.id}.csv").write_text("\n".join(rows) + "\n")

    ens_dir = out / "ensembles"
    ens_dir.mkdir(exist_ok=True)
    for sid, samples in run.ensembles.items():
        np.save(ens_dir / f"seq_{sid}.npy", samples)


def load_split_sequences(dataset_dir, run_dir=None, split_name="test", cfg=None):
    """Sequences of one split; the split manifest comes from the run dir when
    present, otherwise it is rebuilt deterministically from the config."""
    sequences, _, _ = load_dataset(dataset_dir)
    by_id = {s.id: s for s in sequences}
    manifest = Path(run_dir) / "split.json" if run_dir else None
    if manifest is not None and manifest.exists():
        split = read_split_manifest(manifest)
    elif cfg is not None:
        split = build_dataset_split(sequences, cfg)
    else:
        raise DataError("no split manifest and no config to rebuild one")
    ids = {"train": split.train, "validation": split.validation, "test": split.test}[split_name]
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DataError(f"split references missing sequences: {missing[:5]}")
    return [by_id[i] for i in ids]


# ---------------------------------------------------------------------------
# Ablation grid
# ---------------------------------------------------------------------------

def run_ablation(dataset_dir: str | Path, base_cfg: ExperimentConfig,
                 out_dir: str | Path, log=None) -> dict:
    """Train and evaluate the five model-matrix variants in both parsing
    modes. Per-cell failures are isolated and recorded in the grid."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = {}
    cell_idx = 0
    for variant_name, (variant, ob, op, att) in VARIANT_MATRIX.items():
        for parsing in ("sliding", "padding"):
            cell = f"{variant_name}__{parsing}"
            cell_dir = out / cell
            cfg = ExperimentConfig(**{
                **base_cfg.as_dict(),
                "variant": variant,
                "use_object": ob,
                "use_flow": op,
                "attention": att,
                "parsing": parsing,
                "train_seed": base_cfg.train_seed + 100 * cell_idx,
            })
            cfg.conv_filters = tuple(cfg.conv_filters)
            cell_idx += 1
            try:
                state = run_training(dataset_dir, cfg, cell_dir, log=log)
                test_seqs = load_split_sequences(dataset_dir, cell_dir, "test", cfg)
                run = evaluate_checkpoint(
                    state, test_seqs,
                    n_samples=cfg.n_samples,
                    repeats=cfg.eval_repeats,
                    seed=cfg.eval_seed,
                    keep_ensembles=cfg.keep_ensembles,
                )
                write_eval_artifacts(cell_dir / "eval", run)
                summary = run.metric_summary()
                grid[cell] = {
                    "status": "ok",
                    "variant": variant_name,
                    "parsing": parsing,
                    "deterministic": variant == "s2s",
                    "gammas": [s.gamma for s in run.per_sequence],
                    **{name: summary[name] for name in ("accuracy", "precision", "recall", "f1")},
                }
            except Exception as exc:  # isolate per-cell failures
                grid[cell] = {
                    "status": "error",
                    "variant": variant_name,
                    "parsing": parsing,
                    "error": f"{type(exc).__name__}: {exc}",
                }
    (out / "ablation.json").write_text(json.dumps(grid, sort_keys=True, indent=2))
    _write_ablation_csv(out / "ablation.csv", grid)
    _write_gamma_significance(out / "gamma_significance.csv", grid)
    return grid


def _format_cell(entry: dict, name: str) -> str:
    value = entry[name]["mean"]
    std = entry[name]["std"]
    if entry.get("deterministic"):
        return f"{value:.3f}"
    return f"{value:.3f}±{std:.3f}"


def _write_ablation_csv(path: Path, grid: dict):
    lines = ["model,parsing,accuracy,precision,recall,f1,status"]
    for cell in sorted(grid):
        e = grid[cell]
        if e["status"] != "ok":
            lines.append(f"{e['variant']},{e['parsing']},,,,,{e['error']}")
            continue
        lines.append(
            f"{e['variant']},{e['parsing']},"
            + ",".join(_format_cell(e, n) for n in ("accuracy", "precision", "recall", "f1"))
            + ",ok"
        )
    path.write_text("\n".join(lines) + "\n")


def _write_gamma_significance(path: Path, grid: dict):
    """Pairwise Mann-Whitney U tests between the models' uncertainty
    distributions, per parsing mode."""
    lines = ["parsing,model_a,model_b,u_statistic,p_value"]
    for parsing in ("sliding", "padding"):
        cells = {
            e["variant"]: e["gammas"]
            for e in grid.values()
            if e["status"] == "ok" and e["parsing"] == parsing and e.get("gammas")
        }
        names = sorted(cells)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                if len(set(cells[a])) < 2 and len(set(cells[b])) < 2:
                    continue
                res = stats.mannwhitneyu(cells[a], cells[b], alternative="two-sided")
                lines.append(f"{parsing},{a},{b},{res.statistic:.4f},{res.pvalue:.6g}")
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Cross-dataset evaluation
# ---------------------------------------------------------------------------

def mirror_sequence(seq: TurningSequence) -> TurningSequence:
    """Flip the x axis of all channels; motion orientation is remapped so the
    encoded angle matches the mirrored velocity (hue' = (0.5 - hue) mod 1
    inside moving regions)."""
    obj = seq.object_frames[:, ::-1].copy()
    flow = seq.flow_frames[:, ::-1].copy()
    moving = flow[..., 1] > 0
    flow[..., 0] = np.where(moving, np.mod(0.5 - flow[..., 0], 1.0), 0.0)
    return TurningSequence(seq.id, obj, flow, seq.label, seq.fps, dict(seq.meta))


def resize_sequence(seq: TurningSequence, frame_size: tuple[int, int]) -> TurningSequence:
    """Nearest-neighbor resize of both streams to (W, H); a same-size resize
    is an exact no-op."""
    w_dst, h_dst = frame_size
    w_src, h_src = seq.object_frames.shape[1:3]
    if (w_src, h_src) == (w_dst, h_dst):
        return seq
    xs = np.minimum((np.arange(w_dst) + 0.5) * w_src / w_dst, w_src - 1).astype(np.int64)
    ys = np.minimum((np.arange(h_dst) + 0.5) * h_src / h_dst, h_src - 1).astype(np.int64)
    obj = seq.object_frames[:, xs][:, :, ys]
    flow = seq.flow_frames[:, xs][:, :, ys]
    return TurningSequence(seq.id, obj, flow, seq.label, seq.fps, dict(seq.meta))


def cross_eval(
    state: TrainState,
    sequences: list[TurningSequence],
    resize: bool = True,
    mirror: bool = False,
    n_samples: int | None = None,
    repeats: int = 1,
    seed: int = 123,
) -> EvalRun:
    """Evaluate a trained model on a foreign dataset after aligning geometry:
    optional x mirroring (travel direction) and nearest resize to the
    checkpoint's frame size."""
    transformed = []
    target = state.model_config.frame_size
    for seq in sequences:
        if mirror:
            seq = mirror_sequence(seq)
        if resize:
            seq = resize_sequence(seq, target)
        if seq.object_frames.shape[1:3] != tuple(target):
            raise DataError(
                f"{seq.id}: frame size {seq.object_frames.shape[1:3]} does not match "
                f"checkpoint {target}; pass resize=True"
            )
        transformed.append(seq)
    return evaluate_checkpoint(state, transformed, n_samples=n_samples,
                               repeats=repeats, seed=seed)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def write_report(run_dir: str | Path, plots: bool = False) -> Path:
    """Render human-readable views of the stored evaluation artifacts.

    The report only reformats CSV values; regeneration is idempotent.
    """
    run = Path(run_dir)
    eval_dir = run / "eval"
    report = run / "report"
    if (run / "ablation.json").exists():
        _report_ablation(run, report)
        return report
    if not eval_dir.exists():
        raise DataError(f"{run}: no eval artifacts to report")
    report.mkdir(exist_ok=True)

    metrics_rows = (eval_dir / "metrics.csv").read_text().strip().splitlines()
    header = metrics_rows[0].split(",")[1:]
    summary = {}
    for row in metrics_rows[1:]:
        parts = row.split(",")
        if parts[0] in ("mean", "std"):
            summary[parts[0]] = parts[1:]
    cm_row = (eval_dir / "confusion.csv").read_text().strip().splitlines()[1].split(",")
    tp, tn, fp, fn = (int(v) for v in cm_row)
    total = max(tp + tn + fp + fn, 1)

    gammas = []
    for row in (eval_dir / "gamma.csv").read_text().strip().splitlines()[1:]:
        gammas.append(float(row.split(",")[3]))

    lines = ["Evaluation summary", "=" * 18, ""]
    lines.append("metric      mean      std")
    for i, name in enumerate(header):
        lines.append(f"{name:<10}  {summary['mean'][i]}  {summary['std'][i]}")
    lines.append("")
    lines.append("confusion (rows truth, cols prediction)")
    lines.append("                 interaction  non_interaction")
    lines.append(f"interaction      {tp:>11d}  {fn:>15d}")
    lines.append(f"non_interaction  {fp:>11d}  {tn:>15d}")
    lines.append("")
    lines.append(f"uncertainty: n={len(gammas)} mean={np.mean(gammas):.6f} "
                 f"median={np.median(gammas):.6f} max={np.max(gammas):.6f}")
    (report / "summary.txt").write_text("\n".join(lines) + "\n")

    norm = [[tp / total, fn / total], [fp / total, tn / total]]
    (report / "confusion_normalized.csv").write_text(
        "truth,predicted_interaction,predicted_non_interaction\n"
        f"interaction,{norm[0][0]:.6f},{norm[0][1]:.6f}\n"
        f"non_interaction,{norm[1][0]:.6f},{norm[1][1]:.6f}\n"
    )
    if plots:
        _render_plots(eval_dir, report)
    return report


def _report_ablation(run: Path, report: Path):
    report.mkdir(exist_ok=True)
    grid = json.loads((run / "ablation.json").read_text())
    lines = ["Model matrix results", "=" * 20, ""]
    lines.append(f"{'model':<16} {'shape':<8} {'Accuracy':<14} {'Precision':<14} "
                 f"{'Recall':<14} {'F1':<14}")
    for parsing in ("sliding", "padding"):
        for cell in sorted(grid):
            e = grid[cell]
            if e["parsing"] != parsing:
                continue
            if e["status"] != "ok":
                lines.append(f"{e['variant']:<16} {parsing:<8} failed: {e['error']}")
                continue
            lines.append(
                f"{e['variant']:<16} {parsing:<8} "
                + " ".join(f"{_format_cell(e, n):<14}" for n in
                           ("accuracy", "precision", "recall", "f1"))
            )
        lines.append("")
    (report / "summary.txt").write_text("\n".join(lines) + "\n")


def _render_plots(eval_dir: Path, report: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    curves = sorted((eval_dir / "curves").glob("seq_*.csv"))
    for path in curves[:4]:
        data = np.genfromtxt(path, delimiter=",", names=True)
        steps = np.atleast_1d(data["step"])
        mean = np.atleast_1d(data["mean_interaction"])
        std = np.atleast_1d(data["std_interaction"])
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(steps, mean, color="tab:blue", label="interaction probability")
        ax.fill_between(steps, mean - std, mean + std, alpha=0.3, color="tab:blue")
        ax.set_xlabel("step")
        ax.set_ylabel("probability")
        ax.set_ylim(-0.05, 1.05)
        ax.axhline(0.5, color="gray", lw=0.5, ls="--")
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        fig.savefig(report / (path.stem + ".png"), metadata={"Software": "turnwatch"})
        plt.close(fig)

    gammas = []
    for row in (eval_dir / "gamma.csv").read_text().strip().splitlines()[1:]:
        gammas.append(float(row.split(",")[3]))
    if gammas:
        fig, ax = plt.subplots(figsize=(3, 3))
        ax.boxplot([gammas], tick_labels=["model"], showmeans=True)
        ax.set_ylabel("uncertainty")
        fig.tight_layout()
        fig.savefig(report / "gamma_boxplot.png", metadata={"Software": "turnwatch"})
        plt.close(fig)


def timestamped_run_dir(root: str | Path, command: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    out = Path(root) / f"{stamp}-{command}"
    suffix = 0
    while out.exists():
        suffix += 1
        out = Path(root) / f"{stamp}-{command}-{suffix}"
    return out
