"""Command-line pipeline: simulate, build, train, eval, detect.

One key-value config file drives five sequential stages.  `simulate`
writes event trial files for the selected scenario grids, `build`
turns them into a dataset manifest (optionally dumping every sample
volume), `train` fits the spiking classifier and stores its weights,
`eval` reports test metrics, and `detect` runs the slip detector over
the trials and summarizes latency per condition.

Every stage derives its randomness from the single global seed by
hashing "seed:stage:label", so any stage can be rerun on its own and
a full rerun with the same config is byte-identical, file for file.
A JSON run manifest in the report directory records the tool version,
the config digest, and the SHA-256 of every file each stage wrote.

Exit codes: 0 success, 1 invariant or validation failure, 2 usage or
path error.  The SLIPNET_THREADS environment variable caps numeric
parallelism (best effort: BLAS pools honor it via threadpoolctl when
installed, spawned tools via the usual *_NUM_THREADS variables).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

from . import __version__
from .detect import SmootherConfig, detect_trial, write_summary, write_trial_report
from .events import IoFailure, SlipnetError, load_events, save_events
from .preprocess import (
    DatasetManifest,
    SlipState,
    dataset_arrays,
    read_dataset_manifest,
    save_volume,
    split_assignments,
    split_trials,
    write_dataset_manifest,
)
from .simulate import (
    DISTURBANCE_FRACTIONS,
    GRAVITY_MASSES_KG,
    KINEMATIC_DEPTHS_MM,
    KINEMATIC_DIRECTIONS_DEG,
    KINEMATIC_SPEEDS_MM_S,
    RETRACTION_SPEEDS_MM_S,
    GravityScenario,
    KinematicScenario,
    run_scenario,
)
from .snn import (
    Hyperparams,
    evaluate,
    init_weights,
    load_weights,
    save_weights,
    slip_network_spec,
    train,
)

GRID_NAMES = ("kinematic", "gravity", "disturbance")

# disturbance trials retract the middle gravity condition while pushing
# sideways at the configured fraction of the retraction speed
DISTURBANCE_MASS_KG = 0.205
DISTURBANCE_RETRACTION_MM_S = 0.5

PAPER_SCALE = {"kinematic_repeats": 3, "gravity_trials": 20, "disturbance_trials": 20}

RUN_MANIFEST_NAME = "run_manifest.json"


class UsageError(SlipnetError):
    """Bad invocation: unknown keys, missing inputs, malformed config."""


class MissingTrials(SlipnetError):
    """The trial directory holds no usable trial files."""


@dataclass(frozen=True)
class SuiteConfig:
    """Everything one experiment run needs, as plain key-value fields."""

    trial_dir: str = "trials"
    dataset_manifest: str = "dataset.manifest"
    weights_path: str = "network.snnw"
    report_dir: str = "reports"
    grids: tuple = ("kinematic",)
    kinematic_repeats: int = 1
    gravity_trials: int = 5
    disturbance_trials: int = 5
    seed: int = 0
    learning_rate: float = 5e-3
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 5
    smoothing_window: int = 4
    decision_margin: float = 2.0
    write_samples: bool = False

    def validate(self) -> None:
        unknown = set(self.grids) - set(GRID_NAMES)
        if unknown:
            raise UsageError(f"unknown grids {sorted(unknown)}; pick from {GRID_NAMES}")
        if not self.grids:
            raise UsageError("at least one grid must be selected")
        for name in ("kinematic_repeats", "gravity_trials", "disturbance_trials"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise UsageError("epochs must be >= 0 and batch_size >= 1")
        if self.smoothing_window < 1 or self.decision_margin < 0:
            raise UsageError("smoothing_window must be >= 1 and margin >= 0")


def _coerce(name: str, kind: type, value: str):
    try:
        if kind is bool:
            low = value.strip().lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if kind is tuple:
            return tuple(part.strip() for part in value.split(",") if part.strip())
        return kind(value.strip())
    except ValueError as e:
        raise UsageError(f"config key {name!r}: cannot parse {value!r}") from e


def parse_config(text: str) -> dict:
    """Key-value lines into typed SuiteConfig fields; '#' starts a comment."""
    types = {f.name: (tuple if f.name == "grids" else type(getattr(SuiteConfig(), f.name)))
             for f in fields(SuiteConfig)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        key = key.strip()
        if not sep or not key:
            raise UsageError(f"config line {lineno}: expected key = value, got {line!r}")
        if key not in types:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, types[key], value)
    return out


def load_config(path, seed=None, paper_scale=False, **overrides) -> SuiteConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from e
    values = parse_config(text)
    suite = SuiteConfig(**values)
    if paper_scale:
        suite = replace(suite, **PAPER_SCALE)
    if seed is not None:
        suite = replace(suite, seed=seed)
    cleaned = {k: v for k, v in overrides.items() if v is not None}
    if cleaned:
        suite = replace(suite, **cleaned)
    suite.validate()
    return suite


def derive_seed(global_seed: int, stage: str, label: str) -> int:
    """Stable per-stage, per-condition seed from the one global seed."""
    text = f"{global_seed}:{stage}:{label}"
    digest = hashlib.blake2b(text.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") & (2**63 - 1)


@dataclass(frozen=True)
class PlannedTrial:
    filename: str
    label: str
    condition: str
    scenario: object


def enumerate_scenarios(suite: SuiteConfig) -> list:
    """The full trial plan, in canonical grid order with derived seeds.

    Filenames carry a zero-padded position so a sorted directory
    listing reproduces the enumeration order exactly.
    """
    planned = []

    def add(label, condition, scenario):
        planned.append((label, condition, scenario))

    if "kinematic" in suite.grids:
        for depth in KINEMATIC_DEPTHS_MM:
            for speed in KINEMATIC_SPEEDS_MM_S:
                for direction in KINEMATIC_DIRECTIONS_DEG:
                    for rep in range(suite.kinematic_repeats):
                        label = f"kin_d{depth:g}_v{speed:g}_a{int(direction):03d}_r{rep}"
                        add(
                            label,
                            f"depth {depth:g} speed {speed:g}",
                            KinematicScenario(
                                depth_mm=depth,
                                speed_mm_s=speed,
                                direction_deg=direction,
                                seed=derive_seed(suite.seed, "simulate", label),
                            ),
                        )
    if "gravity" in suite.grids:
        for mass in GRAVITY_MASSES_KG:
            for retraction in RETRACTION_SPEEDS_MM_S:
                for k in range(suite.gravity_trials):
                    label = f"grav_m{mass:g}_r{retraction:g}_t{k}"
                    add(
                        label,
                        f"mass {mass:g} retraction {retraction:g}",
                        GravityScenario(
                            mass_kg=mass,
                            retraction_mm_s=retraction,
                            seed=derive_seed(suite.seed, "simulate", label),
                        ),
                    )
    if "disturbance" in suite.grids:
        for fraction in DISTURBANCE_FRACTIONS:
            for k in range(suite.disturbance_trials):
                side = "left" if k % 2 == 0 else "right"
                label = f"dist_f{fraction:g}_{side}_t{k}"
                add(
                    label,
                    f"disturbance {fraction:g}",
                    GravityScenario(
                        mass_kg=DISTURBANCE_MASS_KG,
                        retraction_mm_s=DISTURBANCE_RETRACTION_MM_S,
                        seed=derive_seed(suite.seed, "simulate", label),
                        disturbance_fraction=fraction,
                        side=side,
                    ),
                )
    return [
        PlannedTrial(f"{i:04d}_{label}.ntev", label, condition, scenario)
        for i, (label, condition, scenario) in enumerate(planned)
    ]


def config_digest(suite: SuiteConfig) -> str:
    parts = []
    for f in sorted(fields(SuiteConfig), key=lambda f: f.name):
        value = getattr(suite, f.name)
        if f.name == "grids":
            value = ",".join(value)
        parts.append(f"{f.name}={value}")
    return hashlib.sha256("\n".join(parts).encode()).hexdigest()


def file_digest(path) -> str:
    try:
        with open(path, "rb") as f:
            return hashlib.sha256(f.read()).hexdigest()
    except OSError as e:
        raise IoFailure(f"cannot digest {path}: {e}") from e


def _manifest_path(suite: SuiteConfig) -> str:
    return os.path.join(suite.report_dir, RUN_MANIFEST_NAME)


def update_run_manifest(suite: SuiteConfig, stage: str, outputs: dict, info: dict) -> str:
    """Record a stage's outputs (path -> sha256) in the run manifest.

    The manifest carries no timestamps, so reruns with identical inputs
    write identical bytes.
    """
    path = _manifest_path(suite)
    manifest = {
        "tool_version": __version__,
        "config_digest": config_digest(suite),
        "seed": suite.seed,
        "stages": {},
    }
    if os.path.exists(path):
        try:
            with open(path) as f:
                previous = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise IoFailure(f"cannot reread run manifest {path}: {e}") from e
        if isinstance(previous.get("stages"), dict):
            manifest["stages"] = previous["stages"]
    manifest["stages"][stage] = {"outputs": outputs, "info": info}
    os.makedirs(suite.report_dir, exist_ok=True)
    try:
        with open(path, "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise IoFailure(f"cannot write run manifest {path}: {e}") from e
    return path


def cmd_simulate(suite: SuiteConfig) -> int:
    """Write every planned trial as an event file; returns the count."""
    plan = enumerate_scenarios(suite)
    os.makedirs(suite.trial_dir, exist_ok=True)
    outputs = {}
    for item in plan:
        trial = run_scenario(item.scenario)
        path = os.path.join(suite.trial_dir, item.filename)
        save_events(trial, path)
        outputs[path] = file_digest(path)
    update_run_manifest(
        suite, "simulate", outputs, {"trials": len(plan), "grids": list(suite.grids)}
    )
    print(f"wrote {len(plan)} trial files to {suite.trial_dir}")
    return len(plan)


def _list_trial_files(suite: SuiteConfig) -> list:
    if not os.path.isdir(suite.trial_dir):
        raise MissingTrials(f"trial directory {suite.trial_dir} does not exist")
    names = sorted(n for n in os.listdir(suite.trial_dir) if n.endswith(".ntev"))
    if not names:
        raise MissingTrials(f"no trial files in {suite.trial_dir}")
    return [os.path.join(suite.trial_dir, n) for n in names]


def _class_counts(samples) -> dict:
    counts = {state.name.lower(): 0 for state in SlipState}
    for sample in samples:
        counts[SlipState(sample.label).name.lower()] += 1
    return counts


def cmd_build_dataset(suite: SuiteConfig) -> DatasetManifest:
    """Split trials, write the dataset manifest, report class balance.

    Trials missing either onset label (for example partial-disturbance
    trials that never reach gross slip) are skipped with a notice; the
    manifest rows list only the trials the dataset actually uses.
    """
    paths = _list_trial_files(suite)
    trials, used = [], []
    skipped = 0
    for path in paths:
        trial = load_events(path)
        if trial.incipient_onset_us is None or trial.gross_onset_us is None:
            skipped += 1
            continue
        trials.append(trial)
        used.append(path)
    if not trials:
        raise MissingTrials(f"no trials in {suite.trial_dir} carry both onset labels")
    seed = derive_seed(suite.seed, "build", "split")
    split = split_trials(trials, seed)
    names = split_assignments(len(trials), seed)
    manifest = DatasetManifest(
        seed=seed, rows=[(i, names[i], used[i]) for i in range(len(trials))]
    )
    parent = os.path.dirname(suite.dataset_manifest)
    if parent:
        os.makedirs(parent, exist_ok=True)
    write_dataset_manifest(manifest, suite.dataset_manifest)
    outputs = {suite.dataset_manifest: file_digest(suite.dataset_manifest)}
    balance = {
        "train": _class_counts(split.train),
        "val": _class_counts(split.val),
        "test": _class_counts(split.test),
    }
    if suite.write_samples:
        sample_dir = os.path.join(suite.report_dir, "samples")
        index_rows = []
        for split_name in ("train", "val", "test"):
            os.makedirs(os.path.join(sample_dir, split_name), exist_ok=True)
            for i, sample in enumerate(getattr(split, split_name)):
                rel = os.path.join(split_name, f"{i:05d}.spkv")
                sample_path = os.path.join(sample_dir, rel)
                save_volume(sample.volume, sample_path)
                outputs[sample_path] = file_digest(sample_path)
                index_rows.append(
                    f"{split_name},{rel},{SlipState(sample.label).name.lower()},"
                    f"{sample.t_start_us}"
                )
        index_path = os.path.join(sample_dir, "samples.csv")
        with open(index_path, "w") as f:
            f.write("split,path,label,t_start_us\n")
            f.write("\n".join(index_rows) + "\n")
        outputs[index_path] = file_digest(index_path)
    update_run_manifest(
        suite,
        "build",
        outputs,
        {"trials_used": len(trials), "trials_skipped": skipped, "classes": balance},
    )
    print(f"dataset manifest {suite.dataset_manifest}: {len(trials)} trials"
          + (f" ({skipped} skipped without onsets)" if skipped else ""))
    for split_name in ("train", "val", "test"):
        counts = balance[split_name]
        total = sum(counts.values())
        print(f"  {split_name}: {total} samples " + " ".join(
            f"{k}={v}" for k, v in counts.items()))
    return manifest


def _rebuild_split(suite: SuiteConfig):
    if not os.path.exists(suite.dataset_manifest):
        raise UsageError(f"dataset manifest not found: {suite.dataset_manifest}")
    manifest = read_dataset_manifest(suite.dataset_manifest)
    if not manifest.rows:
        raise MissingTrials(f"{suite.dataset_manifest} lists no trials")
    rows = sorted(manifest.rows)
    trials = []
    for _, _, path in rows:
        if not os.path.exists(path):
            raise UsageError(f"trial file from manifest not found: {path}")
        trials.append(load_events(path))
    split = split_trials(
        trials, manifest.seed, manifest.ratios, manifest.samples_per_phase
    )
    recomputed = split_assignments(len(trials), manifest.seed, manifest.ratios)
    for (index, split_name, path), name in zip(rows, recomputed):
        if split_name != name:
            raise SlipnetError(
                f"manifest row {index} ({path}) says {split_name}, "
                f"seed {manifest.seed} assigns {name}; manifest is stale"
            )
    return split


def _train_hyperparams(suite: SuiteConfig) -> Hyperparams:
    return Hyperparams(
        learning_rate=suite.learning_rate,
        momentum=suite.momentum,
        batch_size=suite.batch_size,
        epochs=suite.epochs,
        seed=derive_seed(suite.seed, "train", "network"),
    )


def cmd_train(suite: SuiteConfig) -> None:
    """Fit the classifier on the manifest's dataset; store weights + log."""
    split = _rebuild_split(suite)
    train_x, train_y = dataset_arrays(split.train)
    val_x, val_y = dataset_arrays(split.val)
    spec = slip_network_spec()
    hyper = _train_hyperparams(suite)
    initial = None
    if hyper.epochs == 0:
        # zero-epoch runs must return the raw initialization untouched
        initial = [w.astype(np.float32) for w in init_weights(spec, hyper.seed)]
    result = train(
        spec, train_x, train_y, val_x, val_y, hyper,
        initial_weights=initial,
        log=lambda entry: print(
            f"  epoch {entry['epoch']}: loss {entry['train_loss']:.4f} "
            f"val accuracy {entry['val_accuracy']:.4f}"
        ),
    )
    parent = os.path.dirname(suite.weights_path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_weights(spec, result.weights, suite.weights_path)
    os.makedirs(suite.report_dir, exist_ok=True)
    log_path = os.path.join(suite.report_dir, "train_log.csv")
    with open(log_path, "w") as f:
        f.write("epoch,train_loss,val_accuracy\n")
        for entry in result.history:
            f.write(
                f"{entry['epoch']},{entry['train_loss']:.10g},"
                f"{entry['val_accuracy']:.10g}\n"
            )
    outputs = {
        suite.weights_path: file_digest(suite.weights_path),
        log_path: file_digest(log_path),
    }
    update_run_manifest(
        suite, "train", outputs,
        {
            "epochs": hyper.epochs,
            "best_epoch": result.best_epoch,
            "best_val_accuracy": result.best_val_accuracy,
        },
    )
    print(
        f"saved weights to {suite.weights_path} "
        f"(best val accuracy {result.best_val_accuracy:.4f} "
        f"at epoch {result.best_epoch})"
    )


def _require_weights(suite: SuiteConfig):
    if not os.path.exists(suite.weights_path):
        raise UsageError(f"weights file not found: {suite.weights_path}")
    return load_weights(suite.weights_path)


def cmd_eval(suite: SuiteConfig) -> dict:
    """Test-split metrics: confusion matrix CSV plus per-class scores."""
    spec, weights = _require_weights(suite)
    split = _rebuild_split(suite)
    test_x, test_y = dataset_arrays(split.test)
    out = evaluate(spec, weights, test_x, test_y)
    os.makedirs(suite.report_dir, exist_ok=True)
    class_names = [state.name.lower() for state in SlipState]
    confusion_path = os.path.join(suite.report_dir, "confusion.csv")
    with open(confusion_path, "w") as f:
        f.write("truth," + ",".join(f"pred_{n}" for n in class_names) + "\n")
        for i, name in enumerate(class_names):
            f.write(name + "," + ",".join(str(int(v)) for v in out["confusion"][i]) + "\n")
    metrics_path = os.path.join(suite.report_dir, "metrics.csv")
    with open(metrics_path, "w") as f:
        f.write("class,precision,recall\n")
        for i, name in enumerate(class_names):
            f.write(f"{name},{out['precision'][i]:.10g},{out['recall'][i]:.10g}\n")
        f.write(f"accuracy,{out['accuracy']:.10g},\n")
    outputs = {
        confusion_path: file_digest(confusion_path),
        metrics_path: file_digest(metrics_path),
    }
    update_run_manifest(
        suite, "eval", outputs,
        {"accuracy": out["accuracy"], "test_samples": int(len(test_y))},
    )
    print(f"accuracy {out['accuracy']:.2f}")
    return out


def cmd_detect(suite: SuiteConfig) -> dict:
    """Run the detector over every planned trial; summarize per condition."""
    spec, weights = _require_weights(suite)
    smoother = SmootherConfig(
        window_len=suite.smoothing_window, margin=suite.decision_margin
    )
    plan = enumerate_scenarios(suite)
    detect_dir = os.path.join(suite.report_dir, "detect")
    os.makedirs(detect_dir, exist_ok=True)
    groups: dict = {}
    outputs = {}
    for item in plan:
        path = os.path.join(suite.trial_dir, item.filename)
        if not os.path.exists(path):
            raise UsageError(f"trial file not found: {path} (run simulate first)")
        trial = load_events(path)
        report = detect_trial(trial, spec, weights, smoother)
        report_path = os.path.join(detect_dir, f"{item.label}.csv")
        write_trial_report(report, report_path)
        outputs[report_path] = file_digest(report_path)
        groups.setdefault(item.condition, []).append(report)
    summary_path = os.path.join(suite.report_dir, "latency_summary.csv")
    write_summary(list(groups.items()), summary_path)
    outputs[summary_path] = file_digest(summary_path)
    update_run_manifest(
        suite, "detect", outputs,
        {"trials": len(plan), "conditions": len(groups)},
    )
    print(
        f"detected over {len(plan)} trials across {len(groups)} conditions; "
        f"summary in {summary_path}"
    )
    return groups


def _limit_threads() -> None:
    value = os.environ.get("SLIPNET_THREADS")
    if not value:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, value)
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(int(value))
    except (ImportError, ValueError):
        pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slipnet",
        description="Slip-detection experiment pipeline over simulated tactile events.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "write event trial files for the configured scenario grids"),
        ("build", "turn trial files into a dataset manifest"),
        ("train", "fit the spiking classifier and store its weights"),
        ("eval", "report test metrics for the stored weights"),
        ("detect", "run slip detection over the trials and summarize latency"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="key-value config file")
        cmd.add_argument("--seed", type=int, default=None, help="override the global seed")
        cmd.add_argument(
            "--paper-scale",
            action="store_true",
            help="full-size grids: 3 kinematic repeats, 20 trials per condition",
        )
        if name == "train":
            cmd.add_argument("--epochs", type=int, default=None, help="override epoch count")
        if name == "build":
            cmd.add_argument(
                "--write-samples",
                action="store_true",
                help="also dump every sample volume under the report directory",
            )
    return parser


def main(argv=None) -> int:
    _limit_threads()
    args = build_parser().parse_args(argv)
    overrides = {}
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    if getattr(args, "write_samples", False):
        overrides["write_samples"] = True
    try:
        suite = load_config(
            args.config, seed=args.seed, paper_scale=args.paper_scale, **overrides
        )
        dispatch = {
            "simulate": cmd_simulate,
            "build": cmd_build_dataset,
            "train": cmd_train,
            "eval": cmd_eval,
            "detect": cmd_detect,
        }
        dispatch[args.command](suite)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except SlipnetError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
