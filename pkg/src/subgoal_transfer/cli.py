"""Command-line front end: dataset generation, mapper training/eval, transfer.

Every artifact embeds its format version and the fully resolved config
(flags win over `--config key=value` file entries, which win over defaults),
so any artifact can be regenerated exactly from its own header. Reruns with
identical config and seed produce byte-identical files.
"""

from __future__ import annotations

import argparse
import os
import statistics
import sys
import numpy as np

from . import __version__, mapper as mapper_mod
from .dataset import (
    Dataset,
    DatasetParseError,
    build_dataset,
    load_dataset,
    save_dataset,
    trajectory_from_entry,
)
from .env import Square
from .hrl import (
    LowPolicy,
    MODES,
    TrainConfig,
    load_curve_bins,
    pretrain_low,
    run_baseline,
    save_curve,
)
from .mapper import MapperHyperparams, MappingModel, load_mapper, save_mapper, train_mapper
from .meteor import align, corpus_meteor, meteor
from .seeding import derive_seed

SMOKE_EPISODE_CAP = 2000
SMOKE_EPOCH_CAP = 50


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def read_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise CliError("parse", f"{path}:{line_no}: expected key=value")
                key, value = line.split("=", 1)
                out[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise CliError("io", f"cannot read config {path}: {exc}") from exc
    return out


def resolve_options(args: argparse.Namespace, defaults: dict[str, object]) -> dict[str, object]:
    """Merge flag > config file > default for every declared option."""
    file_cfg = read_config_file(args.config) if getattr(args, "config", None) else {}
    resolved: dict[str, object] = {}
    for key, default in defaults.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in file_cfg:
            raw = file_cfg[key]
            if isinstance(default, bool):
                resolved[key] = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                resolved[key] = int(raw)
            elif isinstance(default, float):
                resolved[key] = float(raw)
            else:
                resolved[key] = raw
        else:
            resolved[key] = default
    if getattr(args, "smoke", False):
        resolved["smoke"] = True
        if "episodes" in resolved:
            resolved["episodes"] = min(int(resolved["episodes"]), SMOKE_EPISODE_CAP)
        if "epochs" in resolved:
            resolved["epochs"] = min(int(resolved["epochs"]), SMOKE_EPOCH_CAP)
    return resolved


def artifact_header(kind: str, resolved: dict[str, object],
                    inputs: dict[str, str] | None = None) -> list[str]:
    body = " ".join(f"{k}={resolved[k]}" for k in sorted(resolved))
    lines = [f"# artifact={kind}.v1 tool=subgoal-transfer/{__version__}",
             f"# config: {body}"]
    if inputs:
        lines.append("# inputs: " + " ".join(
            f"{k}={v}" for k, v in sorted(inputs.items())))
    return lines


def _write_lines(path: str, lines: list[str]) -> None:
    try:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise CliError("io", f"cannot write {path}: {exc}") from exc


def _load_dataset(path: str) -> Dataset:
    if not os.path.exists(path):
        raise CliError("io", f"dataset not found: {path}")
    return load_dataset(path)


# ---------------------------------------------------------------------------
# gen-dataset
# ---------------------------------------------------------------------------

GEN_DEFAULTS = {"start": "d4", "seed": 7, "smoke": False}


def cmd_gen_dataset(args: argparse.Namespace) -> int:
    opts = resolve_options(args, GEN_DEFAULTS)
    start = Square.from_name(str(opts["start"]))
    dataset = build_dataset(start, int(opts["seed"]))
    save_dataset(dataset, args.out, extra_header=artifact_header("dataset", opts))
    learner_mean = statistics.mean(len(e.learner) for e in dataset.entries)
    expert_mean = statistics.mean(len(e.expert) for e in dataset.entries)
    print(f"tasks={len(dataset.entries)} train={len(dataset.train_ids)} "
          f"test={len(dataset.test_ids)}")
    print(f"learner_mean_len={learner_mean:.3f} expert_mean_len={expert_mean:.3f}")
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train-mapper
# ---------------------------------------------------------------------------

TRAIN_DEFAULTS = {"epochs": 300, "lr": 1e-3, "minibatch": 16, "max_len": 12,
                  "seed": 7, "smoke": False}


def cmd_train_mapper(args: argparse.Namespace) -> int:
    opts = resolve_options(args, TRAIN_DEFAULTS)
    dataset = _load_dataset(args.dataset)
    hp = MapperHyperparams(
        learning_rate=float(opts["lr"]),
        epochs=int(opts["epochs"]),
        max_len=int(opts["max_len"]),
        seed=int(opts["seed"]),
        minibatch=int(opts["minibatch"]),
    )
    model, losses = train_mapper(dataset.train_entries(), hp)
    meta = {f"config.{k}": str(v) for k, v in sorted(opts.items())}
    meta["dataset"] = os.path.basename(args.dataset)
    save_mapper(model, args.out, extra_meta=meta)

    loss_log = args.loss_log or (args.out + ".loss.csv")
    lines = artifact_header("mapper-loss", opts,
                            inputs={"dataset": os.path.basename(args.dataset)})
    lines.append("epoch,mean_loss_per_token")
    lines.extend(f"{i},{loss:.6f}" for i, loss in enumerate(losses))
    _write_lines(loss_log, lines)

    pairs = [(e.learner.tokens, model.predict(e.expert, e.task).tokens)
             for e in dataset.test_entries()]
    print(f"epochs={hp.epochs} final_loss={losses[-1]:.6f}")
    print(f"test_meteor={corpus_meteor(pairs):.4f}")
    print(f"wrote {args.out} and {loss_log}")
    return 0


# ---------------------------------------------------------------------------
# eval-mapper
# ---------------------------------------------------------------------------

EVAL_DEFAULTS = {"k": 10, "epochs": 300, "lr": 1e-3, "minibatch": 16,
                 "max_len": 12, "seed": 7, "workers": 1, "smoke": False}


def cmd_eval_mapper(args: argparse.Namespace) -> int:
    opts = resolve_options(args, EVAL_DEFAULTS)
    dataset = _load_dataset(args.dataset)
    k = int(opts["k"])
    if k > len(dataset.entries):
        raise CliError("usage", f"k={k} exceeds task count {len(dataset.entries)}")
    hp = MapperHyperparams(
        learning_rate=float(opts["lr"]),
        epochs=int(opts["epochs"]),
        max_len=int(opts["max_len"]),
        seed=int(opts["seed"]),
        minibatch=int(opts["minibatch"]),
    )
    scores, mean = mapper_mod.evaluate_kfold(dataset, k, hp, workers=int(opts["workers"]))
    lines = artifact_header("fold-report", opts,
                            inputs={"dataset": os.path.basename(args.dataset)})
    lines.append("fold,score")
    lines.extend(f"{i},{score:.4f}" for i, score in enumerate(scores))
    lines.append(f"mean,{mean:.4f}")
    _write_lines(args.out, lines)
    for line in lines[2:]:
        print(line)
    return 0


# ---------------------------------------------------------------------------
# transfer
# ---------------------------------------------------------------------------

TRANSFER_DEFAULTS = {
    "episodes": 20000, "trials": 3, "v_noise": 0.1, "warm_epochs": 200,
    "gamma": 0.95, "lr_actor": 1e-4, "lr_critic": 5e-3, "low_budget": 4,
    "bin_size": 100, "pretrain_epochs": 40, "seed": 7, "raw": False,
    "smoke": False,
}


def _classify_errors(n_errors: int) -> str:
    if n_errors == 0:
        return "0-errors"
    if n_errors <= 2:
        return "1-2-errors"
    return "3plus-errors"


def prediction_errors(reference, candidate) -> int:
    """Unmatched-token count under the METEOR alignment."""
    a = align(reference, candidate)
    return max(a.reference_len, a.candidate_len) - a.matches


def cmd_transfer(args: argparse.Namespace) -> int:
    opts = resolve_options(args, TRANSFER_DEFAULTS)
    dataset = _load_dataset(args.dataset)
    modes = MODES if args.modes == "all" else tuple(args.modes.split(","))
    for mode in modes:
        if mode not in MODES:
            raise CliError("usage", f"unknown mode {mode!r}")

    mapping_model: MappingModel | None = None
    if "mapping-warm" in modes:
        if not args.checkpoint or not os.path.exists(args.checkpoint):
            raise CliError("io", f"mapping-warm mode needs a checkpoint "
                                 f"(missing: {args.checkpoint})")
        mapping_model, _ = load_mapper(args.checkpoint)

    if args.task == "all-test":
        task_ids = list(dataset.test_ids)
    else:
        try:
            task_ids = [int(args.task)]
        except ValueError:
            raise CliError("usage", f"--task must be an id or 'all-test', got {args.task!r}")
        for tid in task_ids:
            if not 0 <= tid < len(dataset.entries):
                raise CliError("usage", f"task id {tid} out of range")
            if tid not in dataset.test_ids:
                print(f"warning: task {tid} is in the training split", file=sys.stderr)

    cfg = TrainConfig(
        episodes=int(opts["episodes"]),
        v_noise=float(opts["v_noise"]),
        warm_epochs=int(opts["warm_epochs"]),
        low_budget=int(opts["low_budget"]),
        gamma=float(opts["gamma"]),
        lr_actor=float(opts["lr_actor"]),
        lr_critic=float(opts["lr_critic"]),
        seed=int(opts["seed"]),
        trials=int(opts["trials"]),
        bin_size=int(opts["bin_size"]),
    )
    os.makedirs(args.out, exist_ok=True)
    run_inputs = {"dataset": os.path.basename(args.dataset)}
    if args.checkpoint:
        run_inputs["checkpoint"] = os.path.basename(args.checkpoint)
    header = artifact_header("curve", opts, inputs=run_inputs)

    tasks = [e.task for e in dataset.entries]
    demos = [trajectory_from_entry(e) for e in dataset.train_entries()]
    low = LowPolicy(seed=derive_seed(cfg.seed, "low-init"))
    pretrain_low(low, demos, tasks, epochs=int(opts["pretrain_epochs"]),
                 seed=cfg.seed)

    for tid in task_ids:
        entry = dataset.entries[tid]
        summary = artifact_header("transfer-summary", opts, inputs=run_inputs)
        summary.append(f"task={tid}")
        summary.append(f"expert={entry.expert.names()}")
        summary.append(f"oracle={entry.learner.names()}")
        if mapping_model is not None:
            predicted = mapping_model.predict(entry.expert, entry.task)
            n_err = prediction_errors(entry.learner.tokens, predicted.tokens)
            summary.append(f"predicted={predicted.names()}")
            summary.append(f"meteor={meteor(entry.learner.tokens, predicted.tokens):.4f}")
            summary.append(f"errors={n_err}")
            summary.append(f"case={_classify_errors(n_err)}")
        for mode in modes:
            curves = run_baseline(mode, entry.task, mapping_model, entry.expert,
                                  low, cfg)
            final_bins = []
            for curve in curves:
                path = os.path.join(args.out, f"task{tid}_{mode}_t{curve.trial}.csv")
                save_curve(curve, entry.task, path, header_lines=header,
                           raw=bool(opts["raw"]))
                final_bins.append(curve.binned()[-1])
            summary.append(f"final_bin_mean {mode}={statistics.mean(final_bins):.4f}")
            print(f"task {tid} {mode}: final_bin_mean="
                  f"{statistics.mean(final_bins):.4f}", flush=True)
        _write_lines(os.path.join(args.out, f"task{tid}_summary.txt"), summary)
    return 0


# ---------------------------------------------------------------------------
# export-plots
# ---------------------------------------------------------------------------

def cmd_export_plots(args: argparse.Namespace) -> int:
    opts = resolve_options(args, {"smoke": False})
    if not os.path.isdir(args.curves):
        raise CliError("io", f"curve directory not found: {args.curves}")
    by_task: dict[str, dict[str, list[list[float]]]] = {}
    for name in sorted(os.listdir(args.curves)):
        if not name.endswith(".csv") or "_summary" in name:
            continue
        meta, bins = load_curve_bins(os.path.join(args.curves, name))
        by_task.setdefault(meta["task"], {}).setdefault(meta["mode"], []).append(bins)
    if not by_task:
        raise CliError("io", f"no curve files in {args.curves}")

    os.makedirs(args.out, exist_ok=True)
    for task_id, by_mode in sorted(by_task.items(), key=lambda kv: int(kv[0])):
        n_bins = {len(b) for curves in by_mode.values() for b in curves}
        if len(n_bins) != 1:
            raise CliError("contract",
                           f"task {task_id}: mismatched bin counts {sorted(n_bins)}")
        present = [m for m in MODES if m in by_mode]
        for mode in present:
            counts = {len(c) for c in by_mode.values()}
            if len(by_mode[mode]) < max(counts):
                print(f"warning: task {task_id} mode {mode} has fewer trials",
                      file=sys.stderr)
        lines = artifact_header("plot-table", opts,
                                inputs={"curves": os.path.basename(
                                    os.path.normpath(args.curves))})
        lines.append("bin," + ",".join(present))
        means = {m: np.mean(np.array(by_mode[m]), axis=0) for m in present}
        for i in range(next(iter(n_bins))):
            row = ",".join(f"{means[m][i]:.6f}" for m in present)
            lines.append(f"{i},{row}")
        out_path = os.path.join(args.out, f"task{task_id}_curves.csv")
        _write_lines(out_path, lines)
        print(f"wrote {out_path}")
    return 0


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subgoal-transfer",
        description="Subgoal-mapping transfer RL pipeline (bishop -> knight).",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--smoke", action="store_true",
                       help="desk-scale caps: episodes<=2000, epochs<=50")

    p = sub.add_parser("gen-dataset", help="solve all tasks and write the dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--start", default=None, help="agent start square (default d4)")
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train-mapper", help="train the subgoal mapper on the train split")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-log", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--minibatch", type=int, default=None)
    p.add_argument("--max-len", type=int, default=None)
    p.set_defaults(func=cmd_train_mapper)

    p = sub.add_parser("eval-mapper", help="K-fold cross-validated METEOR")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="fold report path")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--minibatch", type=int, default=None)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_eval_mapper)

    p = sub.add_parser("transfer", help="run warm-init transfer vs baselines")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--task", required=True, help="task id or 'all-test'")
    p.add_argument("--modes", default="all",
                   help="comma list of %s or 'all'" % ",".join(MODES))
    p.add_argument("--out", required=True, help="output directory for curves")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--v-noise", type=float, default=None)
    p.add_argument("--warm-epochs", type=int, default=None)
    p.add_argument("--low-budget", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--lr-actor", type=float, default=None)
    p.add_argument("--lr-critic", type=float, default=None)
    p.add_argument("--bin-size", type=int, default=None)
    p.add_argument("--pretrain-epochs", type=int, default=None)
    p.add_argument("--raw", action="store_true", default=None,
                   help="append per-episode returns to curve files")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("export-plots", help="merge curves into plot-ready tables")
    common(p)
    p.add_argument("--curves", required=True, help="directory of curve files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_plots)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error category={exc.category}: {exc}", file=sys.stderr)
        return 1
    except DatasetParseError as exc:
        print(f"error category=parse: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error category=io: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error category=contract: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
