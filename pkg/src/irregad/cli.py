"""Command-line entry point: ``irregad {preprocess,synth,train,eval,online}``.

Every command reads a configuration file (see :mod:`irregad.config`),
applies command-line overrides, writes its outputs plus a
``provenance.json`` record into the output directory, and exits with

* 0 on success,
* 2 on configuration errors,
* 3 on data errors (unreadable or malformed inputs),
* 4 when training diverges.

``IRREGAD_NUM_THREADS`` caps the BLAS thread pool; nothing else is read
from the environment.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import shutil
import sys
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterator, Sequence

import numpy as np

from . import __version__, kernels
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import PRESETS, ConfigError, RunConfig, config_hash, load_config
from .data import (
    DataError,
    Dataset,
    first_difference,
    load_activity,
    load_pendigits,
    random_drop,
    read_jsonl,
    read_records,
    relabel_binary,
    split,
    subsample_windows,
    synth_generate,
    write_jsonl,
)
from .eval import EvalError, emit_report, roc_curve
from .online import OnlineError, check_sequence, run_stream
from .sequences import IrregularSequence, SequenceError
from .trainer import HyperparameterError, TrainingDiverged, train_offline

__all__ = ["EXIT_CONFIG", "EXIT_DATA", "EXIT_DIVERGED", "EXIT_OK", "THREADS_ENV", "cmd_eval", "cmd_online",
           "cmd_preprocess", "cmd_synth", "cmd_train", "main"]

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
THREADS_ENV = "IRREGAD_NUM_THREADS"

logger = logging.getLogger("irregad")


# ------------------------------------------------------------------ helpers
def _out_dir(cfg: RunConfig) -> Path:
    if cfg.out is None:
        raise ConfigError("no output directory; set `out` in the config or pass --out")
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc.strerror}") from None
    return out


def write_provenance(out: Path, command: str, cfg: RunConfig, **extra) -> Path:
    """Record what is needed to rerun ``command`` bit-exactly."""
    record = {
        "command": command,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "versions": {"irregad": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "kernel_backend": kernels.backend(),
        **extra,
    }
    path = out / "provenance.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _rate_tag(rate: float) -> str:
    return f"drop{rate:g}"


def _require(path: str | None, what: str) -> str:
    if path is None:
        raise ConfigError(f"data.{what} is not set")
    if path != "-" and not Path(path).exists():
        raise DataError(f"{what} file {path} does not exist")
    return path


def _load_input(cfg: RunConfig) -> Dataset:
    path = _require(cfg.data.input, "input")
    if cfg.data.format == "jsonl":
        return read_jsonl(path)
    if cfg.data.format == "pendigits":
        files = sorted(Path(path).rglob("*")) if Path(path).is_dir() else [Path(path)]
        seqs, meta = [], {}
        for f in (f for f in files if f.is_file()):
            d = load_pendigits(f)
            meta = d.meta
            seqs.extend(s.replace(id=f"{f.stem}-{s.id}") for s in d)
        return Dataset(tuple(seqs), meta)
    return load_activity(path, cfg.data.channels)


def _standardize(ds: Dataset) -> Dataset:
    stacked = np.vstack([s.values for s in ds])
    mu, sd = stacked.mean(axis=0), stacked.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return ds.map(lambda s: s.replace(values=(s.values - mu) / sd)).with_meta(
        standardize={"mean": mu.tolist(), "std": sd.tolist()})


# --------------------------------------------------------------- commands
@dataclass
class CommandResult:
    """Files written by a command plus a short machine-readable summary."""

    files: dict[str, Path] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def cmd_preprocess(cfg: RunConfig) -> CommandResult:
    """Apply the preprocessing recipe and write one dataset per drop rate.

    Steps run as relabel, window subsampling, first difference,
    standardization, split, random drop. With an empty recipe a JSONL input
    is copied byte for byte.
    """
    out = _out_dir(cfg)
    recipe = cfg.preprocess
    result = CommandResult()
    if recipe.is_empty and cfg.data.format == "jsonl":
        src = _require(cfg.data.input, "input")
        read_jsonl(src)  # validate before copying
        result.files["data"] = Path(shutil.copyfile(src, out / "data.jsonl"))
        result.files["provenance"] = write_provenance(out, "preprocess", cfg, outputs=["data.jsonl"])
        return result
    ds = _load_input(cfg)
    rng = np.random.default_rng(cfg.seed)
    if recipe.relabel is not None:
        ds = relabel_binary(ds, recipe.relabel.get("nominal", []), recipe.relabel.get("anomaly", []))
    if recipe.subsample is not None:
        lo, hi = recipe.subsample["len_min"], recipe.subsample["len_max"]
        windows = []
        for s in ds:
            for j, w in enumerate(subsample_windows(s, lo, hi, rng)):
                windows.append(w.replace(id=f"{s.id}-w{j}"))
        ds = Dataset(tuple(windows), ds.meta)
    if recipe.first_difference:
        ds = ds.map(first_difference)
    if recipe.normalize:
        ds = _standardize(ds)
    parts = dict(zip(("train", "validation", "test"), split(ds, recipe.split, cfg.seed))) \
        if recipe.split is not None else {"data": ds}
    rates = recipe.drop_rates or [None]
    for i, rate in enumerate(rates):
        drop_rng = np.random.default_rng([cfg.seed, i])
        for name, part in parts.items():
            d = part if rate is None else part.map(lambda s: random_drop(s, rate, drop_rng)).with_meta(drop_rate=rate)
            stem = name if rate is None else f"{name}_{_rate_tag(rate)}"
            path = out / f"{stem}.jsonl"
            write_jsonl(d, path)
            result.files[stem] = path
    result.summary = {"sequences": {k: len(v) for k, v in parts.items()},
                      "negative_ratio": {k: v.negative_ratio for k, v in parts.items()}}
    result.files["provenance"] = write_provenance(
        out, "preprocess", cfg, outputs=sorted(p.name for p in result.files.values()), summary=result.summary)
    return result


def cmd_synth(cfg: RunConfig) -> CommandResult:
    """Generate the synthetic dataset; split it when ``preprocess.split`` is set."""
    out = _out_dir(cfg)
    ds = synth_generate(cfg.synth, np.random.default_rng(cfg.seed))
    result = CommandResult()
    if cfg.preprocess.split is not None:
        for name, part in zip(("train", "validation", "test"), split(ds, cfg.preprocess.split, cfg.seed)):
            result.files[name] = out / f"{name}.jsonl"
            write_jsonl(part, result.files[name])
    else:
        result.files["data"] = out / "synth.jsonl"
        write_jsonl(ds, result.files["data"])
    result.summary = {"sequences": len(ds), "anomalies": sum(1 for s in ds if s.label == 1)}
    result.files["provenance"] = write_provenance(out, "synth", cfg, summary=result.summary)
    return result


def _unlabeled(ds: Dataset) -> Dataset:
    return ds.map(lambda s: s.replace(label=None))


def cmd_train(cfg: RunConfig, overrides: dict | None = None) -> CommandResult:
    """Train offline; write ``checkpoint.json``, ``losses.csv`` and ``report.json``.

    Labels are stripped before training unless the mode is ``semi`` or
    ``supervised``.
    """
    hp = cfg.resolve(overrides)
    out = _out_dir(cfg)
    train = read_jsonl(_require(cfg.data.train, "train"))
    val = read_jsonl(_require(cfg.data.validation, "validation"))
    if hp.mode == "unsupervised":
        train, val = _unlabeled(train), _unlabeled(val)
    report = train_offline(train, val, hp)
    ckpt = Checkpoint(report.model, hp, report.best_epoch, report.rng_state,
                      {"train_file": os.path.abspath(cfg.data.train)})
    result = CommandResult()
    result.files["checkpoint"] = save_checkpoint(out / "checkpoint.json", ckpt)
    with (out / "losses.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "val_recon"])
        for e, row in enumerate(zip(report.train_loss, report.val_loss, report.val_recon)):
            w.writerow([e, *(repr(float(v)) for v in row)])
    result.files["losses"] = out / "losses.csv"
    result.summary = {"best_epoch": report.best_epoch, "stop_epoch": report.stop_epoch,
                      "stopped_early": report.stopped_early, "best_val_loss": report.best_val_loss}
    (out / "report.json").write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n")
    result.files["report"] = out / "report.json"
    result.files["provenance"] = write_provenance(out, "train", cfg, hyperparameters=hp.to_dict(),
                                                  summary=result.summary)
    return result


def cmd_eval(cfg: RunConfig, drop_rates: Sequence[float] = ()) -> CommandResult:
    """Score the test set with each checkpoint and write a ROC report.

    Labels are removed before scoring and used only for the metrics. With
    ``drop_rates``, the test path and every checkpoint path are formatted
    with ``rate=<value>`` and one report per rate is written.
    """
    out = _out_dir(cfg)
    checkpoints = dict(cfg.eval.checkpoints) or {"model": str(out / "checkpoint.json")}
    if cfg.data.test is None:
        raise ConfigError("data.test is not set")
    result = CommandResult()
    for rate in (list(drop_rates) or [None]):
        fmt = (lambda p: p) if rate is None else (lambda p: p.format(rate=rate))
        test_path = _require(fmt(cfg.data.test), "test")
        test = read_jsonl(test_path)
        labels = test.labels
        if any(y is None for y in labels):
            raise DataError(f"{test_path}: every test sequence needs a label to compute AUC")
        blind = _unlabeled(test)
        curves, on_train = {}, []
        for name, path in checkpoints.items():
            ckpt = load_checkpoint(fmt(path))
            scores = ckpt.model.scores(list(blind))
            curves[name] = roc_curve(scores, labels)
            if ckpt.extra.get("train_file") == os.path.abspath(test_path):
                on_train.append(name)
        stem = "roc" if rate is None else f"roc_{_rate_tag(rate)}"
        title = cfg.eval.title if rate is None else f"{cfg.eval.title} (drop rate {rate:g})"
        header = {"test_file": test_path, "drop_rate": rate, "evaluated_on_training_data": bool(on_train),
                  "models_scored_on_their_training_data": on_train}
        files = emit_report(curves, out, title=title, stem=stem, header=header)
        result.files.update({f"{stem}:{k}": v for k, v in files.items()})
        result.summary[stem] = {name: c.auc for name, c in curves.items()}
    result.files["provenance"] = write_provenance(out, "eval", cfg, summary=result.summary)
    return result


def _valid_stream(lines, skipped: list[str]) -> Iterator[IrregularSequence]:
    dim = None
    for _, seq, err in read_records(lines):
        if err is None:
            try:
                check_sequence(seq, dim)
            except OnlineError as exc:
                err = str(exc)
        if err is not None:
            logger.warning("skipping record: %s", err)
            skipped.append(err)
            continue
        dim = seq.dim
        yield seq


def cmd_online(cfg: RunConfig, overrides: dict | None = None, *, stdin: IO[str] | None = None,
               verdict_sink: IO[str] | None = None) -> CommandResult:
    """Race the configured candidates, then learn online; one verdict line per valid record.

    Verdicts go to ``verdicts.jsonl`` in the output directory (and to
    ``verdict_sink`` when given). Malformed records are skipped with a
    warning and counted in ``summary.json``.
    """
    hps = cfg.candidates(overrides)
    out = _out_dir(cfg)
    src = _require(cfg.data.input, "input")
    skipped: list[str] = []
    result = CommandResult()
    opener = nullcontext(stdin or sys.stdin) if src == "-" else open(src)
    with opener as lines, (out / "verdicts.jsonl").open("w") as sink:
        run = run_stream(hps, _valid_stream(lines, skipped), n_samples=cfg.online.n_samples,
                         cadence=cfg.online.cadence, seed=cfg.seed)
        n = 0
        for verdict in run:
            line = verdict.to_json() + "\n"
            sink.write(line)
            if verdict_sink is not None:
                verdict_sink.write(line)
            n += 1
    result.files["verdicts"] = out / "verdicts.jsonl"
    if run.state is not None and run.state.model is not None:
        result.files["checkpoint"] = save_checkpoint(
            out / "checkpoint.json", Checkpoint(run.state.model, run.state.hp, run.state.seen))
    result.summary = {
        "verdicts": n, "skipped": len(skipped), "skipped_reasons": skipped,
        "committed": None if run.state is None else run.state.hp.to_dict(),
        "race_fitness": None if run.race is None else run.race.fitness,
        "race_winner": None if run.race is None else run.race.index,
    }
    (out / "summary.json").write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n")
    result.files["summary"] = out / "summary.json"
    result.files["provenance"] = write_provenance(out, "online", cfg, summary={"verdicts": n,
                                                                              "skipped": len(skipped)})
    return result


# ------------------------------------------------------------------- main
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irregad", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"irregad {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [("preprocess", "relabel, difference, split and drop a dataset"),
                       ("synth", "generate the synthetic dataset"),
                       ("train", "train offline and write a checkpoint"),
                       ("eval", "score a labeled test set and write ROC reports"),
                       ("online", "race candidates and learn online from a stream")]:
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", metavar="PATH", help="YAML or JSON run configuration")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
        p.add_argument("--preset", choices=sorted(PRESETS), help="named hyperparameter preset")
        p.add_argument("--drop-rate", type=float, action="append", dest="drop_rates", metavar="R",
                       help="drop rate; repeat for several")
        p.add_argument("--mode", choices=("unsupervised", "semi", "supervised"),
                       help="label usage during training")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _apply_cli(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    changes: dict = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = args.out
    if args.preset is not None:
        changes["preset"] = args.preset
    if args.drop_rates and args.command == "preprocess":
        changes["preprocess"] = {**cfg.to_dict()["preprocess"], "drop_rates": args.drop_rates}
    return cfg.replace(**changes) if changes else cfg


def _limit_threads():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return nullcontext()
    try:
        n = int(value)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="irregad: %(levelname)s: %(message)s", stream=sys.stderr)
    overrides = {"mode": args.mode} if args.mode else None
    try:
        cfg = _apply_cli(load_config(args.config), args)
        with _limit_threads():
            if args.command == "preprocess":
                res = cmd_preprocess(cfg)
            elif args.command == "synth":
                res = cmd_synth(cfg)
            elif args.command == "train":
                res = cmd_train(cfg, overrides)
            elif args.command == "eval":
                res = cmd_eval(cfg, args.drop_rates or ())
            else:
                res = cmd_online(cfg, overrides, verdict_sink=sys.stdout)
    except (ConfigError, HyperparameterError) as exc:
        print(f"irregad: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"irregad: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, SequenceError, EvalError, CheckpointError, OnlineError, OSError) as exc:
        print(f"irregad: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(json.dumps(res.summary, sort_keys=True, default=str),
          file=sys.stderr if args.command == "online" else sys.stdout)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
