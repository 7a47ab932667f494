"""Command-line entry point: fetch -> preprocess -> pretrain -> adapt -> report."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as ds
from .edf import parse_edf
from .errors import FastBciError
from .evaluate import (FinetuneSpec, cross_activity_adapt, default_finetune_spec,
                       evaluate_fast_adaptability)
from .filters import design_fir, filter_apply
from .model import ClassifierSpec, NormKind, load_model, save_model
from .report import compare_table, render_plots, write_report_csv
from .training import (LOG_HEADER, maml_defaults, maml_pretrain, transfer_defaults,
                       transfer_pretrain)

log = logging.getLogger("fastbci")

DATA_DIR_ENV = "FASTBCI_DATA_DIR"


def _status(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved, serializable description of one subcommand run; its
    hash is stamped into every artifact the run produces.

    Paths are recorded but excluded from the hash: the same experiment
    written to a different location must produce identical artifacts.
    """

    command: str
    strategy: str | None = None
    activity: int | None = None
    norm: str | None = None
    filter_mode: str | None = None
    seed: int = 0
    paths: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def hash(self) -> str:
        d = asdict(self)
        d.pop("paths")
        return config_hash(d)


def _data_root(value, what: str) -> Path:
    if value:
        return Path(value)
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        return Path(env)
    raise FastBciError(f"--{what} not given and {DATA_DIR_ENV} unset")


def _parse_range(text: str) -> tuple[int, int]:
    if "-" in text:
        lo, hi = text.split("-", 1)
        return int(lo), int(hi)
    v = int(text)
    return v, v


def _load_config_file(path) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _resolve(flag_value, file_config: dict, key: str, default):
    """Precedence: explicit flag > config file > per-activity default."""
    if flag_value is not None:
        return flag_value
    if key in file_config:
        return file_config[key]
    return default


# ----------------------------------------------------------------------
# subcommands

def cmd_fetch(args) -> int:
    dest = _data_root(args.dest, "dest")
    result = ds.fetch_dataset(dest, _parse_range(args.subjects),
                              base_url=args.base_url,
                              progress=lambda p: _status(f"fetched {p}"))
    _status(f"fetch: {result['downloaded']} downloaded, "
            f"{result['skipped']} already present")
    return 0


def cmd_preprocess(args) -> int:
    raw_dir = _data_root(args.raw, "raw")
    out_dir = Path(args.out)
    activities = sorted({int(a) for a in args.activities.split(",")})
    lo, hi = _parse_range(args.subjects)
    filt = design_fir(args.filter, args.low, args.high, ds.EXPECTED_FS,
                      args.transition)

    jobs = []
    for subject in range(lo, hi + 1):
        for activity in activities:
            for run in ds.ACTIVITY_RUNS[activity]:
                path = raw_dir / f"S{subject:03d}" / f"S{subject:03d}R{run:02d}.edf"
                if path.exists():
                    jobs.append((subject, activity, path))

    def process(job):
        subject, activity, path = job
        rec = parse_edf(path)
        if abs(rec.fs - ds.EXPECTED_FS) > 1e-9:
            return subject, activity, [], 0, f"{path.name}: fs={rec.fs:g} rejected"
        if rec.n_channels != ds.EXPECTED_CHANNELS:
            return subject, activity, [], 0, \
                f"{path.name}: {rec.n_channels} channels rejected"
        filtered = filter_apply(rec, filt)
        trials, dropped = ds.epoch_extract(filtered,
                                           ds.extract_events(filtered, activity))
        return subject, activity, trials, dropped, None

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(process, jobs))
    else:
        results = [process(j) for j in jobs]

    by_key: dict[tuple[int, int], list] = {}
    total_dropped = 0
    for subject, activity, trials, dropped, problem in results:
        if problem:
            _status(f"preprocess: {problem}")
            continue
        by_key.setdefault((subject, activity), []).extend(trials)
        total_dropped += dropped
    if not by_key:
        raise FastBciError("preprocess produced no trials")

    sets = [ds.SubjectDataset.from_trials(s, a, trials)
            for (s, a), trials in sorted(by_key.items())]
    chash = ExperimentConfig(
        command="preprocess", filter_mode=args.filter,
        paths={"raw": str(raw_dir), "out": str(out_dir)},
        options={"low": args.low, "high": args.high,
                 "transition": args.transition, "subjects": args.subjects,
                 "activities": args.activities},
    ).hash()
    ds.write_archive(out_dir, sets, filter_info=filt.describe(),
                     extra={"config_hash": chash, "dropped_epochs": total_dropped})
    _status(f"preprocess: wrote {len(sets)} subject/activity sets to {out_dir} "
            f"({total_dropped} short epochs dropped), config {chash}")
    return 0


def _activity_sets(archive_sets, activity: int, subject_ids) -> dict:
    out = {}
    for (sid, act), dataset in archive_sets.items():
        if act == activity and sid in subject_ids:
            out[sid] = dataset
    return out


def cmd_pretrain(args) -> int:
    data_dir = _data_root(args.data, "data")
    file_config = _load_config_file(args.config)
    archive_sets, _ = ds.read_archive(data_dir)
    subject_ids = {sid for sid, _ in archive_sets}
    splits = ds.build_splits(subject_ids)
    train = _activity_sets(archive_sets, args.activity, splits["train"])
    val = _activity_sets(archive_sets, args.activity, splits["validation"])

    seed = int(_resolve(args.seed, file_config, "seed", 0))
    norm = NormKind(_resolve(args.norm, file_config, "norm", "layer"))
    spec = ClassifierSpec(norm=norm)
    rng = np.random.default_rng(seed)
    experiment = dict(command="pretrain", strategy=args.strategy,
                      activity=args.activity, norm=norm.value, seed=seed,
                      paths={"data": str(data_dir), "out": str(args.out)})

    if args.strategy == "maml":
        config = maml_defaults(
            args.activity,
            inner_lr=_resolve(args.inner_lr, file_config, "inner_lr",
                              maml_defaults(args.activity).inner_lr),
            meta_lr=_resolve(args.meta_lr, file_config, "meta_lr",
                             maml_defaults(args.activity).meta_lr),
            max_meta_iterations=int(_resolve(args.max_iterations, file_config,
                                             "max_meta_iterations", 2000)),
        )
        experiment["options"] = config.__dict__
        params, rows = maml_pretrain(
            spec, train, val, config, rng, seed_label=seed,
            progress=lambda i, l, a: _status(
                f"meta-iteration {i}: loss={l:.4f} val_acc={a:.4f}"))
    else:
        config = transfer_defaults(
            args.activity,
            lr=_resolve(args.lr, file_config, "lr", transfer_defaults(args.activity).lr),
            batch_size=int(_resolve(args.batch_size, file_config, "batch_size",
                                    transfer_defaults(args.activity).batch_size)),
            max_epochs=int(_resolve(args.max_epochs, file_config, "max_epochs", 200)),
        )
        experiment["options"] = config.__dict__
        params, rows = transfer_pretrain(
            spec, train, val, config, rng, seed_label=seed,
            progress=lambda e, l, a: _status(
                f"epoch {e}: loss={l:.4f} val_acc={a:.4f}"))

    options = experiment.pop("options", {})
    chash = ExperimentConfig(**experiment, options=options).hash()
    params.meta["provenance"] = {"strategy": args.strategy, "activity": args.activity,
                                 "seed": seed, "config_hash": chash}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(params, out)
    log_path = out.with_name(out.name + ".log.csv")
    with open(log_path, "w") as fh:
        fh.write(",".join(LOG_HEADER) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    _status(f"pretrain: saved {out} (+{log_path.name}), config {chash}")
    return 0


def cmd_adapt(args) -> int:
    data_dir = _data_root(args.data, "data")
    params = load_model(args.model)
    provenance = params.meta.get("provenance", {})
    strategy = provenance.get("strategy", "transfer")
    source_activity = int(provenance.get("activity", args.target_activity or 1))
    target_activity = args.target_activity or source_activity

    archive_sets, _ = ds.read_archive(data_dir)
    lo, hi = _parse_range(args.subjects)
    subject_ids = set(range(lo, hi + 1))
    target_sets = _activity_sets(archive_sets, target_activity, subject_ids)
    if not target_sets:
        raise FastBciError(f"no archived subjects in {args.subjects} "
                           f"for activity {target_activity}")

    base = default_finetune_spec(strategy, source_activity, target_activity,
                                 steps=args.steps)
    spec = FinetuneSpec(
        optimizer=args.optimizer or base.optimizer,
        lr=args.lr if args.lr is not None else base.lr,
        steps=args.steps,
        k_support=args.k_support,
        k_query=args.k_query,
    )
    seed = args.seed
    chash = ExperimentConfig(
        command="adapt", strategy=strategy, activity=target_activity, seed=seed,
        paths={"model": str(args.model), "data": str(data_dir),
               "out": str(args.out)},
        options={"spec": spec.__dict__, "runs": args.runs,
                 "subjects": args.subjects},
    ).hash()

    kwargs = dict(spec=spec, runs=args.runs, base_seed=seed, threads=args.threads,
                  progress=(lambda r, s: _status(f"run {r} subject {s}"))
                  if args.verbose else None)
    if target_activity == source_activity:
        report = evaluate_fast_adaptability(params, target_sets, **kwargs)
    else:
        report = cross_activity_adapt(params, target_sets,
                                      target_activity=target_activity, **kwargs)
    out = write_report_csv(report, args.out, config_hash=chash)
    final = report.mean_test[-1]
    _status(f"adapt: iteration-0 acc {report.mean_test[0]:.4f}, "
            f"iteration-{report.iterations} acc {final:.4f}; wrote {out}, "
            f"config {chash}")
    return 0


def cmd_report(args) -> int:
    out_dir = Path(args.out)
    written = render_plots(args.inputs, out_dir)
    if args.table:
        md, csv_text = compare_table(args.inputs)
        (out_dir / "comparison.md").write_text(md)
        (out_dir / "comparison.csv").write_text(csv_text)
        written += [out_dir / "comparison.md", out_dir / "comparison.csv"]
    _status("report: wrote " + ", ".join(str(p) for p in written))
    return 0


# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fastbci",
        description="Fast-adaptability experiments for EEG classifiers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download the raw EDF corpus")
    p.add_argument("--dest", help=f"target directory (default ${DATA_DIR_ENV})")
    p.add_argument("--subjects", default="1-109", help="subject range A-B")
    p.add_argument("--base-url", default=ds.DEFAULT_BASE_URL)
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("preprocess", help="filter + epoch EDFs into an archive")
    p.add_argument("--raw", help=f"EDF tree (default ${DATA_DIR_ENV})")
    p.add_argument("--out", required=True)
    p.add_argument("--filter", choices=["band_stop", "band_pass"],
                   default="band_stop")
    p.add_argument("--low", type=float, default=7.0)
    p.add_argument("--high", type=float, default=30.0)
    p.add_argument("--transition", type=float, default=2.0)
    p.add_argument("--subjects", default="1-109")
    p.add_argument("--activities", default="1,2,3,4")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("pretrain", help="train a model with one strategy")
    p.add_argument("--strategy", choices=["maml", "transfer"], required=True)
    p.add_argument("--activity", type=int, choices=[1, 2, 3, 4], required=True)
    p.add_argument("--norm", choices=["batch", "layer"])
    p.add_argument("--data", help=f"epoch archive (default ${DATA_DIR_ENV})")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float, help="transfer learning rate")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--inner-lr", type=float, help="meta inner-loop rate")
    p.add_argument("--meta-lr", type=float)
    p.add_argument("--max-iterations", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("adapt", help="run the fast-adaptability protocol")
    p.add_argument("--model", required=True)
    p.add_argument("--data", help=f"epoch archive (default ${DATA_DIR_ENV})")
    p.add_argument("--target-activity", type=int, choices=[1, 2, 3, 4])
    p.add_argument("--subjects", default="99-109")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--k-support", type=int, default=10)
    p.add_argument("--k-query", type=int, default=11)
    p.add_argument("--optimizer", choices=["adam", "gradient_descent"])
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("report", help="render figures and summary tables")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--table", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FastBciError as exc:
        _status(f"error: {exc}")
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        _status(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
