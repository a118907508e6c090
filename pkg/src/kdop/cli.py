"""Command line entry point: ``kdop {synth,prepare,train,evaluate,explain}``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training error.
Failures print one ``kdop-error`` line on stderr.
"""
from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import pipeline, synth
from .config import PipelineConfig, format_config, load_config
from .errors import (ConfigError, DataError, InputContractError, KdopError, StageError,
                     TrainingError)
from .svg import render

log = logging.getLogger("kdop")

PREPARED = "prepared.npz"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--seed", type=int)
    p.add_argument("--outcome")
    p.add_argument("--interval", type=int, metavar="DAYS")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="kdop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, help_ in [
        ("synth", "write a synthetic cohort as CSV files"),
        ("prepare", "aggregate, impute and split the cohort"),
        ("train", "run the k-fold protocol and write checkpoints and report.json"),
        ("evaluate", "re-score the test folds from saved checkpoints"),
        ("explain", "write justification JSON and SVG for patients"),
    ]:
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name == "explain":
            p.add_argument("--patients", nargs="+", metavar="ID")
    _common(parser)
    return parser


def _config(args) -> PipelineConfig:
    return load_config(args.config, seed=args.seed, outcome=args.outcome,
                       interval_days=args.interval, out_dir=args.out)


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


# -- subcommands --------------------------------------------------------------


def cmd_synth(cfg: PipelineConfig):
    cohort, truth = synth.generate(cfg.synth)
    directory = cfg.path("dynamic").parent
    window = 24 * 60 // cfg.synth.T
    paths = synth.write_csvs(cohort, directory, window_minutes=window,
                             dropout=cfg.data.synth_dropout, seed=cfg.synth.seed, truth=truth)
    for name in ("dynamic", "static", "labels"):
        target = cfg.path(name)
        if target != paths[name]:
            target.parent.mkdir(parents=True, exist_ok=True)
            paths[name].replace(target)
    print(f"wrote synthetic cohort of {len(cohort)} patients to {directory}")


def save_prepared(path, cohort, window, folds, meta_extra=None):
    keys = sorted(cohort.labels)
    meta = {
        "patient_ids": cohort.patient_ids,
        "dynamic_names": cohort.dynamic_names,
        "static_names": cohort.static_names,
        "label_keys": [list(k) for k in keys],
        "window_minutes": window,
        "k": folds.k,
        "folds": folds.folds,
        **(meta_extra or {}),
    }
    buf = io.BytesIO()
    np.savez(buf, series=cohort.series, mask=cohort.mask, statics=cohort.statics,
             labels=np.stack([cohort.labels[k] for k in keys]),
             __meta__=np.array(json.dumps(meta, sort_keys=True)))
    Path(path).write_bytes(buf.getvalue())


def load_prepared(path):
    if not Path(path).is_file():
        raise DataError(f"prepared cohort not found: {path} (run `kdop prepare` first)")
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        labels = {(o, int(d)): z["labels"][i] for i, (o, d) in enumerate(meta["label_keys"])}
        cohort = data_mod.CohortDataset(meta["patient_ids"], z["series"], z["mask"], z["statics"],
                                        labels, meta["dynamic_names"], meta["static_names"])
    folds = data_mod.FoldAssignment(meta["k"], meta["folds"])
    return cohort, folds, meta


def cmd_prepare(cfg: PipelineConfig):
    raw = data_mod.load_cohort(cfg.path("dynamic"), cfg.path("static"), cfg.path("labels"))
    window = data_mod.select_window_length(raw, cfg.data.window_candidates,
                                           cfg.data.completeness_target)
    cohort = data_mod.build_cohort(raw, window, cfg.data.aggregators)
    cohort = data_mod.append_dynamic_summaries(cohort)
    folds = pipeline.assign_folds(cohort, cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_prepared(out / PREPARED, cohort, window, folds,
                  {"dropped_patients": raw.dropped,
                   "completeness": data_mod.completeness(raw, window)})
    print(f"prepared {len(cohort)} patients, window {window} min, T={cohort.series.shape[1]}, "
          f"{folds.k} folds")


def cmd_train(cfg: PipelineConfig):
    out = Path(cfg.out_dir)
    cohort, folds, _ = load_prepared(out / PREPARED)
    cv = pipeline.cross_validate(cohort, cfg, folds)
    for f in cv.folds:
        pipeline.save_fold(f, out / f"fold_{f.rotation}", cfg)
    report = cv.report(cfg)
    _write_json(out / "report.json", report)
    s = report["summary"]
    print(f"KD-OP PR-AUC {s['kd_op']['pr_auc']['mean']:.3f}, "
          f"Dynamic-KD PR-AUC {s['dynamic_kd']['pr_auc']['mean']:.3f}")


def _load_artifacts(cfg, k):
    out = Path(cfg.out_dir)
    arts = []
    for r in range(k):
        d = out / f"fold_{r}"
        if not (d / "fold.json").is_file():
            raise DataError(f"missing checkpoint {d} (run `kdop train` first)")
        arts.append(pipeline.load_fold(d, cfg.hash()))
    return arts


def cmd_evaluate(cfg: PipelineConfig):
    out = Path(cfg.out_dir)
    cohort, folds, _ = load_prepared(out / PREPARED)
    rows = [pipeline.evaluate_fold(cohort, a, cfg) for a in _load_artifacts(cfg, folds.k)]
    from .metrics import summarize
    summary = {m: {f: summarize([r[m][f] for r in rows]) for f in pipeline.METRIC_FIELDS}
               for m in ("dynamic_kd", "kd_op")}
    _write_json(out / "evaluation.json", {"config_hash": cfg.hash(), "outcome": cfg.outcome,
                                          "interval_days": cfg.interval_days,
                                          "rotations": rows, "summary": summary})
    print(f"re-scored {len(rows)} test folds")


def cmd_explain(cfg: PipelineConfig, patients):
    out = Path(cfg.out_dir)
    cohort, folds, meta = load_prepared(out / PREPARED)
    arts = _load_artifacts(cfg, folds.k)
    patients = list(patients or cfg.explain.patients)
    if not patients:
        y = cohort.label(cfg.outcome, cfg.interval_days)
        patients = [cohort.patient_ids[int(np.argmax(y))], cohort.patient_ids[int(np.argmin(y))]]
    for pid in patients:
        try:
            rep = pipeline.explain(pid, cohort, arts, meta["window_minutes"], cfg.explain.top_k)
        except KeyError as exc:
            raise DataError(str(exc.args[0])) from None
        (out / "explain").mkdir(parents=True, exist_ok=True)
        (out / "explain" / f"{pid}.json").write_text(rep.to_json() + "\n", encoding="utf-8")
        (out / "explain" / f"{pid}.svg").write_text(render(rep), encoding="utf-8")
    print(f"explained {len(patients)} patient(s) into {out / 'explain'}")


def _exit_code(exc) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, (UsageError, ConfigError)):
        return 1
    if isinstance(exc, TrainingError):
        return 3
    if isinstance(exc, (DataError, InputContractError, FileNotFoundError, KdopError)):
        return 2
    return 3


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        cfg = _config(args)
        if args.print_config:
            sys.stdout.write(format_config(cfg))
            return 0
        if args.command is None:
            raise UsageError("a subcommand is required")
        if args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "prepare":
            cmd_prepare(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg)
        elif args.command == "explain":
            cmd_explain(cfg, args.patients)
        return 0
    except Exception as exc:  # noqa: BLE001 - every failure maps to an exit code
        code = _exit_code(exc)
        msg = " ".join(str(exc).split())
        print(f"kdop-error code={code} type={type(exc).__name__} message={json.dumps(msg)}",
              file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
