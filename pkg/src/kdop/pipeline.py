"""Fold protocol: train the autoencoder, weight the booster, threshold, test.

Each rotation of the k-fold split gives one fold to each role. The train
fold fits the scalers and (negatives only) the autoencoder; the validation
fold is scored by the autoencoder, and those errors weight the booster that
is fitted on the validation statics; the threshold also comes from the
validation fold; the test fold is only ever predicted.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import dynamic_kd, static_op
from .config import PipelineConfig
from .errors import DataError, LeakageError, StageError, UndefinedMetricError
from .metrics import MetricReport, evaluate, module_contribution, summarize
from .numerics import make_rng

log = logging.getLogger(__name__)

METRIC_FIELDS = ("pr_auc", "roc_auc", "macro_precision", "macro_recall", "macro_f1")


@dataclass
class FoldRoles:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    def check_disjoint(self, ids):
        sets = [set(ids[i] for i in idx) for idx in (self.train, self.valid, self.test)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise LeakageError("a patient appears in two fold roles")


@dataclass
class FoldResult:
    rotation: int
    dynamic_kd: MetricReport
    kd_op: MetricReport
    autoencoder: dynamic_kd.Autoencoder
    booster: static_op.GbModel
    dynamic_scaler: data_mod.MinMaxScaler
    static_scaler: data_mod.MinMaxScaler
    gamma_kd_op: float
    gamma_dynamic: float
    error_range: tuple  # validation (min, max) used to normalise errors
    roles: dict  # role -> list of patient ids
    provenance: dict
    train_log: list = field(default_factory=list)
    best_epoch: int = 0
    seconds: dict = field(default_factory=dict)

    def summary(self):
        return {
            "rotation": self.rotation,
            "dynamic_kd": self.dynamic_kd.to_dict(),
            "kd_op": self.kd_op.to_dict(),
            "n_train": len(self.roles["train"]),
            "n_valid": len(self.roles["valid"]),
            "n_test": len(self.roles["test"]),
            "best_epoch": self.best_epoch,
            "epochs_run": len(self.train_log),
        }


def _scaler_fit_rows(roles: FoldRoles):
    """Rows the scalers are fitted on."""
    return roles.train


def check_leakage(provenance: dict, roles: dict, labels_by_id: dict):
    """Raise :class:`LeakageError` unless every fitted piece saw only its own fold."""
    train, valid = set(roles["train"]), set(roles["valid"])
    for name in ("dynamic_scaler", "static_scaler"):
        extra = set(provenance[name]) - train
        if extra:
            raise LeakageError(f"{name} was fitted on {len(extra)} non-training patient(s)")
    ae = set(provenance["autoencoder"])
    if ae - train:
        raise LeakageError("autoencoder trained on non-training patients")
    positives = [p for p in ae if labels_by_id[p] != 0]
    if positives:
        raise LeakageError(f"autoencoder trained on {len(positives)} positive patient(s)")
    for name in ("gamma_kd_op", "gamma_dynamic"):
        if set(provenance[name]) != valid:
            raise LeakageError(f"{name} was not chosen on exactly the validation fold")


def _normalise(errors, lo, hi):
    span = hi - lo
    if span <= 0:
        return np.zeros_like(errors)
    return np.clip((errors - lo) / span, 0.0, 1.0)


def _stage(name):
    class _Ctx:
        def __enter__(self):
            self.t = time.perf_counter()
            return self

        def __exit__(self, tp, exc, tb):
            self.seconds = time.perf_counter() - self.t
            if exc is not None and not isinstance(exc, (StageError, LeakageError)):
                raise StageError(name, exc) from exc
            return False
    return _Ctx()


def run_fold(cohort: data_mod.CohortDataset, roles: FoldRoles, config: PipelineConfig,
             rotation: int = 0) -> FoldResult:
    ids = cohort.patient_ids
    y = cohort.label(config.outcome, config.interval_days)
    roles.check_disjoint(ids)
    role_ids = {r: [ids[i] for i in getattr(roles, r)] for r in ("train", "valid", "test")}
    provenance, seconds = {}, {}

    with _stage("scale") as st:
        fit_rows = _scaler_fit_rows(roles)
        fit_ids = [ids[i] for i in fit_rows]
        dyn_scaler = data_mod.fit_scaler(cohort.series[fit_rows], fit_ids)
        stat_scaler = data_mod.fit_scaler(cohort.statics[fit_rows], fit_ids)
        provenance["dynamic_scaler"] = sorted(dyn_scaler.provenance)
        provenance["static_scaler"] = sorted(stat_scaler.provenance)
        X = {r: dyn_scaler.transform(cohort.series[getattr(roles, r)]) for r in role_ids}
        S = {r: stat_scaler.transform(cohort.statics[getattr(roles, r)]) for r in role_ids}
        Y = {r: y[getattr(roles, r)] for r in role_ids}
    seconds["scale"] = st.seconds

    with _stage("train_autoencoder") as st:
        neg, neg_ids = data_mod.extract_negative_subset(X["train"], Y["train"], role_ids["train"])
        tcfg = replace(config.train, seed=config.seed + config.train.seed + 7919 * rotation)
        result = dynamic_kd.train(neg, tcfg, ids=neg_ids)
        ae = result.model
        provenance["autoencoder"] = sorted(result.trained_ids)
    seconds["train_autoencoder"] = st.seconds

    with _stage("score_validation") as st:
        val_scores = dynamic_kd.score(ae, X["valid"])
    seconds["score_validation"] = st.seconds

    with _stage("train_static") as st:
        gcfg = replace(config.gb, seed=config.seed + config.gb.seed + 7919 * rotation)
        booster = static_op.train_gb(S["valid"], Y["valid"], val_scores.error, gcfg,
                                     feature_names=cohort.static_names)
    seconds["train_static"] = st.seconds

    with _stage("threshold") as st:
        p_valid = static_op.predict_proba(booster, S["valid"])
        gamma_kd = static_op.select_threshold(Y["valid"], p_valid)
        lo, hi = float(val_scores.error.min()), float(val_scores.error.max())
        gamma_dyn = static_op.select_threshold(Y["valid"], _normalise(val_scores.error, lo, hi))
        provenance["gamma_kd_op"] = list(role_ids["valid"])
        provenance["gamma_dynamic"] = list(role_ids["valid"])
    seconds["threshold"] = st.seconds

    with _stage("test") as st:
        test_scores = dynamic_kd.score(ae, X["test"])
        p_dyn = _normalise(test_scores.error, lo, hi)
        p_test = static_op.predict_proba(booster, S["test"])
        try:
            report_dyn = evaluate(Y["test"], p_dyn, gamma_dyn)
            report_kd = evaluate(Y["test"], p_test, gamma_kd)
        except UndefinedMetricError as exc:
            raise DataError(f"test fold of rotation {rotation}: {exc}") from exc
    seconds["test"] = st.seconds

    labels_by_id = dict(zip(ids, y.tolist()))
    check_leakage(provenance, role_ids, labels_by_id)
    return FoldResult(rotation, report_dyn, report_kd, ae, booster, dyn_scaler, stat_scaler,
                      gamma_kd, gamma_dyn, (lo, hi), role_ids, provenance, result.log,
                      result.best_epoch, seconds)


def assign_folds(cohort: data_mod.CohortDataset, config: PipelineConfig) -> data_mod.FoldAssignment:
    y = cohort.label(config.outcome, config.interval_days)
    return data_mod.stratified_group_kfold(y, cohort.patient_ids, config.k, make_rng(config.seed))


def rotation_roles(cohort, folds: data_mod.FoldAssignment, rotation: int) -> FoldRoles:
    k = folds.k
    if k < 3:
        raise DataError("the three-role protocol needs k >= 3")
    idx = [folds.index_of(cohort.patient_ids, (rotation + s) % k) for s in range(3)]
    if k > 3:
        # extra folds join the training role
        extra = [folds.index_of(cohort.patient_ids, (rotation + s) % k) for s in range(3, k)]
        idx[0] = np.sort(np.concatenate([idx[0], *extra]))
    return FoldRoles(*idx)


@dataclass
class CrossValResult:
    folds: list
    assignment: data_mod.FoldAssignment
    config_hash: str

    def report(self, config: PipelineConfig) -> dict:
        per_rot = [f.summary() for f in self.folds]
        summary = {}
        for model in ("dynamic_kd", "kd_op"):
            summary[model] = {m: summarize([r[model][m] for r in per_rot]) for m in METRIC_FIELDS}
        return {
            "outcome": config.outcome,
            "interval_days": config.interval_days,
            "k": config.k,
            "config_hash": self.config_hash,
            "rotations": per_rot,
            "summary": summary,
        }


def cross_validate(cohort, config: PipelineConfig, folds=None) -> CrossValResult:
    folds = folds or assign_folds(cohort, config)
    results = []
    for r in range(folds.k):
        log.info("rotation %d/%d", r + 1, folds.k)
        results.append(run_fold(cohort, rotation_roles(cohort, folds, r), config, r))
    return CrossValResult(results, folds, config.hash())


# -- persistence of fold artifacts -------------------------------------------


def save_fold(fold: FoldResult, directory, config: PipelineConfig):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    dynamic_kd.save_model(d / "autoencoder.npz", fold.autoencoder, config.train,
                          extra={"config_hash": config.hash()})
    static_op.save_model(d / "static_op.json", fold.booster)
    meta = {
        "config_hash": config.hash(),
        "rotation": fold.rotation,
        "dynamic_scaler": fold.dynamic_scaler.to_dict(),
        "static_scaler": fold.static_scaler.to_dict(),
        "gamma_kd_op": fold.gamma_kd_op,
        "gamma_dynamic": fold.gamma_dynamic,
        "error_range": list(fold.error_range),
        "roles": fold.roles,
        "test_metrics": {"dynamic_kd": fold.dynamic_kd.to_dict(), "kd_op": fold.kd_op.to_dict()},
        "best_epoch": fold.best_epoch,
        "train_log": fold.train_log,
    }
    (d / "fold.json").write_text(json.dumps(meta, sort_keys=True, indent=1))


@dataclass
class FoldArtifacts:
    rotation: int
    autoencoder: dynamic_kd.Autoencoder
    booster: static_op.GbModel
    dynamic_scaler: data_mod.MinMaxScaler
    static_scaler: data_mod.MinMaxScaler
    gamma_kd_op: float
    gamma_dynamic: float
    error_range: tuple
    roles: dict
    test_metrics: dict

    @classmethod
    def from_result(cls, f: FoldResult):
        return cls(f.rotation, f.autoencoder, f.booster, f.dynamic_scaler, f.static_scaler,
                   f.gamma_kd_op, f.gamma_dynamic, f.error_range, f.roles,
                   {"dynamic_kd": f.dynamic_kd.to_dict(), "kd_op": f.kd_op.to_dict()})


def load_fold(directory, expected_hash=None) -> FoldArtifacts:
    d = Path(directory)
    meta = json.loads((d / "fold.json").read_text())
    if expected_hash is not None and meta["config_hash"] != expected_hash:
        raise DataError(f"checkpoint {d} was produced by config {meta['config_hash']}, "
                        f"current config is {expected_hash}")
    ae, _ = dynamic_kd.load_model(d / "autoencoder.npz")
    return FoldArtifacts(
        meta["rotation"], ae, static_op.load_model(d / "static_op.json"),
        data_mod.MinMaxScaler.from_dict(meta["dynamic_scaler"]),
        data_mod.MinMaxScaler.from_dict(meta["static_scaler"]),
        meta["gamma_kd_op"], meta["gamma_dynamic"], tuple(meta["error_range"]),
        meta["roles"], meta["test_metrics"],
    )


def evaluate_fold(cohort, art: FoldArtifacts, config: PipelineConfig) -> dict:
    """Re-score a fold's test patients from saved artifacts."""
    pos = {p: i for i, p in enumerate(cohort.patient_ids)}
    idx = np.array([pos[p] for p in art.roles["test"]])
    y = cohort.label(config.outcome, config.interval_days)[idx]
    scores = dynamic_kd.score(art.autoencoder, art.dynamic_scaler.transform(cohort.series[idx]))
    p_dyn = _normalise(scores.error, *art.error_range)
    p = static_op.predict_proba(art.booster, art.static_scaler.transform(cohort.statics[idx]))
    return {
        "rotation": art.rotation,
        "dynamic_kd": evaluate(y, p_dyn, art.gamma_dynamic).to_dict(),
        "kd_op": evaluate(y, p, art.gamma_kd_op).to_dict(),
        "n_test": len(idx),
    }


# -- justification ------------------------------------------------------------


@dataclass
class JustificationReport:
    patient_id: str
    probability: float
    label: int
    gamma: float
    w_dynamic: float
    w_static: float
    reconstruction_error: float
    attention: list  # T rows x v columns
    dynamic_names: list
    time_labels: list
    static_importance: list  # [(name, value)] sorted descending, top-k
    rotation: int = 0

    def to_dict(self):
        d = asdict(self)
        d["static_importance"] = [[n, v] for n, v in self.static_importance]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["static_importance"] = [(n, v) for n, v in d["static_importance"]]
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def time_labels(T: int, window_minutes: int):
    def hm(m):
        return f"{m // 60:02d}:{m % 60:02d}"
    return [f"{hm(t * window_minutes)}-{hm((t + 1) * window_minutes)}" for t in range(T)]


def explain(patient_id: str, cohort, artifacts, window_minutes: int = 60,
            top_k: int = 10) -> JustificationReport:
    """Justification for one patient, using the rotation where it was a test case."""
    if patient_id not in cohort.patient_ids:
        raise KeyError(f"unknown patient {patient_id!r}")
    art = next((a for a in artifacts if patient_id in a.roles["test"]), None)
    if art is None:
        raise KeyError(f"patient {patient_id!r} is not in any rotation's test fold")
    i = cohort.patient_ids.index(patient_id)
    x = art.dynamic_scaler.transform(cohort.series[i:i + 1])
    s = art.static_scaler.transform(cohort.statics[i:i + 1])
    dyn = dynamic_kd.score(art.autoencoder, x)
    p = float(static_op.predict_proba(art.booster, s)[0])
    w_dyn, w_stat = module_contribution(art.test_metrics["dynamic_kd"]["pr_auc"],
                                        art.test_metrics["kd_op"]["pr_auc"])
    imp = static_op.feature_importance(art.booster)
    names = art.booster.feature_names or cohort.static_names
    order = sorted(range(len(imp)), key=lambda j: (-imp[j], j))[:top_k]
    return JustificationReport(
        patient_id=patient_id,
        probability=p,
        label=int(p >= art.gamma_kd_op),
        gamma=float(art.gamma_kd_op),
        w_dynamic=float(w_dyn),
        w_static=float(w_stat),
        reconstruction_error=float(dyn.error[0]),
        attention=dyn.attention[0].tolist(),
        dynamic_names=list(cohort.dynamic_names),
        time_labels=time_labels(cohort.series.shape[1], window_minutes),
        static_importance=[(names[j], float(imp[j])) for j in order],
        rotation=art.rotation,
    )
