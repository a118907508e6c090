"""Cohort ingestion and preprocessing.

Raw irregular observations are binned into fixed windows over the first 24
hours, gaps are interpolated per patient, features are min-max scaled with
statistics fitted on training rows only, and patients are split into
label-stratified folds that never share a patient.
"""
from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (ConfigError, DataError, DomainError, EmptyCohortError, ParseError,
                     StratificationError, TrainingError)

log = logging.getLogger(__name__)

HORIZON_S = 24 * 3600
AGGREGATORS = ("mean", "min", "max", "last")


# -- containers -------------------------------------------------------------


@dataclass
class RawCohort:
    """Parsed input files keyed by patient id.

    ``observations[pid]`` is a list of ``(timestamp_s, variable, value)``.
    """

    observations: dict
    statics: dict
    static_names: list
    labels: dict  # pid -> {(outcome, interval_days): label}
    dropped: int = 0

    @property
    def patient_ids(self):
        return sorted(self.observations)

    @property
    def variables(self):
        return sorted({var for obs in self.observations.values() for _, var, _ in obs})


@dataclass
class PatientSeries:
    patient_id: str
    matrix: np.ndarray  # T x v, NaN where unobserved before imputation
    mask: np.ndarray  # T x v, True where observed


@dataclass
class CohortDataset:
    """Aligned dynamic series, static vectors and outcome labels."""

    patient_ids: list
    series: np.ndarray  # n x T x v
    mask: np.ndarray  # n x T x v
    statics: np.ndarray  # n x u
    labels: dict  # (outcome, interval_days) -> int array (n,)
    dynamic_names: list
    static_names: list

    def __len__(self):
        return len(self.patient_ids)

    def label(self, outcome: str, interval_days: int) -> np.ndarray:
        try:
            return self.labels[(outcome, int(interval_days))]
        except KeyError:
            have = sorted(self.labels)
            raise DataError(f"no labels for ({outcome!r}, {interval_days}); available: {have}") from None

    def subset(self, index) -> "CohortDataset":
        index = np.asarray(index)
        return CohortDataset(
            [self.patient_ids[i] for i in index],
            self.series[index], self.mask[index], self.statics[index],
            {k: y[index] for k, y in self.labels.items()},
            list(self.dynamic_names), list(self.static_names),
        )


# -- loading ----------------------------------------------------------------


def _read_rows(path):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty file") from None
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(path, reader.line_num,
                                 f"expected {len(header)} fields, got {len(row)}")
            yield header, reader.line_num, row


def _number(path, line, text, what):
    try:
        x = float(text)
    except ValueError:
        raise ParseError(path, line, f"non-numeric {what} {text!r}") from None
    if not math.isfinite(x):
        raise ParseError(path, line, f"non-finite {what} {text!r}")
    return x


def load_cohort(dynamic_path, static_path, labels_path) -> RawCohort:
    """Parse the three CSV views; patients missing any view are dropped."""
    obs = defaultdict(list)
    for header, line, row in _read_rows(dynamic_path):
        if header[:4] != ["patient_id", "timestamp_s", "variable", "value"]:
            raise ParseError(dynamic_path, 1, f"unexpected header {header}")
        ts = _number(dynamic_path, line, row[1], "timestamp")
        if ts < 0:
            raise ParseError(dynamic_path, line, f"negative timestamp {ts}")
        obs[row[0]].append((ts, row[2], _number(dynamic_path, line, row[3], "value")))

    statics = {}
    names = None
    for header, line, row in _read_rows(static_path):
        if header[0] != "patient_id":
            raise ParseError(static_path, 1, "first column must be patient_id")
        names = header[1:]
        statics[row[0]] = np.array([_number(static_path, line, x, "static value") for x in row[1:]])

    labels = defaultdict(dict)
    for header, line, row in _read_rows(labels_path):
        if header != ["patient_id", "outcome", "interval_days", "label"]:
            raise ParseError(labels_path, 1, f"unexpected header {header}")
        lab = row[3].strip()
        if lab not in ("0", "1"):
            raise ParseError(labels_path, line, f"label must be 0 or 1, got {lab!r}")
        days = int(_number(labels_path, line, row[2], "interval_days"))
        labels[row[0]][(row[1], days)] = int(lab)

    all_ids = set(obs) | set(statics) | set(labels)
    keep = set(obs) & set(statics) & set(labels)
    dropped = len(all_ids - keep)
    if dropped:
        log.warning("dropped %d patient(s) missing at least one view", dropped)
    if not keep:
        raise EmptyCohortError("no patient appears in all three input files")
    return RawCohort(
        {p: obs[p] for p in sorted(keep)},
        {p: statics[p] for p in sorted(keep)},
        list(names or []),
        {p: labels[p] for p in sorted(keep)},
        dropped,
    )


# -- aggregation ------------------------------------------------------------


def n_windows(window_minutes) -> int:
    w = window_minutes * 60
    if w <= 0 or HORIZON_S % w:
        raise DomainError(f"window of {window_minutes} min does not divide 24 h")
    return int(HORIZON_S // w)


def completeness(raw: RawCohort, window_minutes) -> float:
    """Fraction of (patient, window, variable) cells holding at least one observation."""
    T = n_windows(window_minutes)
    variables = raw.variables
    if not variables:
        return 0.0
    filled = 0
    for obs in raw.observations.values():
        cells = {(int(ts // (window_minutes * 60)), var) for ts, var, _ in obs if ts < HORIZON_S}
        filled += len(cells)
    return filled / (len(raw.observations) * T * len(variables))


def select_window_length(raw: RawCohort, candidates, completeness_target: float = 0.9):
    """Shortest candidate window reaching the completeness target.

    Falls back to the most complete candidate (shortest on ties).
    """
    candidates = list(candidates)
    if not candidates:
        raise DomainError("no candidate window lengths")
    if not 0 < completeness_target <= 1:
        raise DomainError("completeness_target must lie in (0, 1]")
    scores = [completeness(raw, w) for w in candidates]
    for w, c in zip(candidates, scores):
        if c >= completeness_target:
            return w
    return candidates[int(np.argmax(scores))]


def _reduce(values, how):
    if how == "mean":
        return float(np.mean([v for _, v in values]))
    if how == "min":
        return min(v for _, v in values)
    if how == "max":
        return max(v for _, v in values)
    if how == "last":
        return max(values)[1]
    raise ConfigError(f"unknown aggregator {how!r}")


def aggregate(raw: RawCohort, window_minutes, aggregators=None, variables=None):
    """Bin each patient's first 24 hours into fixed windows.

    ``aggregators`` maps variable name to one of mean/min/max/last (default
    mean). Empty windows are NaN in the matrix and False in the mask.
    """
    T = n_windows(window_minutes)
    variables = list(variables) if variables is not None else raw.variables
    aggregators = dict(aggregators or {})
    unknown = sorted(set(aggregators) - set(variables))
    if unknown:
        raise ConfigError(f"aggregator configured for unknown variable(s): {unknown}")
    bad = {k: a for k, a in aggregators.items() if a not in AGGREGATORS}
    if bad:
        raise ConfigError(f"unknown aggregator(s): {bad}")
    col = {name: j for j, name in enumerate(variables)}
    out = []
    for pid in raw.patient_ids:
        bins = defaultdict(list)
        for ts, var, value in raw.observations[pid]:
            if ts < HORIZON_S and var in col:
                bins[(int(ts // (window_minutes * 60)), col[var])].append((ts, value))
        matrix = np.full((T, len(variables)), np.nan)
        for (t, j), values in bins.items():
            matrix[t, j] = _reduce(values, aggregators.get(variables[j], "mean"))
        out.append(PatientSeries(pid, matrix, ~np.isnan(matrix)))
    return out


# -- imputation -------------------------------------------------------------


def cohort_medians(series_list, names=None) -> np.ndarray:
    """Per-feature median of observed cells across patients (NaN if never observed)."""
    stacked = np.stack([np.where(s.mask, s.matrix, np.nan) for s in series_list])
    flat = stacked.reshape(-1, stacked.shape[-1])
    med = np.full(flat.shape[1], np.nan)
    for j in range(flat.shape[1]):
        col = flat[:, j][~np.isnan(flat[:, j])]
        if col.size:
            med[j] = np.median(col)
    return med


def impute(series: PatientSeries, fallback=None, names=None) -> PatientSeries:
    """Fill unobserved cells by linear interpolation in time.

    Leading and trailing gaps take the nearest observed value. A feature the
    patient never had observed is filled with ``fallback[j]`` (cohort
    median); if that is missing too a :class:`DataError` names the feature.
    """
    m = series.matrix.copy()
    mask = series.mask
    T = m.shape[0]
    t = np.arange(T)
    for j in range(m.shape[1]):
        seen = mask[:, j]
        if seen.all():
            continue
        if seen.any():
            m[:, j] = np.interp(t, t[seen], series.matrix[seen, j])
        else:
            fill = np.nan if fallback is None else fallback[j]
            if not np.isfinite(fill):
                name = names[j] if names is not None else f"feature {j}"
                raise DataError(f"{name} is never observed in the training cohort")
            m[:, j] = fill
    return PatientSeries(series.patient_id, m, mask.copy())


# -- scaling ----------------------------------------------------------------


@dataclass
class MinMaxScaler:
    """Per-feature min-max scaling onto [0, 1] with clamping.

    ``fit`` records the ids of the rows it saw so fold runners can check the
    fit never touched validation or test patients.
    """

    min_: np.ndarray | None = None
    max_: np.ndarray | None = None
    provenance: frozenset = field(default_factory=frozenset)

    def fit(self, rows, ids=()):
        rows = np.asarray(rows, dtype=np.float64)
        flat = rows.reshape(-1, rows.shape[-1])
        self.min_ = flat.min(axis=0)
        self.max_ = flat.max(axis=0)
        self.provenance = frozenset(ids)
        return self

    def transform(self, rows):
        if self.min_ is None:
            raise RuntimeError("scaler is not fitted")
        rows = np.asarray(rows, dtype=np.float64)
        span = self.max_ - self.min_
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (rows - self.min_) / safe, 0.0)
        return np.clip(out, 0.0, 1.0)

    def to_dict(self):
        return {"min": self.min_.tolist(), "max": self.max_.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["min"], dtype=np.float64), np.array(d["max"], dtype=np.float64))


def fit_scaler(rows, ids=()) -> MinMaxScaler:
    return MinMaxScaler().fit(rows, ids)


def apply_scaler(scaler: MinMaxScaler, rows):
    return scaler.transform(rows)


# -- folds ------------------------------------------------------------------


@dataclass
class FoldAssignment:
    k: int
    folds: dict  # patient_id -> fold index

    def members(self, fold: int):
        return sorted(p for p, f in self.folds.items() if f == fold)

    def index_of(self, patient_ids, fold: int):
        return np.array([i for i, p in enumerate(patient_ids) if self.folds[p] == fold], dtype=int)


def stratified_group_kfold(labels, patient_ids, k: int = 3, rng=None) -> FoldAssignment:
    """Split patients (groups) into ``k`` folds balancing positive counts.

    A patient with several rows is one group; it is positive if any row is.
    Within each class, patients are shuffled and each is placed in the fold
    currently holding the fewest of that class (ties: fewest patients
    overall, then lowest index), which keeps every fold's class count within
    one of ``count / k``.
    """
    if k < 2:
        raise DomainError("k must be at least 2")
    group_label = {}
    for pid, y in zip(patient_ids, labels):
        group_label[pid] = max(group_label.get(pid, 0), int(y))
    ids = sorted(group_label)
    pos = [p for p in ids if group_label[p] == 1]
    neg = [p for p in ids if group_label[p] == 0]
    if len(pos) < k:
        raise StratificationError(f"{len(pos)} positive patient(s) cannot fill {k} folds")
    if len(neg) < k:
        raise StratificationError(f"{len(neg)} negative patient(s) cannot fill {k} folds")
    if rng is not None:
        pos = [pos[i] for i in rng.permutation(len(pos))]
        neg = [neg[i] for i in rng.permutation(len(neg))]
    sizes = [0] * k
    folds = {}
    for members in (pos, neg):
        counts = [0] * k
        for pid in members:
            f = min(range(k), key=lambda i: (counts[i], sizes[i], i))
            folds[pid] = f
            counts[f] += 1
            sizes[f] += 1
    return FoldAssignment(k, folds)


def extract_negative_subset(series, labels, ids=None):
    """Return ``(series, ids)`` restricted to label-0 patients."""
    labels = np.asarray(labels)
    keep = np.flatnonzero(labels == 0)
    if keep.size == 0:
        raise TrainingError("no negative-outcome patients to train on")
    series = np.asarray(series)
    kept_ids = [ids[i] for i in keep] if ids is not None else list(keep)
    return series[keep], kept_ids


# -- cohort assembly --------------------------------------------------------


def build_cohort(raw: RawCohort, window_minutes, aggregators=None) -> CohortDataset:
    """Aggregate, impute and align every view into a :class:`CohortDataset`."""
    variables = raw.variables
    aggregated = aggregate(raw, window_minutes, aggregators, variables)
    medians = cohort_medians(aggregated)
    filled = [impute(s, medians, variables) for s in aggregated]
    ids = [s.patient_id for s in filled]
    keys = sorted({key for p in ids for key in raw.labels[p]})
    labels = {}
    for key in keys:
        missing = [p for p in ids if key not in raw.labels[p]]
        if missing:
            log.warning("label %s missing for %d patient(s); treated as 0", key, len(missing))
        labels[key] = np.array([raw.labels[p].get(key, 0) for p in ids], dtype=np.int64)
    return CohortDataset(
        ids,
        np.stack([s.matrix for s in filled]),
        np.stack([s.mask for s in filled]),
        np.stack([raw.statics[p] for p in ids]),
        labels,
        variables,
        list(raw.static_names),
    )


def append_dynamic_summaries(cohort: CohortDataset) -> CohortDataset:
    """Add per-variable mean/min/max of the (unscaled) 24 h series to the statics."""
    s = cohort.series
    extra = np.concatenate([s.mean(axis=1), s.min(axis=1), s.max(axis=1)], axis=1)
    names = [f"{stat}_{v}" for stat in ("mean", "min", "max") for v in cohort.dynamic_names]
    return CohortDataset(cohort.patient_ids, cohort.series, cohort.mask,
                         np.concatenate([cohort.statics, extra], axis=1), cohort.labels,
                         cohort.dynamic_names, list(cohort.static_names) + names)
