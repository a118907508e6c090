"""Seeded synthetic cohorts with planted positive-outcome signatures.

Negatives follow a coupled smooth process: every patient draws a random
phase for each of ``v`` latent sinusoids (fixed cohort-wide periods), and a
fixed ``v x v`` coupling matrix mixes them into the observed features, plus
Gaussian noise. Positives additionally drift upward on a cohort-wide subset
of ``ceil(v / 3)`` features from ``anomaly_onset * T`` onward, and carry a
shift on two designated static features.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import CohortDataset
from .errors import ConfigError
from .numerics import make_rng


@dataclass
class SynthConfig:
    n_patients: int = 400
    T: int = 24
    v: int = 6
    u: int = 5
    positive_rate: float = 0.1
    anomaly_onset: float = 0.5
    drift_magnitude: float = 6.0
    # per-positive drift multiplier is uniform on [1 - spread, 1 + spread]
    drift_spread: float = 0.6
    # positives with no dynamic signature (static shift only)
    silent_fraction: float = 0.25
    static_signal_strength: float = 2.0
    noise_sd: float = 0.02
    independent_phases: bool = False
    seed: int = 42
    outcome: str = "mortality"
    intervals: tuple = (5, 7, 14, 30)

    def validate(self):
        if self.n_patients * self.positive_rate < 5:
            raise ConfigError("n_patients * positive_rate must be at least 5")
        if not 0 < self.positive_rate < 0.5:
            raise ConfigError("positive_rate must lie in (0, 0.5)")
        if self.T < 8:
            raise ConfigError("T must be at least 8")
        if self.v < 1 or self.u < 2:
            raise ConfigError("need v >= 1 dynamic and u >= 2 static features")
        if not 0 <= self.anomaly_onset < 1:
            raise ConfigError("anomaly_onset must be a fraction of T in [0, 1)")
        if not 0 <= self.silent_fraction <= 1:
            raise ConfigError("silent_fraction must lie in [0, 1]")
        if not 0 <= self.drift_spread <= 1:
            raise ConfigError("drift_spread must lie in [0, 1]")
        if self.drift_magnitude < 0 or self.static_signal_strength < 0 or self.noise_sd < 0:
            raise ConfigError("magnitudes must be non-negative")


def n_positives(config: SynthConfig) -> int:
    return int(math.floor(config.n_patients * config.positive_rate + 0.5))


def generate(config: SynthConfig | None = None):
    """Return ``(cohort, truth)``; ``truth`` records what was planted."""
    config = config or SynthConfig()
    config.validate()
    rng = make_rng(config.seed)
    n, T, v, u = config.n_patients, config.T, config.v, config.u

    periods = rng.uniform(T / 2.0, 2.0 * T, size=v)
    coupling = np.eye(v) + 0.5 * rng.normal(size=(v, v)) / np.sqrt(v)
    # unit-variance features under uniform phases
    coupling /= np.sqrt((coupling**2).sum(axis=1, keepdims=True))
    drifted = np.sort(rng.choice(v, size=math.ceil(v / 3), replace=False))
    shifted_static = np.sort(rng.choice(u, size=2, replace=False))

    n_pos = n_positives(config)
    labels = np.zeros(n, dtype=np.int64)
    labels[rng.choice(n, size=n_pos, replace=False)] = 1

    t = np.arange(T)
    phase_dims = v if config.independent_phases else 1
    phases = np.broadcast_to(rng.uniform(0.0, 2 * np.pi, size=(n, phase_dims)), (n, v))
    latent = np.sqrt(2.0) * np.sin(2 * np.pi * t[None, :, None] / periods[None, None, :]
                                   + phases[:, None, :])
    series = latent @ coupling.T + config.noise_sd * rng.normal(size=(n, T, v))

    onset = int(math.floor(config.anomaly_onset * T))
    ramp = np.clip((t - onset + 1) / (T - onset), 0.0, None)
    severity = rng.uniform(1 - config.drift_spread, 1 + config.drift_spread, size=n)
    pos = labels == 1
    pos_idx = np.flatnonzero(pos)
    silent = rng.choice(pos_idx, size=int(math.floor(config.silent_fraction * n_pos + 0.5)),
                        replace=False)
    severity[silent] = 0.0
    drift = config.drift_magnitude * severity[pos, None] * ramp[None, :]
    for j in drifted:
        series[pos, :, j] += drift

    statics = rng.normal(size=(n, u))
    # mild correlation between neighbouring static features
    statics[:, 1:] += 0.3 * statics[:, :-1]
    for j in shifted_static:
        statics[pos, j] += config.static_signal_strength

    ids = [f"p{i:04d}" for i in range(n)]
    cohort = CohortDataset(
        patient_ids=ids,
        series=series,
        mask=np.ones(series.shape, dtype=bool),
        statics=statics,
        labels={(config.outcome, d): labels.copy() for d in config.intervals},
        dynamic_names=[f"vital_{j}" for j in range(v)],
        static_names=[f"static_{j}" for j in range(u)],
    )
    truth = {
        "drifted_features": drifted.tolist(),
        "onset_step": onset,
        "shifted_static_features": shifted_static.tolist(),
        "positive_ids": [ids[i] for i in pos_idx],
        "silent_positive_ids": sorted(ids[i] for i in silent),
        "periods": periods.tolist(),
        "config": asdict(config),
    }
    return cohort, truth


def write_csvs(cohort: CohortDataset, directory, window_minutes: int = 60,
               dropout: float = 0.0, seed: int = 0, truth: dict | None = None):
    """Write the three input CSVs (and ``truth.json`` if given).

    Each time step becomes one observation at the centre of its window;
    ``dropout`` removes observations uniformly at random.
    Returns the dict of written paths.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rng = make_rng(seed)
    paths = {"dynamic": d / "dynamic.csv", "static": d / "static.csv", "labels": d / "labels.csv"}
    step_s = window_minutes * 60
    n, T, v = cohort.series.shape
    with open(paths["dynamic"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "timestamp_s", "variable", "value"])
        keep = rng.random((n, T, v)) >= dropout
        for p, pid in enumerate(cohort.patient_ids):
            for t in range(T):
                ts = t * step_s + step_s // 2
                for j, name in enumerate(cohort.dynamic_names):
                    if keep[p, t, j]:
                        w.writerow([pid, ts, name, repr(float(cohort.series[p, t, j]))])
    with open(paths["static"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", *cohort.static_names])
        for p, pid in enumerate(cohort.patient_ids):
            w.writerow([pid, *(repr(float(x)) for x in cohort.statics[p])])
    with open(paths["labels"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "outcome", "interval_days", "label"])
        for (outcome, days), y in sorted(cohort.labels.items()):
            for pid, lab in zip(cohort.patient_ids, y):
                w.writerow([pid, outcome, days, int(lab)])
    if truth is not None:
        paths["truth"] = d / "truth.json"
        paths["truth"].write_text(json.dumps(truth, indent=2, sort_keys=True))
    return paths
