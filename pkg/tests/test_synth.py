import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kdop.data import build_cohort, load_cohort
from kdop.errors import ConfigError
from kdop.synth import SynthConfig, generate, n_positives, write_csvs


def test_positive_count_five_percent():
    cohort, truth = generate(SynthConfig(positive_rate=0.05))
    assert cohort.label("mortality", 5).sum() == 20
    assert len(truth["positive_ids"]) == 20


@settings(max_examples=30, deadline=None)
@given(st.integers(50, 300), st.floats(0.02, 0.45))
def test_positive_count_law(n, rate):
    cfg = SynthConfig(n_patients=n, positive_rate=rate, T=8, v=2, u=2)
    if n * rate < 5:
        with pytest.raises(ConfigError):
            generate(cfg)
        return
    cohort, _ = generate(cfg)
    assert cohort.label("mortality", 5).sum() == round(n * rate) == n_positives(cfg)


def test_same_seed_bit_identical():
    a, ta = generate(SynthConfig(seed=3))
    b, tb = generate(SynthConfig(seed=3))
    assert a.series.tobytes() == b.series.tobytes()
    assert a.statics.tobytes() == b.statics.tobytes()
    assert ta == tb
    c, _ = generate(SynthConfig(seed=4))
    assert c.series.tobytes() != a.series.tobytes()


def test_negatives_carry_no_drift():
    cohort, _ = generate(SynthConfig(n_patients=1000))
    y = cohort.label("mortality", 5)
    X = cohort.series[y == 0]
    q = X.shape[1] // 4
    delta = X[:, -q:].mean(axis=1) - X[:, :q].mean(axis=1)
    se = delta.std(axis=0, ddof=1) / np.sqrt(len(delta))
    assert np.all(np.abs(delta.mean(axis=0)) <= 3 * se)


def test_planted_signatures_match_truth():
    cohort, truth = generate(SynthConfig())
    y = cohort.label("mortality", 5)
    silent = set(truth["silent_positive_ids"])
    loud = np.array([p in set(truth["positive_ids"]) and p not in silent for p in cohort.patient_ids])
    X = cohort.series
    late = X[:, -6:].mean(axis=1) - X[:, :6].mean(axis=1)
    for j in range(X.shape[2]):
        gap = late[loud, j].mean() - late[y == 0, j].mean()
        if j in truth["drifted_features"]:
            assert gap > 2.0
        else:
            assert abs(gap) < 0.5
    assert len(truth["drifted_features"]) == 2
    for j in range(cohort.statics.shape[1]):
        gap = cohort.statics[y == 1, j].mean() - cohort.statics[y == 0, j].mean()
        assert (gap > 0.75) == (j in truth["shifted_static_features"])


def test_null_signal_classes_share_distribution():
    cohort, _ = generate(SynthConfig(drift_magnitude=0.0, static_signal_strength=0.0, n_patients=2000))
    y = cohort.label("mortality", 5)
    for arr in (cohort.series.mean(axis=1), cohort.statics):
        gap = arr[y == 1].mean(axis=0) - arr[y == 0].mean(axis=0)
        se = np.sqrt(arr[y == 1].var(axis=0) / y.sum() + arr[y == 0].var(axis=0) / (y == 0).sum())
        assert np.all(np.abs(gap) <= 4 * se)


def test_csv_round_trip(tmp_path):
    cfg = SynthConfig(n_patients=60, T=12)
    cohort, truth = generate(cfg)
    paths = write_csvs(cohort, tmp_path, window_minutes=120, truth=truth)
    raw = load_cohort(paths["dynamic"], paths["static"], paths["labels"])
    back = build_cohort(raw, 120)
    assert back.patient_ids == cohort.patient_ids
    assert np.array_equal(back.series, cohort.series)
    assert np.array_equal(back.statics, cohort.statics)
    for key, y in cohort.labels.items():
        assert np.array_equal(back.labels[key], y)
    assert json.loads(paths["truth"].read_text())["drifted_features"] == truth["drifted_features"]


def test_csv_dropout_thins_observations(tmp_path):
    cohort, _ = generate(SynthConfig(n_patients=50, T=12))
    paths = write_csvs(cohort, tmp_path, window_minutes=120, dropout=0.5, seed=1)
    rows = paths["dynamic"].read_text().count("\n") - 1
    full = 50 * 12 * cohort.series.shape[2]
    assert 0.4 * full < rows < 0.6 * full


@pytest.mark.parametrize("kwargs", [dict(T=4), dict(positive_rate=0.6), dict(n_patients=20),
                                    dict(drift_magnitude=-1.0)])
def test_invalid_configs(kwargs):
    with pytest.raises(ConfigError):
        generate(SynthConfig(**kwargs))
