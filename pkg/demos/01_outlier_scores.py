"""Reconstruction error as an outlier score.

Train the attention autoencoder on negative-outcome series only, then look
at how far apart the two classes land and where the attention goes for a
patient whose vitals drift late in the day.

    python3 demos/01_outlier_scores.py [max_epochs]
"""
import sys

import numpy as np

from kdop import dynamic_kd
from kdop.data import fit_scaler, stratified_group_kfold
from kdop.numerics import make_rng
from kdop.synth import SynthConfig, generate

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 300

cohort, truth = generate(SynthConfig())  # 400 patients, 24 hourly steps, 6 vitals
y = cohort.label("mortality", 5)
print(f"{len(cohort)} patients, {y.sum()} positive; drifting vitals {truth['drifted_features']}")

# hold out a third of the cohort, scale with the training part only
folds = stratified_group_kfold(y, cohort.patient_ids, 3, make_rng(0))
test = folds.index_of(cohort.patient_ids, 0)
train = np.setdiff1d(np.arange(len(cohort)), test)
scaler = fit_scaler(cohort.series[train])
X_train = scaler.transform(cohort.series[train])
X_test = scaler.transform(cohort.series[test])

neg = X_train[y[train] == 0]  # the autoencoder never sees a positive
cfg = dynamic_kd.TrainConfig(max_epochs=epochs, patience=min(50, epochs - 1))
res = dynamic_kd.train(neg, cfg)
print(f"trained {len(res.log)} epochs, best holdout loss {res.log[res.best_epoch - 1]['holdout_loss']:.4f}")

scores = dynamic_kd.score(res.model, X_test)
err, lab = scores.error, y[test]
silent = np.isin(np.array(cohort.patient_ids)[test], truth["silent_positive_ids"])
print(f"median error  negatives {np.median(err[lab == 0]):.4f}")
print(f"              positives {np.median(err[lab == 1]):.4f}"
      f"  (ratio {np.median(err[lab == 1]) / np.median(err[lab == 0]):.1f}x)")
print(f"              silent positives (static signal only) {np.median(err[silent]):.4f}")

# attention of the worst-reconstructed patient: rows are hours, columns vitals
worst = int(np.argmax(err))
A = scores.attention[worst]
print(f"\nattention for {cohort.patient_ids[test[worst]]} (error {err[worst]:.3f}); "
      "each column sums to 1")
print("hour  " + " ".join(f"{n[:7]:>7}" for n in cohort.dynamic_names))
for t in range(A.shape[0]):
    print(f"{t:4d}  " + " ".join(f"{a:7.3f}" for a in A[t]))
