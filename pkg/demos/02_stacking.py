"""One rotation of the fold protocol, and what stacking adds.

The autoencoder (trained on train-fold negatives) scores the validation
fold; those errors become sample weights for a boosted classifier on the
validation statics. Both the error-only model and the stacked model are
then judged on the untouched test fold.

    python3 demos/02_stacking.py [max_epochs]
"""
import sys
from pathlib import Path

from kdop import pipeline
from kdop.config import PipelineConfig, apply_overrides
from kdop.data import append_dynamic_summaries
from kdop.metrics import module_contribution
from kdop.static_op import feature_importance
from kdop.svg import render
from kdop.synth import generate

epochs = sys.argv[1] if len(sys.argv) > 1 else "300"
cfg = apply_overrides(PipelineConfig(), {"train.max_epochs": epochs,
                                         "train.patience": str(min(50, int(epochs) - 1))})

cohort, truth = generate(cfg.synth)
cohort = append_dynamic_summaries(cohort)  # mean/min/max of each vital join the statics
folds = pipeline.assign_folds(cohort, cfg)
roles = pipeline.rotation_roles(cohort, folds, 0)
fold = pipeline.run_fold(cohort, roles, cfg, rotation=0)

print(f"{'':12}{'PR-AUC':>8}{'ROC-AUC':>9}{'recall':>8}{'F1':>7}{'gamma':>7}")
for name, r in (("Dynamic-KD", fold.dynamic_kd), ("KD-OP", fold.kd_op)):
    print(f"{name:12}{r.pr_auc:8.3f}{r.roc_auc:9.3f}{r.macro_recall:8.3f}{r.macro_f1:7.3f}{r.gamma:7.3f}")

w_dyn, w_stat = module_contribution(fold.dynamic_kd.pr_auc, fold.kd_op.pr_auc)
print(f"\nmodule contribution: dynamic {w_dyn:.2f}, static {w_stat:.2f}")

imp = feature_importance(fold.booster)
top = sorted(zip(cohort.static_names, imp), key=lambda t: -t[1])[:5]
print("top static features:", ", ".join(f"{n} {v:.2f}" for n, v in top))
print("planted static shift on:", [cohort.static_names[j] for j in truth["shifted_static_features"]])

# justification for the highest-risk test patient
art = pipeline.FoldArtifacts.from_result(fold)
reports = [pipeline.explain(p, cohort, [art], window_minutes=60) for p in fold.roles["test"]]
rep = max(reports, key=lambda r: r.probability)
pid = rep.patient_id
out = Path("demo_out")
out.mkdir(exist_ok=True)
(out / f"{pid}.svg").write_text(render(rep))
(out / f"{pid}.json").write_text(rep.to_json())
print(f"\n{pid}: p={rep.probability:.3f}, predicted {rep.label}; wrote {out / (pid + '.svg')}")
