"""Why PR-AUC is the headline metric for rare outcomes.

Hold a scorer fixed and change only how many negatives there are. ROC-AUC
does not move (it compares positives with negatives pairwise), while
PR-AUC drops as negatives pile up, because every false positive dilutes
precision.
"""
import numpy as np

from kdop.metrics import pr_auc, roc_auc
from kdop.numerics import make_rng

rng = make_rng(1)
n_pos = 50
pos = rng.normal(1.5, 1.0, n_pos)
neg_pool = rng.normal(0.0, 1.0, 20000)

print(f"{'negatives':>10}{'rate':>8}{'ROC-AUC':>10}{'PR-AUC':>9}")
for n_neg in (50, 200, 1000, 5000, 20000):
    rocs, prs = [], []
    for _ in range(20):
        neg = rng.choice(neg_pool, n_neg, replace=False)
        y = np.r_[np.ones(n_pos, int), np.zeros(n_neg, int)]
        s = np.r_[pos, neg]
        rocs.append(roc_auc(y, s))
        prs.append(pr_auc(y, s))
    print(f"{n_neg:10d}{n_pos / (n_pos + n_neg):8.3f}{np.mean(rocs):10.3f}{np.mean(prs):9.3f}")
