"""
ROC analysis, score fusion and the two-stage decision
=====================================================

Works entirely on made-up probabilities, so it runs in a second.
"""

import numpy as np

from respvariant.evaluation import confusion_3class, fuse, hierarchical_classify, roc_auc, youden_threshold
from respvariant.ingest import Category

# %%
# AUC from the trapezoid under the ROC curve equals the fraction of
# positive/negative pairs ranked correctly (ties count half).
rep = roc_auc([0.8, 0.4, 0.6, 0.2], [1, 1, 0, 0])
print("AUC:", rep.auc, " sensitivity at 95% specificity:", rep.sensitivity_at_95_specificity)

# %%
# Nine noisy "modalities" that each see the label through independent noise.
rng = np.random.default_rng(0)
n = 300
y = rng.integers(0, 2, n)
per_mod = [1 / (1 + np.exp(-(1.0 * (2 * y - 1) + rng.normal(0, 2.0, n)))) for _ in range(9)]
singles = [roc_auc(p, y).auc for p in per_mod]
fused = np.array([fuse(col) for col in zip(*per_mod)])
print(f"single-modality AUC {min(singles):.3f}..{max(singles):.3f}, fused {roc_auc(fused, y).auc:.3f}")

# %%
# Two binary decisions make a three-way one: positive vs healthy first,
# then omicron vs delta for anything called positive.
classes = [Category.HEALTHY, Category.DELTA, Category.OMICRON]
cats = [classes[k] for k in rng.integers(0, 3, n)]
is_pos = np.array([c is not Category.HEALTHY for c in cats])
is_omi = np.array([c is Category.OMICRON for c in cats])
p_pos = np.clip(0.5 + 0.3 * (2 * is_pos - 1) + rng.normal(0, 0.15, n), 0, 1)
p_omi = np.clip(0.5 + 0.3 * (2 * is_omi - 1) + rng.normal(0, 0.15, n), 0, 1)

theta1 = youden_threshold(p_pos, is_pos)
theta2 = youden_threshold(p_omi[is_pos], is_omi[is_pos])
pred = [hierarchical_classify(a, b, theta1, theta2) for a, b in zip(p_pos, p_omi)]
cm = confusion_3class(pred, cats)
print(f"thresholds {theta1:.3f}, {theta2:.3f}")
print("rows = truth (healthy, delta, omicron), columns = prediction")
print(cm.counts)
print("diagonally dominant:", cm.diagonally_dominant)
