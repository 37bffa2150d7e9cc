"""
Gradient-boosted trees on a depth-order toy
===========================================

Whether a person is in front of or behind an object is a comparison of two
depth values.  Axis-aligned trees can only approximate that diagonal
boundary, but a couple hundred small trees get close.
"""

import numpy as np

from relpipe.boosting import BoostingParams, train_boosted

rng = np.random.default_rng(3)
n = 600
subj = rng.uniform(1, 10, n)
obj = rng.uniform(1, 10, n)
noise = rng.normal(size=(n, 3))
X = np.column_stack([subj, obj, noise])
y = (subj > obj).astype(int)          # 0: in front, 1: behind

train, test = slice(0, 400), slice(400, None)
for rounds in (0, 10, 50, 200):
    model = train_boosted(X[train], y[train], BoostingParams(rounds=rounds))
    acc = np.mean(model.predict(X[test]) == y[test])
    print(f"rounds={rounds:3d}  train loss {model.train_loss[-1]:.4f}  held-out acc {acc:.3f}")

# with no rounds the model is just the class priors
prior = train_boosted(X[train], y[train], BoostingParams(rounds=0))
print("priors:", np.bincount(y[train]) / 400, "predicted:", prior.predict_proba(X[:1])[0])

# the first split should look at a depth column
model = train_boosted(X[train], y[train], BoostingParams(rounds=1))
print("root split feature of round 1:", [int(t.feature[0]) for t in model.trees[0]])
