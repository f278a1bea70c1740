"""Gradient-boosted probability model built on the tree kernels.

The model object keeps the stacked per-tree node arrays (compact, cheap to
slice) and the full training score path, so any truncation of the ensemble
can be read back without re-traversing trees.  ``predict_probability`` on
held-out rows routes through the active kernel; probabilities always pass
through the single ``probability_from_score`` mapping so fitted values,
re-predictions, and balance evaluations agree bit for bit.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from ._accel import accel_mode

SCORE_CLIP = 37.0
PROB_CLIP = 1e-12


def probability_from_score(score):
    """Map additive scores to clipped probabilities via the logistic link."""
    s = np.clip(score, -SCORE_CLIP, SCORE_CLIP)
    p = 1.0 / (1.0 + np.exp(-s))
    return np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)


@dataclass(frozen=True)
class Tree:
    """One regression tree in array form.

    ``feature[m] == -1`` marks a leaf; otherwise rows with
    ``x[feature[m]] <= threshold[m]`` go to ``left[m]`` and the rest to
    ``right[m]``.  Node 0 is the root.  ``value`` is nonzero only at leaves.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_nodes: int

    def leaf_value(self, x_row):
        m = 0
        while self.feature[m] != -1:
            if x_row[self.feature[m]] <= self.threshold[m]:
                m = self.left[m]
            else:
                m = self.right[m]
        return self.value[m]


@dataclass
class BoostedModel:
    """A fitted boosting run: baseline score plus shrunken tree increments."""

    baseline: float
    shrinkage: float
    covariate_labels: tuple
    node_features: np.ndarray = field(repr=False)
    node_thresholds: np.ndarray = field(repr=False)
    node_left: np.ndarray = field(repr=False)
    node_right: np.ndarray = field(repr=False)
    node_values: np.ndarray = field(repr=False)
    nodes_per_tree: np.ndarray = field(repr=False)
    score_path: np.ndarray = field(repr=False)

    @property
    def n_trees(self):
        return self.node_features.shape[0]

    @cached_property
    def trees(self):
        out = []
        for j in range(self.n_trees):
            c = int(self.nodes_per_tree[j])
            out.append(Tree(
                feature=self.node_features[j, :c],
                threshold=self.node_thresholds[j, :c],
                left=self.node_left[j, :c],
                right=self.node_right[j, :c],
                value=self.node_values[j, :c],
                n_nodes=c,
            ))
        return tuple(out)

    def training_scores(self, n_trees):
        """Scores of the training rows after the first ``n_trees`` trees."""
        if not 0 <= n_trees <= self.n_trees:
            raise ValueError(
                f"n_trees must be in [0, {self.n_trees}], got {n_trees}")
        return self.score_path[n_trees]

    def predict_scores(self, covariates, n_trees=None):
        if n_trees is None:
            n_trees = self.n_trees
        if not 0 <= n_trees <= self.n_trees:
            raise ValueError(
                f"n_trees must be in [0, {self.n_trees}], got {n_trees}")
        X = np.ascontiguousarray(covariates, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.covariate_labels):
            raise ValueError(
                f"covariates must have shape (n, {len(self.covariate_labels)})")
        return _kernels.predict_scores(
            self.node_features, self.node_thresholds, self.node_left,
            self.node_right, self.node_values, n_trees, self.baseline,
            self.shrinkage, X)


def fit_boosted_model(covariates, t, max_trees, shrinkage, max_depth=3,
                      min_node=10, covariate_labels=None):
    """Grow ``max_trees`` depth-limited trees by stagewise boosting.

    ``t`` is the 0/1 response.  The baseline score is the logit of the
    response mean.  The full score path is retained so iteration selection
    can happen after the fact without refitting.
    """
    X = np.ascontiguousarray(covariates, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("covariates must be a 2-d array")
    n, nfeat = X.shape
    tvec = np.ascontiguousarray(t, dtype=np.float64)
    if tvec.shape != (n,):
        raise ValueError("t must have one entry per covariate row")
    if max_trees < 0:
        raise ValueError("max_trees must be nonnegative")
    if not 0.0 < shrinkage <= 1.0:
        raise ValueError("shrinkage must be in (0, 1]")
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    if min_node < 1:
        raise ValueError("min_node must be at least 1")
    if covariate_labels is None:
        covariate_labels = tuple(f"v{j + 1}" for j in range(nfeat))
    covariate_labels = tuple(covariate_labels)
    if len(covariate_labels) != nfeat:
        raise ValueError("covariate_labels must match the number of columns")

    tbar = float(np.mean(tvec))
    if not 0.0 < tbar < 1.0:
        raise ValueError("t must contain both classes")
    baseline = float(np.log(tbar / (1.0 - tbar)))

    order = np.empty((nfeat, n), dtype=np.int64)
    for f in range(nfeat):
        order[f] = np.argsort(X[:, f], kind="stable")

    max_nodes = (1 << (max_depth + 1)) - 1
    feat = np.full((max_trees, max_nodes), -1, dtype=np.int64)
    thr = np.zeros((max_trees, max_nodes))
    left = np.full((max_trees, max_nodes), -1, dtype=np.int64)
    right = np.full((max_trees, max_nodes), -1, dtype=np.int64)
    leafval = np.zeros((max_trees, max_nodes))
    nnodes = np.zeros(max_trees, dtype=np.int64)
    path = np.empty((max_trees + 1, n))

    # One stagewise step per iteration: the tree kernel sees only the
    # gradient and curvature of the Bernoulli log-likelihood, so score ->
    # probability happens in exactly one place for both kernel builds.
    score = np.full(n, baseline)
    path[0] = score
    for k in range(max_trees):
        p = probability_from_score(score)
        g = tvec - p
        h = p * (1.0 - p)
        (feat[k], thr[k], left[k], right[k], leafval[k], nnodes[k],
         leaf_of) = _kernels.fit_tree(X, order, g, h, max_depth, min_node)
        score = score + shrinkage * leafval[k, leaf_of]
        path[k + 1] = score

    return BoostedModel(
        baseline=baseline,
        shrinkage=shrinkage,
        covariate_labels=covariate_labels,
        node_features=feat,
        node_thresholds=thr,
        node_left=left,
        node_right=right,
        node_values=leafval,
        nodes_per_tree=nnodes,
        score_path=path,
    )


def gbm_predict(model, covariates, n_trees=None):
    """Predicted response probabilities from the first ``n_trees`` trees."""
    return probability_from_score(model.predict_scores(covariates, n_trees))


def bernoulli_deviance(t, p):
    """Mean negative Bernoulli log-likelihood of probabilities ``p``."""
    t = np.asarray(t, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    return float(-np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p)))


def dump_model(model, fh):
    """Write a plain-text description of every tree for diffing."""
    fh.write(f"baseline {model.baseline!r}\n")
    fh.write(f"shrinkage {model.shrinkage!r}\n")
    fh.write(f"covariates {' '.join(model.covariate_labels)}\n")
    fh.write(f"n_trees {model.n_trees}\n")
    for j, tree in enumerate(model.trees):
        fh.write(f"tree {j} nodes {tree.n_nodes}\n")
        for m in range(tree.n_nodes):
            if tree.feature[m] == -1:
                fh.write(f"  node {m} leaf value {float(tree.value[m])!r}\n")
            else:
                fh.write(
                    f"  node {m} split {model.covariate_labels[tree.feature[m]]}"
                    f" <= {float(tree.threshold[m])!r}"
                    f" left {tree.left[m]} right {tree.right[m]}\n")
