"""Honest midpoint forests with empirical score-window splits.

Trees are grown on a partitioning sample and fitted on a disjoint
estimation sample.  Each node draws a fresh candidate set of ceil(gamma*d)
coordinates, computes the empirical midpoint impurity decrease for each
candidate, and splits a coordinate drawn uniformly from the score window

    { j : gain_j >= 2^(-2w) * best gain }        (best gain > 0)

falling back to all admissible candidates when no candidate improves, and
to a leaf when no split is admissible at all (minimum-leaf rule).  w = 0 is
greedy empirical CART with uniform tie-breaking; w = inf keeps every
candidate with strictly positive gain.

Cells are dyadic boxes: a depth-t cell has side length 2^(-k_j) along
coordinate j where k_j counts the j-splits on the path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .environment import ModelConfig

__all__ = [
    "Dataset",
    "generate_data",
    "TreeNode",
    "empirical_gain",
    "grow_tree",
    "fit_leaves",
    "predict_tree",
    "fit_and_predict",
    "ExperimentGrid",
    "ForestParams",
    "heatmap_experiment",
    "HEATMAP_COLUMNS",
]


@dataclass
class Dataset:
    X: np.ndarray  # (n, d), entries in [0, 1]
    y: np.ndarray  # (n,)

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ValueError("X must be (n, d) with matching y")


def generate_data(model: ModelConfig, n: int, rng: np.random.Generator) -> Dataset:
    """Uniform covariates on [0,1]^d with a linear signal plus Gaussian noise."""
    if n < 1:
        raise ValueError("need n >= 1")
    X = rng.random((n, model.d))
    y = X[:, : model.s] @ model.beta_float()
    sigma = math.sqrt(float(model.sigma0_sq))
    if sigma > 0:
        y = y + rng.normal(0.0, sigma, size=n)
    return Dataset(X=X, y=y)


@dataclass
class TreeNode:
    lo: np.ndarray
    hi: np.ndarray
    depth: int
    split_coord: int | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.split_coord is None

    def leaves(self):
        if self.is_leaf:
            yield self
        else:
            yield from self.left.leaves()
            yield from self.right.leaves()


def _biased_var(v: np.ndarray) -> float:
    return float(v.var()) if len(v) else 0.0


def _gains_for(X, y, idx, lo, hi, coords, min_leaf) -> np.ndarray:
    """Empirical midpoint impurity decrease per candidate; -inf when a child
    would fall below the minimum leaf size."""
    coords = np.asarray(coords, dtype=np.intp)
    if len(idx) < 2 * min_leaf:
        return np.full(len(coords), -np.inf)
    yv = y[idx]
    n = len(idx)
    mids = (lo[coords] + hi[coords]) / 2.0
    left = X[np.ix_(idx, coords)] < mids[None, :]
    n_l = left.sum(axis=0)
    n_r = n - n_l
    sum_l = yv @ left
    sq_l = (yv * yv) @ left
    sum_all = float(yv.sum())
    sq_all = float((yv * yv).sum())
    parent_var = sq_all / n - (sum_all / n) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        var_l = sq_l / n_l - (sum_l / n_l) ** 2
        sum_r = sum_all - sum_l
        sq_r = sq_all - sq_l
        var_r = sq_r / n_r - (sum_r / n_r) ** 2
        gains = parent_var - (n_l / n) * var_l - (n_r / n) * var_r
    gains = np.where((n_l < min_leaf) | (n_r < min_leaf), -np.inf, gains)
    return gains


def empirical_gain(data: Dataset, lo, hi, j: int, min_leaf: int) -> float:
    """Midpoint impurity decrease of coordinate j on the given cell.

    Returns -inf when the split is inadmissible (a child below ``min_leaf``,
    or the cell holds fewer than two points per child).
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    inside = np.all((data.X >= lo) & (data.X < hi) | ((hi == 1.0) & (data.X == 1.0)), axis=1)
    idx = np.flatnonzero(inside)
    return float(_gains_for(data.X, data.y, idx, lo, hi, [j], min_leaf)[0])


def _window_members(gains: np.ndarray, w: float) -> np.ndarray:
    """Indices admitted by the score window (positions into the candidate list)."""
    finite = np.isfinite(gains)
    if not finite.any():
        return np.empty(0, dtype=int)
    gmax = gains[finite].max()
    if gmax <= 0:
        return np.flatnonzero(finite)
    if w == math.inf:
        return np.flatnonzero(finite & (gains > 0))
    thr = 2.0 ** (-2.0 * w) * gmax
    return np.flatnonzero(finite & (gains >= thr - 1e-15 * abs(thr)))


def grow_tree(
    split_data: Dataset,
    d: int,
    w: float,
    gamma: float,
    ell: int,
    min_leaf: int,
    rng: np.random.Generator,
) -> TreeNode:
    """Grow the dyadic partition of one tree from the partitioning sample."""
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    if w < 0:
        raise ValueError("window width must be nonnegative")
    m = math.ceil(gamma * d)
    X, y = split_data.X, split_data.y

    def build(idx: np.ndarray, lo: np.ndarray, hi: np.ndarray, depth: int) -> TreeNode:
        node = TreeNode(lo=lo, hi=hi, depth=depth)
        if depth >= ell:
            return node
        coords = rng.choice(d, size=m, replace=False)
        gains = _gains_for(X, y, idx, lo, hi, coords, min_leaf)
        window = _window_members(gains, w)
        if len(window) == 0:
            return node
        j = int(coords[window[rng.integers(len(window))]])
        mid = (lo[j] + hi[j]) / 2.0
        go_left = X[idx, j] < mid
        lo_r = lo.copy()
        lo_r[j] = mid
        hi_l = hi.copy()
        hi_l[j] = mid
        node.split_coord = j
        node.left = build(idx[go_left], lo, hi_l, depth + 1)
        node.right = build(idx[~go_left], lo_r, hi, depth + 1)
        return node

    root_idx = np.arange(len(y))
    return build(root_idx, np.zeros(d), np.ones(d), 0)


def _route(tree: TreeNode, X: np.ndarray):
    """Assign each row to its leaf; yields (leaf, index array) pairs."""
    stack = [(tree, np.arange(len(X)))]
    while stack:
        node, idx = stack.pop()
        if node.is_leaf:
            yield node, idx
            continue
        j = node.split_coord
        mid = (node.lo[j] + node.hi[j]) / 2.0
        go_left = X[idx, j] < mid
        stack.append((node.left, idx[go_left]))
        stack.append((node.right, idx[~go_left]))


def fit_leaves(tree: TreeNode, est_data: Dataset) -> TreeNode:
    """Honest fit: leaf values are estimation-sample means, 0 on empty leaves."""
    for leaf, idx in _route(tree, est_data.X):
        leaf.value = float(est_data.y[idx].mean()) if len(idx) else 0.0
    return tree


def predict_tree(tree: TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X))
    for leaf, idx in _route(tree, X):
        out[idx] = leaf.value
    return out


def fit_and_predict(trees, est_data: Dataset, test_X: np.ndarray) -> np.ndarray:
    """Equal-weight forest prediction with honest leaf values."""
    trees = list(trees)
    total = np.zeros(len(test_X))
    for tree in trees:
        fit_leaves(tree, est_data)
        total += predict_tree(tree, test_X)
    return total / len(trees)


# ---------------------------------------------------------------------------
# the (gamma, w) sweep


HEATMAP_COLUMNS = ("gamma", "w", "snr", "rep_count", "mean_mse", "se")


@dataclass
class ForestParams:
    n0: int = 500  # size of each of the partitioning and estimation samples
    ell: int = 5
    min_leaf: int = 5
    B: int = 200
    n_test: int = 100


@dataclass
class ExperimentGrid:
    gamma_grid: tuple = (0.02, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0)
    w_grid: tuple = (0.0, 0.5, 1.0, 2.0, 4.0, 8.0, math.inf)
    reps: int = 20

    def __post_init__(self):
        if not self.gamma_grid or not self.w_grid:
            raise ValueError("grids must be nonempty")
        if any(not 0 < g <= 1 for g in self.gamma_grid):
            raise ValueError("gamma values must lie in (0, 1]")
        if self.reps < 1:
            raise ValueError("need at least one replicate")


def heatmap_experiment(
    grid: ExperimentGrid, model: ModelConfig, params: ForestParams, seed: int
) -> list:
    """Mean test error of the honest forest over the (gamma, w) grid.

    Data and tree randomness are seeded per replicate only, so every grid
    cell sees identical samples and identical per-tree mask streams (paired
    comparisons).  The error is measured against the noiseless regression
    surface on an independent test sample.  Returns one row dict per cell
    with the ``HEATMAP_COLUMNS`` schema.
    """
    sigma = math.sqrt(float(model.sigma0_sq))
    snr = float(np.linalg.norm(model.beta_float()) / sigma) if sigma > 0 else math.inf
    cells = [(g, w) for g in grid.gamma_grid for w in grid.w_grid]
    errors = {cell: [] for cell in cells}
    for rep in range(grid.reps):
        split = generate_data(model, params.n0, np.random.default_rng([seed, rep, 1]))
        est = generate_data(model, params.n0, np.random.default_rng([seed, rep, 2]))
        test_X = np.random.default_rng([seed, rep, 3]).random((params.n_test, model.d))
        mu_test = test_X[:, : model.s] @ model.beta_float()
        for cell in cells:
            g, w = cell
            preds = np.zeros(params.n_test)
            for b in range(params.B):
                tree_rng = np.random.default_rng([seed, rep, 4, b])
                tree = grow_tree(split, model.d, w, g, params.ell, params.min_leaf, tree_rng)
                fit_leaves(tree, est)
                preds += predict_tree(tree, test_X)
            errors[cell].append(float(np.mean((preds / params.B - mu_test) ** 2)))
    rows = []
    for (g, w) in cells:
        vals = np.array(errors[(g, w)])
        se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        rows.append(
            {
                "gamma": g,
                "w": w,
                "snr": snr,
                "rep_count": grid.reps,
                "mean_mse": float(vals.mean()),
                "se": se,
            }
        )
    return rows
