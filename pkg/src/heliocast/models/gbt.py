"""Second-order gradient boosting of regression trees under squared loss.

Trees grow depth-wise on pre-binned features. A node with gradient sum
``G`` and hessian sum ``H`` gets weight ``-G / (H + lambda)``; a split is
kept when its structure-score reduction

    0.5 * (G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l))

exceeds ``gamma`` and both children carry a hessian sum of at least
``min_child_weight``. The learning rate is folded into the stored leaf
weights.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, DataError


@dataclass
class GbtHyperParams:
    eta: float = 0.1
    max_depth: int = 6
    gamma: float = 0.0
    n_rounds: int = 100
    min_child_weight: float = 1.0
    subsample: float = 1.0
    reg_lambda: float = 1.0
    max_bins: int = 256

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ConfigError("eta must be in (0, 1]")
        if self.max_depth < 1 or self.n_rounds < 0:
            raise ConfigError("max_depth >= 1 and n_rounds >= 0 required")
        if self.gamma < 0 or self.min_child_weight < 0 or self.reg_lambda < 0:
            raise ConfigError("gamma, min_child_weight and reg_lambda must be >= 0")
        if not 0 < self.subsample <= 1:
            raise ConfigError("subsample must be in (0, 1]")
        if not 2 <= self.max_bins <= 65536:
            raise ConfigError("max_bins must be in [2, 65536]")

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["gamma"]):
            d["gamma"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GbtHyperParams":
        d = dict(d)
        if d.get("gamma") == "inf":
            d["gamma"] = math.inf
        return cls(**d)


DEFAULT_GRID = {"eta": [0.05, 0.1, 0.3], "max_depth": [3, 6, 9], "gamma": [0.0, 1.0],
                "n_rounds": [100, 300]}


def expand_grid(grid) -> list:
    """A dict of lists (cartesian product) or a list of dicts/params, as params."""
    if isinstance(grid, dict):
        keys = list(grid)
        return [GbtHyperParams(**dict(zip(keys, vals)))
                for vals in itertools.product(*(grid[k] for k in keys))]
    return [g if isinstance(g, GbtHyperParams) else GbtHyperParams(**g) for g in grid]


@dataclass
class Tree:
    """Flat arrays; ``feature == -1`` marks a leaf. Rows with ``x < threshold`` go left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    @property
    def n_splits(self) -> int:
        return int((self.feature >= 0).sum())

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                return node
            rows = np.flatnonzero(inner)
            go_left = X[rows, feat[rows]] < self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("feature", "threshold", "left", "right", "value", "gain")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.array(d["feature"], dtype=np.int64), np.array(d["threshold"], dtype=float),
                   np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
                   np.array(d["value"], dtype=float), np.array(d["gain"], dtype=float))


@dataclass
class GbtModel:
    trees: list
    base_score: float
    hyper: GbtHyperParams
    n_features: int
    train_loss: list = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} features, got shape {X.shape}")
        out = np.full(len(X), self.base_score)
        for tree in self.trees:
            out += tree.predict(X)
        return out

    def staged_predict(self, X: np.ndarray):
        out = np.full(len(X), self.base_score)
        yield out.copy()
        for tree in self.trees:
            out += tree.predict(X)
            yield out.copy()

    def to_dict(self) -> dict:
        return {"base_score": self.base_score, "hyper": self.hyper.to_dict(),
                "n_features": self.n_features, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "GbtModel":
        return cls([Tree.from_dict(t) for t in d["trees"]], d["base_score"],
                   GbtHyperParams.from_dict(d["hyper"]), d["n_features"])


def bin_thresholds(x: np.ndarray, max_bins: int) -> np.ndarray:
    """Candidate split points: midpoints between (quantile-thinned) distinct values."""
    u = np.unique(x)
    if len(u) > max_bins:
        u = u[np.unique(np.linspace(0, len(u) - 1, max_bins).round().astype(np.int64))]
    return (u[:-1] + u[1:]) / 2.0


def _histograms(codes_flat, g, h, data_rows, slots, n_slots, n_feat, n_bins):
    size = n_slots * n_feat * n_bins
    keys = (slots[:, None] * (n_feat * n_bins) + codes_flat[data_rows]).ravel()
    G = np.bincount(keys, weights=np.repeat(g[data_rows], n_feat), minlength=size)
    H = np.bincount(keys, weights=np.repeat(h[data_rows], n_feat), minlength=size)
    return G.reshape(n_slots, n_feat, n_bins), H.reshape(n_slots, n_feat, n_bins)


def _build_tree(codes_flat, n_thr, thresholds, g, h, rows, hp: GbtHyperParams, n_bins):
    n_feat = len(n_thr)
    lam, gamma, mcw = hp.reg_lambda, hp.gamma, hp.min_child_weight
    feature, threshold, left, right, value, gain = [], [], [], [], [], []

    def new_node(G, H):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(-hp.eta * G / (H + lam))
        gain.append(0.0)
        return len(feature) - 1

    root = new_node(g[rows].sum(), h[rows].sum())
    node_of_row = np.full(len(rows), root, dtype=np.int64)
    frontier = [root]
    sums = {root: (g[rows].sum(), h[rows].sum())}
    valid_bin = np.arange(n_bins - 1)[None, :] < n_thr[:, None]
    if n_bins > 1 and hp.max_depth > 0:
        G0, H0 = _histograms(codes_flat, g, h, rows, np.zeros(len(rows), dtype=np.int64), 1,
                             n_feat, n_bins)
        hist = {root: (G0[0], H0[0])}

    for depth in range(hp.max_depth if n_bins > 1 else 0):
        G = np.stack([hist[nd][0] for nd in frontier])
        H = np.stack([hist[nd][1] for nd in frontier])
        GL = np.cumsum(G, axis=2)[:, :, :-1]
        HL = np.cumsum(H, axis=2)[:, :, :-1]
        Gt = np.array([sums[nd][0] for nd in frontier])[:, None, None]
        Ht = np.array([sums[nd][1] for nd in frontier])[:, None, None]
        GR, HR = Gt - GL, Ht - HL
        with np.errstate(divide="ignore", invalid="ignore"):
            red = 0.5 * (GL ** 2 / (HL + lam) + GR ** 2 / (HR + lam) - Gt ** 2 / (Ht + lam))
        ok = valid_bin[None] & (HL >= mcw) & (HR >= mcw) & (HL > 0) & (HR > 0)
        red = np.where(ok, red, -np.inf)

        new_frontier = []
        split_of = {}
        for k, nd in enumerate(frontier):
            flat = red[k].ravel()
            best = int(np.argmax(flat))
            r = flat[best]
            if not (r > gamma and np.isfinite(r)):
                continue
            f, b = divmod(best, n_bins - 1)
            gl, hl = GL[k, f, b], HL[k, f, b]
            gt, ht = sums[nd]
            lc = new_node(gl, hl)
            rc = new_node(gt - gl, ht - hl)
            sums[lc], sums[rc] = (gl, hl), (gt - gl, ht - hl)
            feature[nd], threshold[nd], left[nd], right[nd], gain[nd] = f, thresholds[f][b], lc, rc, r
            split_of[nd] = (f, b, lc, rc)
            new_frontier += [lc, rc]
        if not split_of:
            break
        small = {}
        for nd, (f, b, lc, rc) in split_of.items():
            m = node_of_row == nd
            go_left = (codes_flat[rows[m], f] - f * n_bins) <= b
            node_of_row[m] = np.where(go_left, lc, rc)
            n_left = int(go_left.sum())
            small[nd] = lc if n_left <= len(go_left) - n_left else rc
        frontier = new_frontier
        if depth + 1 == hp.max_depth:
            break
        # histogram of the smaller child only; its sibling is parent minus child
        slot = np.full(len(feature), -1, dtype=np.int64)
        order = list(split_of)
        slot[[small[nd] for nd in order]] = np.arange(len(order))
        r_idx = np.flatnonzero(slot[node_of_row] >= 0)
        Gs, Hs = _histograms(codes_flat, g, h, rows[r_idx], slot[node_of_row[r_idx]], len(order),
                             n_feat, n_bins)
        for k, nd in enumerate(order):
            _, _, lc, rc = split_of[nd]
            other = rc if small[nd] == lc else lc
            Gp, Hp = hist.pop(nd)
            hist[small[nd]] = (Gs[k], Hs[k])
            hist[other] = (Gp - Gs[k], Hp - Hs[k])

    return Tree(np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), np.array(value), np.array(gain))


def gbt_fit(X, y, hyper: GbtHyperParams | None = None, seed: int = 0) -> GbtModel:
    """Fit a boosted ensemble on raw (unnormalized) features."""
    hp = hyper or GbtHyperParams()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise DataError("cannot fit on an empty training set")
    if X.ndim != 2 or len(X) != len(y):
        raise DataError(f"X of shape {X.shape} does not match y of length {len(y)}")
    n, n_feat = X.shape
    base = float(np.mean(y))
    model = GbtModel([], base, hp, n_feat)
    if np.ptp(y) == 0:
        model.train_loss = [0.0]
        return model

    thresholds = [bin_thresholds(X[:, f], hp.max_bins) for f in range(n_feat)]
    n_thr = np.array([len(t) for t in thresholds])
    n_bins = int(n_thr.max()) + 1
    codes = np.empty((n, n_feat), dtype=np.int64)
    for f in range(n_feat):
        codes[:, f] = np.searchsorted(thresholds[f], X[:, f], side="right") + f * n_bins

    rng = np.random.default_rng(seed)
    pred = np.full(n, base)
    h = np.ones(n)
    all_rows = np.arange(n)
    model.train_loss = [float(np.mean((pred - y) ** 2))]
    for _ in range(hp.n_rounds):
        g = pred - y
        rows = all_rows
        if hp.subsample < 1:
            rows = np.sort(rng.choice(n, max(1, int(round(hp.subsample * n))), replace=False))
        tree = _build_tree(codes, n_thr, thresholds, g, h, rows, hp, n_bins)
        pred += tree.predict(X)
        model.trees.append(tree)
        model.train_loss.append(float(np.mean((pred - y) ** 2)))
        if tree.n_splits == 0 and hp.subsample == 1:
            break  # a stump-free round leaves the gradients unchanged
    return model


def contiguous_folds(n: int, k: int) -> list:
    """``k`` contiguous index blocks covering ``0..n-1`` in order (no shuffling)."""
    if k < 2 or n < k:
        raise ConfigError(f"cannot make {k} folds from {n} rows")
    edges = np.linspace(0, n, k + 1).round().astype(np.int64)
    return [np.arange(edges[i], edges[i + 1]) for i in range(k)]


def gbt_tune(X, y, grid=None, folds: int = 3, seed: int = 0, return_scores: bool = False):
    """Grid point with the lowest mean validation RMSE over contiguous folds."""
    candidates = expand_grid(DEFAULT_GRID if grid is None else grid)
    if not candidates:
        raise ConfigError("empty hyperparameter grid")
    if len(candidates) == 1 and not return_scores:
        return candidates[0]
    X, y = np.asarray(X, dtype=float), np.asarray(y, dtype=float)
    blocks = contiguous_folds(len(y), folds)
    # candidates differing only in n_rounds share one fit: round k of a longer
    # run is identical to the last round of a k-round run
    groups = {}
    for i, hp in enumerate(candidates):
        key = tuple(sorted((k, v) for k, v in asdict(hp).items() if k != "n_rounds"))
        groups.setdefault(key, []).append(i)
    errs = np.zeros((len(candidates), folds))
    for members in groups.values():
        longest = max(members, key=lambda i: candidates[i].n_rounds)
        for k, val in enumerate(blocks):
            train = np.concatenate([b for i, b in enumerate(blocks) if i != k])
            m = gbt_fit(X[train], y[train], candidates[longest], seed)
            staged = list(m.staged_predict(X[val]))
            for i in members:
                pred = staged[min(candidates[i].n_rounds, len(staged) - 1)]
                errs[i, k] = np.sqrt(np.mean((pred - y[val]) ** 2))
    scores = [float(e) for e in errs.mean(axis=1)]
    best = int(np.argmin(scores))
    return (candidates[best], scores) if return_scores else candidates[best]
