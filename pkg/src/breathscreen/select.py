"""Feature selection and reduction: random-forest importance, PCA, Pearson ranking."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMatrix, KTooLarge, ShapeMismatch, SingleClass
from .stats import FeatureMatrix


def top_k(scores, k: int) -> np.ndarray:
    """Indices of the k largest scores; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if k > scores.size:
        raise KTooLarge(f"k={k} exceeds {scores.size} columns")
    if k < 0:
        raise ValueError("k must be non-negative")
    order = np.lexsort((np.arange(scores.size), -scores))
    return order[:k]


# --------------------------------------------------------------------------- #
# Random forest (CART, Gini impurity)
# --------------------------------------------------------------------------- #

def gini(pos: np.ndarray | float, n: np.ndarray | float):
    p = pos / n
    return 2.0 * p * (1.0 - p)


@dataclass
class DecisionTree:
    feature: list[int] = field(default_factory=list)  # -1 for leaves
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    counts: list[tuple[int, int]] = field(default_factory=list)  # (negatives, positives)
    importance: np.ndarray | None = None
    seed: int | None = None

    def _add(self, counts) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.counts.append(counts)
        return len(self.feature) - 1

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def structure(self):
        return list(zip(self.feature, self.left, self.right, self.counts))

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0])
        for i, row in enumerate(X):
            node = 0
            while self.feature[node] >= 0:
                node = self.left[node] if row[self.feature[node]] <= self.threshold[node] else self.right[node]
            neg, pos = self.counts[node]
            out[i] = pos / (neg + pos)
        return out


def best_split(X: np.ndarray, y: np.ndarray, features, min_leaf: int):
    """Return (gain, feature, threshold) maximising the Gini decrease, or None.

    Gain is the node-local decrease G - (nL GL + nR GR) / n.  Ties keep the
    first feature in ``features`` and the lowest threshold.
    """
    n = y.size
    parent = gini(y.sum(), n)
    best = None
    n_left = np.arange(1, n)
    n_right = n - n_left
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        pos_left = np.cumsum(y[order])[:-1]
        pos_right = y.sum() - pos_left
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        child = (n_left * gini(pos_left, n_left) + n_right * gini(pos_right, n_right)) / n
        gain = np.where(valid, parent - child, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > 1e-15 and (best is None or gain[i] > best[0]):
            best = (float(gain[i]), int(f), 0.5 * (xs[i] + xs[i + 1]))
    return best


def fit_tree(X, y, max_depth: int, min_leaf: int, features_per_split: int, rng) -> DecisionTree:
    n_total, d = X.shape
    tree = DecisionTree()
    imp = np.zeros(d)
    stack = [(np.arange(n_total), 0, tree._add((0, 0)))]
    while stack:
        idx, depth, node = stack.pop()
        yy = y[idx]
        pos = int(yy.sum())
        tree.counts[node] = (idx.size - pos, pos)
        if depth >= max_depth or pos == 0 or pos == idx.size or idx.size < 2 * min_leaf:
            continue
        feats = rng.choice(d, size=features_per_split, replace=False) if features_per_split < d else np.arange(d)
        split = best_split(X[idx], yy, feats, min_leaf)
        if split is None:
            continue
        gain, f, thr = split
        imp[f] += idx.size / n_total * gain
        mask = X[idx, f] <= thr
        tree.feature[node] = f
        tree.threshold[node] = float(thr)
        li, ri = tree._add((0, 0)), tree._add((0, 0))
        tree.left[node], tree.right[node] = li, ri
        # push right first so the left subtree is numbered/expanded first
        stack.append((idx[~mask], depth + 1, ri))
        stack.append((idx[mask], depth + 1, li))
    tree.importance = imp
    return tree


@dataclass
class RandomForestModel:
    trees: list[DecisionTree]
    importance: np.ndarray
    n_features: int
    seed: int
    params: dict

    @property
    def per_tree_importance(self) -> np.ndarray:
        return np.stack([t.importance for t in self.trees])

    def predict_proba(self, X) -> np.ndarray:
        return np.mean([t.predict_proba(np.asarray(X, dtype=np.float64)) for t in self.trees], axis=0)


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] == 0:
        raise DegenerateMatrix("feature matrix has no columns")
    if X.shape[0] < 2:
        raise DegenerateMatrix("need at least two rows")
    if np.unique(y).size < 2:
        raise SingleClass("labels contain a single class")
    return X, y


def train_random_forest(data: FeatureMatrix | tuple, n_trees: int = 200, max_depth: int = 8,
                        min_leaf: int = 2, features_per_split: int | None = None,
                        seed: int = 0) -> RandomForestModel:
    """Bootstrap-aggregated Gini trees; importance = mean over trees of
    per-tree weighted impurity decrease."""
    X, y = (data.X, data.y) if isinstance(data, FeatureMatrix) else data
    X, y = _check_xy(X, y)
    n, d = X.shape
    m = features_per_split or math.ceil(math.sqrt(d))
    m = min(max(1, m), d)
    trees = []
    # independent per-tree streams: tree t is identical whether built alone or in a batch
    for t, ss in enumerate(np.random.SeedSequence(seed).spawn(n_trees)):
        rng = np.random.default_rng(ss)
        boot = rng.integers(0, n, size=n)
        tree = fit_tree(X[boot], y[boot], max_depth, min_leaf, m, rng)
        tree.seed = t
        trees.append(tree)
    per_tree = np.stack([t.importance for t in trees])
    importance = per_tree.sum(axis=0) / n_trees
    params = dict(n_trees=n_trees, max_depth=max_depth, min_leaf=min_leaf, features_per_split=m)
    return RandomForestModel(trees, importance, d, seed, params)


# --------------------------------------------------------------------------- #
# PCA
# --------------------------------------------------------------------------- #

def jacobi_eigh(A: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi eigen-decomposition of a symmetric matrix.

    Returns eigenvalues sorted descending and the matching orthonormal
    eigenvectors as columns.
    """
    A = np.array(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeMismatch("matrix must be square")
    n = A.shape[0]
    V = np.eye(n)
    scale = max(np.abs(A).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(A, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = A[:, p].copy()
                aq = A[:, q]
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap = A[p, :].copy()
                aq = A[q, :]
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q]
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    w = np.diag(A).copy()
    order = np.lexsort((np.arange(n), -w))
    w, V = w[order], V[:, order]
    # sign convention: largest-magnitude entry of each vector is positive
    piv = np.argmax(np.abs(V), axis=0)
    V = V * np.where(V[piv, np.arange(n)] < 0, -1.0, 1.0)
    return w, V


@dataclass
class PcaModel:
    mean: np.ndarray
    W: np.ndarray  # (d, k), orthonormal columns
    eigenvalues: np.ndarray  # retained, descending
    all_eigenvalues: np.ndarray

    @property
    def k(self) -> int:
        return self.W.shape[1]

    @property
    def explained_ratio(self) -> np.ndarray:
        total = np.clip(self.all_eigenvalues, 0.0, None).sum()
        return np.clip(self.eigenvalues, 0.0, None) / total if total > 0 else np.zeros(self.k)


def components_for_variance(eigenvalues, fraction: float) -> int:
    lam = np.clip(np.asarray(eigenvalues, dtype=np.float64), 0.0, None)
    total = lam.sum()
    if total <= 0:
        return 1
    cum = np.cumsum(lam) / total
    return int(min(np.searchsorted(cum, fraction - 1e-12) + 1, lam.size))


def fit_pca(data: FeatureMatrix | np.ndarray, k: int | None = None, variance: float = 0.95) -> PcaModel:
    """Centre, eigen-decompose the (n-1)-normalised covariance, keep k directions.

    ``k=None`` keeps the fewest components reaching ``variance`` of the total.
    """
    X = data.X if isinstance(data, FeatureMatrix) else np.asarray(data, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise DegenerateMatrix("PCA needs at least two rows")
    if d == 0:
        raise DegenerateMatrix("PCA needs at least one column")
    if k is not None and k > min(n, d):
        raise KTooLarge(f"k={k} exceeds min(n, d)={min(n, d)}")
    mu = X.mean(axis=0)
    Xc = X - mu
    cov = Xc.T @ Xc / (n - 1)
    lam, V = jacobi_eigh(cov)
    if k is None:
        k = min(components_for_variance(lam, variance), n)
    return PcaModel(mu, V[:, :k].copy(), lam[:k].copy(), lam)


def pca_transform(model: PcaModel, X_new) -> np.ndarray:
    X_new = np.atleast_2d(np.asarray(X_new, dtype=np.float64))
    if X_new.shape[1] != model.mean.size:
        raise ShapeMismatch(f"expected {model.mean.size} columns, got {X_new.shape[1]}")
    return (X_new - model.mean) @ model.W


def loading_scores(model: PcaModel) -> np.ndarray:
    """Per original column: largest absolute loading over retained components."""
    return np.abs(model.W).max(axis=1)


# --------------------------------------------------------------------------- #
# Correlation ranking
# --------------------------------------------------------------------------- #

def pearson_with_label(X, y) -> np.ndarray:
    """Population Pearson correlation of every column with y; 0 for constant columns."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sy = y.std()
    if sy == 0:
        raise SingleClass("label has zero variance")
    Xc = X - X.mean(axis=0)
    cov = (Xc * (y - y.mean())[:, None]).mean(axis=0)
    sx = X.std(axis=0)
    rho = np.zeros(X.shape[1])
    ok = sx > 1e-12 * np.maximum(1.0, np.abs(X.mean(axis=0)))
    rho[ok] = cov[ok] / (sx[ok] * sy)
    return np.clip(rho, -1.0, 1.0)


# --------------------------------------------------------------------------- #
# Selection results
# --------------------------------------------------------------------------- #

METHODS = ("none", "rf", "pca", "corr")


@dataclass
class SelectionResult:
    method: str
    column_names: list[str]  # input column names
    scores: np.ndarray | None = None
    selected: np.ndarray | None = None  # ranked column indices
    pca: PcaModel | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.selected is not None:
            sel = np.asarray(self.selected, dtype=np.int64)
            if np.unique(sel).size != sel.size or (sel.size and (sel.min() < 0 or sel.max() >= len(self.column_names))):
                raise ValueError("selected indices must be unique and in range")
            self.selected = sel

    @property
    def projects(self) -> bool:
        return self.pca is not None and self.selected is None

    @property
    def selected_names(self) -> list[str]:
        if self.selected is None:
            return []
        return [self.column_names[i] for i in self.selected]

    @property
    def output_names(self) -> list[str]:
        if self.projects:
            return [f"pc{i + 1}" for i in range(self.pca.k)]
        if self.selected is None:
            return list(self.column_names)
        return self.selected_names

    @property
    def n_outputs(self) -> int:
        return len(self.output_names)

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != len(self.column_names):
            raise ShapeMismatch(f"expected {len(self.column_names)} columns, got {X.shape[1]}")
        if self.projects:
            return pca_transform(self.pca, X)
        if self.selected is None:
            return X.copy()
        return X[:, self.selected]

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "params": self.params,
            "input_columns": list(self.column_names),
            "selected_columns": self.selected_names if self.selected is not None else None,
            "scores": None if self.scores is None else {
                c: float(s) for c, s in zip(self.column_names, self.scores)
            },
        }
        if self.pca is not None:
            d["pca"] = {
                "mean": self.pca.mean.tolist(),
                "components": self.pca.W.T.tolist(),
                "eigenvalues": self.pca.eigenvalues.tolist(),
                "all_eigenvalues": self.pca.all_eigenvalues.tolist(),
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionResult":
        cols = list(d["input_columns"])
        pos = {c: i for i, c in enumerate(cols)}
        sel = d.get("selected_columns")
        scores = d.get("scores")
        pca = None
        if d.get("pca"):
            p = d["pca"]
            pca = PcaModel(np.array(p["mean"]), np.array(p["components"]).T.reshape(len(cols), -1),
                           np.array(p["eigenvalues"]), np.array(p["all_eigenvalues"]))
        return cls(
            d["method"],
            cols,
            None if scores is None else np.array([scores[c] for c in cols]),
            None if sel is None else np.array([pos[c] for c in sel], dtype=np.int64),
            pca,
            dict(d.get("params", {})),
        )

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SelectionResult":
        return cls.from_dict(json.loads(text))


def rf_select(model: RandomForestModel, k: int, column_names=None) -> SelectionResult:
    names = list(column_names) if column_names is not None else [f"x{i}" for i in range(model.n_features)]
    sel = top_k(model.importance, k)
    return SelectionResult("rf", names, model.importance.copy(), sel, params=dict(k=k, seed=model.seed, **model.params))


def correlation_select(data: FeatureMatrix, k: int = 8) -> SelectionResult:
    if k > data.d:
        raise KTooLarge(f"k={k} exceeds {data.d} columns")
    rho = pearson_with_label(data.X, data.y)
    sel = top_k(np.abs(rho), k)
    return SelectionResult("corr", list(data.column_names), rho, sel, params=dict(k=k, rank_by="abs"))


def pca_project(data: FeatureMatrix, k: int | None = None, variance: float = 0.95) -> SelectionResult:
    model = fit_pca(data, k, variance)
    return SelectionResult("pca", list(data.column_names), loading_scores(model), None, model,
                           params=dict(mode="project", k=model.k, variance=variance))


def pca_pick(data: FeatureMatrix, n_pick: int, k: int | None = None, variance: float = 0.95) -> SelectionResult:
    """Keep original columns ranked by their largest loading on the retained components."""
    if n_pick > data.d:
        raise KTooLarge(f"n_pick={n_pick} exceeds {data.d} columns")
    model = fit_pca(data, k, variance)
    scores = loading_scores(model)
    return SelectionResult("pca", list(data.column_names), scores, top_k(scores, n_pick), model,
                           params=dict(mode="pick", k=model.k, n_pick=n_pick, variance=variance))


@dataclass(frozen=True)
class SelectionConfig:
    method: str = "none"
    k: int | None = None  # rf: 23, corr: 8, pca: None -> variance rule
    pca_mode: str = "project"
    pca_variance: float = 0.95
    pca_pick: int = 27
    rf_trees: int = 200
    rf_max_depth: int = 8
    rf_min_leaf: int = 2
    rf_features_per_split: int | None = None
    seed: int = 0


DEFAULT_K = {"rf": 23, "corr": 8}


def fit_selection(data: FeatureMatrix, cfg: SelectionConfig) -> SelectionResult:
    m = cfg.method
    if m == "none":
        return SelectionResult("none", list(data.column_names))
    if m == "rf":
        k = min(cfg.k or DEFAULT_K["rf"], data.d)
        model = train_random_forest(data, cfg.rf_trees, cfg.rf_max_depth, cfg.rf_min_leaf,
                                    cfg.rf_features_per_split, cfg.seed)
        return rf_select(model, k, data.column_names)
    if m == "corr":
        return correlation_select(data, min(cfg.k or DEFAULT_K["corr"], data.d))
    if m == "pca":
        k = None if cfg.k is None else min(cfg.k, data.n, data.d)
        if cfg.pca_mode == "pick":
            return pca_pick(data, min(cfg.pca_pick, data.d), k, cfg.pca_variance)
        if cfg.pca_mode == "project":
            return pca_project(data, k, cfg.pca_variance)
        raise ValueError(f"unknown pca_mode {cfg.pca_mode!r}")
    raise ValueError(f"unknown selection method {m!r}")
