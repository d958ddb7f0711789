"""K-means and clustering quality metrics (purity, NMI, pairwise F1,
silhouette), Hungarian cluster/class alignment and a 2-D PCA projection."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class Partition:
    assignment: np.ndarray
    k: int

    def __post_init__(self):
        a = np.asarray(self.assignment)
        if a.ndim != 1 or a.size == 0:
            raise ValueError("a partition needs at least one item")
        if a.min() < 0 or a.max() >= self.k:
            raise ValueError("cluster ids must lie in [0, k)")

    def __len__(self) -> int:
        return len(self.assignment)

    @classmethod
    def from_labels(cls, labels: Sequence) -> "Partition":
        """Dense ids in sorted order of the distinct labels."""
        uniq, inv = np.unique(np.asarray(labels), return_inverse=True)
        return cls(inv.astype(np.int64), len(uniq))


def as_partition(x) -> Partition:
    return x if isinstance(x, Partition) else Partition.from_labels(x)


@dataclass
class KmeansResult:
    partition: Partition
    centroids: np.ndarray
    inertia: float
    restart_index: int
    n_iter: int = 0
    inertia_history: list[float] = field(default_factory=list)


def _sq_dists(X: np.ndarray, C: np.ndarray, x_sq: np.ndarray) -> np.ndarray:
    d = x_sq[:, None] - 2.0 * (X @ C.T) + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _inertia(X, centroids, labels) -> float:
    diff = X - centroids[labels]
    return float((diff * diff).sum())


def _lloyd(X, K, max_iter, rng, x_sq):
    n = len(X)
    centroids = X[rng.choice(n, size=K, replace=False)].copy()
    labels = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        new = _sq_dists(X, centroids, x_sq).argmin(axis=1)
        history.append(_inertia(X, centroids, new))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=K)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, X)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not nonempty.all():
            # reseed each empty cluster with the point farthest from its own centroid
            far = ((X - centroids[labels]) ** 2).sum(1)
            for j in np.flatnonzero(~nonempty):
                i = int(far.argmax())
                centroids[j] = X[i]
                far[i] = -1.0
    labels = _sq_dists(X, centroids, x_sq).argmin(axis=1)
    return labels, centroids, it, history


def kmeans(X, K: int, n_init: int = 10, max_iter: int = 50, seed: int = 0) -> KmeansResult:
    """Random-init Lloyd k-means, best of ``n_init`` restarts by inertia.

    Restart ``r`` draws its initial centroids from ``default_rng(seed ^ r)``;
    ties on inertia go to the lowest restart index.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = len(X)
    if K < 1 or n < K:
        raise ValueError(f"kmeans needs 1 <= K <= n (K={K}, n={n})")
    if not np.all(np.isfinite(X)):
        raise ValueError("kmeans input contains non-finite values")
    x_sq = (X * X).sum(1)
    best = None
    for r in range(n_init):
        labels, centroids, it, hist = _lloyd(X, K, max_iter, np.random.default_rng(seed ^ r), x_sq)
        inertia = _inertia(X, centroids, labels)
        if best is None or inertia < best.inertia:
            best = KmeansResult(Partition(labels, K), centroids, inertia, r, it, hist)
    return best


# --- metrics ----------------------------------------------------------------

def contingency(omega, classes) -> np.ndarray:
    omega, classes = as_partition(omega), as_partition(classes)
    if len(omega) != len(classes):
        raise ValueError(f"partition lengths differ ({len(omega)} vs {len(classes)})")
    table = np.zeros((omega.k, classes.k), dtype=np.int64)
    np.add.at(table, (omega.assignment, classes.assignment), 1)
    return table


def purity(omega, classes) -> float:
    table = contingency(omega, classes)
    return float(table.max(axis=1).sum() / table.sum())


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(omega, classes) -> float:
    """I / ((H(omega) + H(classes)) / 2) with natural logs."""
    table = contingency(omega, classes)
    n = table.sum()
    h_w = _entropy(table.sum(1), n)
    h_c = _entropy(table.sum(0), n)
    if h_w == 0 and h_c == 0:
        return 1.0
    if h_w == 0 or h_c == 0:
        return 0.0
    pw = table.sum(1) / n
    pc = table.sum(0) / n
    nz = table > 0
    pj = table / n
    mi = float((pj[nz] * np.log(pj[nz] / np.outer(pw, pc)[nz])).sum())
    return max(0.0, mi / ((h_w + h_c) / 2))


def _pairs(x: np.ndarray) -> float:
    x = x.astype(np.float64)
    return float((x * (x - 1) / 2).sum())


def pairwise_f1(omega, classes) -> tuple[float, float, float]:
    """Precision, recall and F1 over all same-cluster / same-class item pairs."""
    table = contingency(omega, classes)
    if table.sum() < 2:
        raise ValueError("pairwise F1 needs at least two items")
    tp = _pairs(table)
    fp = _pairs(table.sum(1)) - tp
    fn = _pairs(table.sum(0)) - tp
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def pairwise_distances(X: np.ndarray) -> np.ndarray:
    sq = (X * X).sum(1)
    d = np.maximum(sq[:, None] - 2.0 * (X @ X.T) + sq[None, :], 0.0)
    np.fill_diagonal(d, 0.0)
    return np.sqrt(d)


def silhouette(X, partition) -> tuple[float, np.ndarray]:
    """Mean and per-point silhouette; singleton clusters score 0."""
    X = np.asarray(X, dtype=np.float64)
    part = as_partition(partition)
    labels = part.assignment
    counts = np.bincount(labels, minlength=part.k)
    if part.k < 2:
        raise ValueError("silhouette needs at least two clusters")
    if (counts == 0).any():
        raise ValueError("silhouette needs every cluster to be non-empty")
    D = pairwise_distances(X)
    sums = np.zeros((len(X), part.k))
    for j in range(part.k):
        sums[:, j] = D[:, labels == j].sum(1)
    own = counts[labels]
    a = sums[np.arange(len(X)), labels] / np.maximum(own - 1, 1)
    other = sums / counts[None, :]
    other[np.arange(len(X)), labels] = np.inf
    b = other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s[own == 1] = 0.0
    return float(s.mean()), s


@dataclass
class Alignment:
    mapping: dict[int, int]
    accuracy: float
    total: int


def hungarian_align(omega, classes) -> Alignment:
    """Maximum-overlap one-to-one cluster -> class mapping (zero-padded square)."""
    table = contingency(omega, classes)
    size = max(table.shape)
    square = np.zeros((size, size), dtype=np.int64)
    square[: table.shape[0], : table.shape[1]] = table
    rows, cols = linear_sum_assignment(square, maximize=True)
    mapping = {int(r): int(c) for r, c in zip(rows, cols) if r < table.shape[0] and c < table.shape[1]}
    total = int(square[rows, cols].sum())
    return Alignment(mapping, total / table.sum(), total)


def pca2d(X, n_iter: int = 300, tol: float = 1e-10, seed: int = 0) -> np.ndarray:
    """Projection on the top-2 principal directions (power iteration + deflation)."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) < 2:
        raise ValueError("pca2d needs at least two rows")
    Xc = X - X.mean(axis=0)
    if not np.any(Xc):
        warnings.warn("pca2d: data has zero variance; returning zeros", stacklevel=2)
        return np.zeros((len(X), 2))
    rng = np.random.default_rng(seed)
    comps: list[np.ndarray] = []
    top = 0.0
    for _ in range(2):
        v = rng.standard_normal(X.shape[1])
        for u in comps:
            v -= (v @ u) * u
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(n_iter):
            w = Xc.T @ (Xc @ v)
            for _ in range(2):  # second pass removes the round-off a rank-1 input leaves behind
                for u in comps:
                    w -= (w @ u) * u
            lam = np.linalg.norm(w)
            if lam <= tol * top:
                break
            w /= lam
            done = np.linalg.norm(w - v) < tol
            v = w
            if done:
                break
        if lam <= tol * top or lam == 0:
            comps.append(np.zeros(X.shape[1]))
            continue
        top = top or lam
        v = v * (1.0 if v[np.argmax(np.abs(v))] >= 0 else -1.0)
        comps.append(v)
    out = np.zeros((len(X), 2))
    for i, u in enumerate(comps):
        out[:, i] = Xc @ u
    return out


# --- evaluation harness -----------------------------------------------------

METRICS = ("purity", "nmi", "f1", "silhouette")


def repetition_seed(seed: int, rep: int) -> int:
    # multiples of 16 keep the seed ^ r restart sub-seeds of different repetitions apart
    return (seed * 64 + rep) * 16


def evaluate_clustering(X, labels, repetitions: int = 10, seed: int = 0, k: int | None = None,
                        n_init: int = 10, max_iter: int = 50) -> dict:
    """Mean/std of each metric over ``repetitions`` independently seeded k-means runs."""
    X = np.asarray(X, dtype=np.float64)
    classes = Partition.from_labels(labels)
    k = classes.k if k is None else k
    if k > len(X):
        raise ValueError(f"K={k} exceeds the number of items ({len(X)})")
    scores = {m: [] for m in METRICS}
    for rep in range(repetitions):
        res = kmeans(X, k, n_init=n_init, max_iter=max_iter, seed=repetition_seed(seed, rep))
        omega = res.partition
        scores["purity"].append(purity(omega, classes))
        scores["nmi"].append(nmi(omega, classes))
        scores["f1"].append(pairwise_f1(omega, classes)[2])
        used = Partition.from_labels(omega.assignment)
        scores["silhouette"].append(silhouette(X, used)[0] if used.k >= 2 else 0.0)
    out = {m: {"mean": float(np.mean(v)), "std": float(np.std(v))} for m, v in scores.items()}
    out.update(k=int(k), n=int(len(X)), seed=int(seed))
    return out
