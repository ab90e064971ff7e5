"""Locally linear coding and the locally linear MIL solvers.

A set of K anchor points (columns of V, d x K) spans the data manifold.
Each instance x gets local coordinates gamma(x) minimizing the distortion
||x - V gamma||^2 plus the locality penalty sigma * sum_k gamma_k^2 ||v_k - x||^2,
which has the closed form

    (V'V + sigma * D_x + eps*I) gamma = V'x,      D_x = diag(||v_k - x||^2)

with a fixed numerical ridge eps = 1e-8 guaranteeing a unique solution when
the plain system is singular (e.g. sigma = 0 with K > rank(V)).  There is no
sum-to-one constraint on gamma.

The locally linear bag decision is f(B) = max_x <W gamma(x), x> with a d x K
weight matrix W holding one weight vector per anchor.  Training mirrors the
linear solvers with the rank-one update x* gamma(x*)' in place of x*;
coordinates for training instances are precomputed once, while unseen bags
get coordinates on demand at prediction time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .core import (
    Bag,
    Dataset,
    DatasetError,
    DimensionMismatchError,
    WitnessResult,
    _check_finite,
    _freeze,
    ordered_pairs,
)
from .linear import TrainConfig, TrainTrace, _check_finite_weights
from .rng import make_rng

RIDGE = 1e-8
AnchorMethod = Literal["kmeans", "random"]


@dataclass(frozen=True)
class AnchorSet:
    """Anchor points (columns of V) with the locality trade-off sigma."""

    V: np.ndarray  # (d, K), read-only
    sigma: float
    method: AnchorMethod = "kmeans"
    seed: int = 0

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.V, dtype=np.float64))
        if V.shape[1] < 1:
            raise ValueError("anchor set needs K >= 1 anchors")
        _check_finite(V, "anchor matrix")
        diffs = V[:, :, None] - V[:, None, :]
        dist2 = np.einsum("dij,dij->ij", diffs, diffs)
        np.fill_diagonal(dist2, np.inf)
        if np.min(dist2) <= 0.0:
            raise ValueError("anchors must be pairwise distinct")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        object.__setattr__(self, "V", _freeze(V))

    @property
    def dim(self) -> int:
        return self.V.shape[0]

    @property
    def n_anchors(self) -> int:
        return self.V.shape[1]


@dataclass(frozen=True)
class LocalModel:
    """Per-anchor weight matrix plus the anchors it was trained against."""

    W: np.ndarray  # (d, K), read-only
    anchors: AnchorSet
    scaling: "tuple[np.ndarray, np.ndarray] | None" = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=np.float64))
        _check_finite(W, "model weights")
        if W.shape != self.anchors.V.shape:
            raise ValueError(
                f"weight matrix shape {W.shape} must match anchor matrix {self.anchors.V.shape}"
            )
        object.__setattr__(self, "W", _freeze(W))
        if self.scaling is not None:
            means, stds = self.scaling
            means = _freeze(np.asarray(means, dtype=np.float64).reshape(-1))
            stds = _freeze(np.asarray(stds, dtype=np.float64).reshape(-1))
            if np.any(stds <= 0):
                raise ValueError("scaler stddevs must be positive")
            object.__setattr__(self, "scaling", (means, stds))

    @property
    def dim(self) -> int:
        return self.W.shape[0]


def default_anchor_count(n_instances: int) -> int:
    """Default K when none is given: min(50, number of instances)."""
    return min(50, n_instances)


def _kmeans_pp_seeds(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding over the rows of X (assumed distinct)."""
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[int(rng.integers(n))]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:  # all remaining points coincide with a center
            probs = np.full(n, 1.0 / n)
        else:
            probs = d2 / total
        centers[i] = X[int(rng.choice(n, p=probs))]
        d2 = np.minimum(d2, np.sum((X - centers[i]) ** 2, axis=1))
    return centers


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int = 100, tol: float = 1e-6) -> np.ndarray:
    """Lloyd's iterations; empty or duplicated centroids re-seed from the
    point farthest from its assigned centroid."""
    k = centers.shape[0]
    for _ in range(max_iter):
        d2 = (
            np.sum(X**2, axis=1)[:, None]
            - 2.0 * X @ centers.T
            + np.sum(centers**2, axis=1)[None, :]
        )
        assign = np.argmin(d2, axis=1)
        nearest = d2[np.arange(X.shape[0]), assign]
        new_centers = centers.copy()
        taken = set()
        for c in range(k):
            members = X[assign == c]
            if members.shape[0] == 0:
                far = int(np.argmax(np.where(np.isin(np.arange(X.shape[0]), list(taken)), -np.inf, nearest)))
                new_centers[c] = X[far]
                taken.add(far)
            else:
                new_centers[c] = members.mean(axis=0)
        # collapse of two centroids onto one point: re-seed the later one
        for c in range(1, k):
            while any(np.array_equal(new_centers[c], new_centers[p]) for p in range(c)):
                far = int(np.argmax(np.where(np.isin(np.arange(X.shape[0]), list(taken)), -np.inf, nearest)))
                new_centers[c] = X[far]
                taken.add(far)
        move = float(np.sqrt(np.max(np.sum((new_centers - centers) ** 2, axis=1))))
        centers = new_centers
        if move < tol:
            break
    return centers


def select_anchors(
    instances: np.ndarray,
    k: int,
    method: AnchorMethod = "kmeans",
    seed: int = 0,
    sigma: float = 1.0,
) -> AnchorSet:
    """Pick K anchor points from (n, d) instance rows, by k-means or sampling.

    ``random`` draws K distinct instances without replacement; ``kmeans``
    runs Lloyd's algorithm from a k-means++ seeding (at most 100 iterations
    or until centroids move less than 1e-6).  Both are deterministic for a
    given seed.
    """
    X = np.atleast_2d(np.asarray(instances, dtype=np.float64))
    _check_finite(X, "instances")
    distinct = np.unique(X, axis=0)
    if distinct.shape[0] < k:
        raise ValueError(
            f"need at least K={k} distinct instances, found {distinct.shape[0]}"
        )
    rng = make_rng(seed)
    if method == "random":
        pick = rng.choice(distinct.shape[0], size=k, replace=False)
        V = distinct[np.sort(pick)].T
    elif method == "kmeans":
        centers = _kmeans_pp_seeds(distinct, k, rng)
        centers = _lloyd(X, centers)
        V = centers.T
    else:
        raise ValueError(f"unknown anchor method {method!r}")
    return AnchorSet(V, sigma=sigma, method=method, seed=seed)


def local_coordinates_batch(X: np.ndarray, anchors: AnchorSet) -> np.ndarray:
    """Local coordinates for each row of X, shape (n, K).

    Solves the regularized normal equations per instance with a batched
    symmetric solve, chunked to bound memory.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if not np.all(np.isfinite(X)):
        raise ValueError("cannot code non-finite input")
    if X.shape[1] != anchors.dim:
        raise DimensionMismatchError(anchors.dim, X.shape[1])
    V = anchors.V
    k = anchors.n_anchors
    gram = V.T @ V + RIDGE * np.eye(k)
    anchor_sq = np.sum(V**2, axis=0)
    out = np.empty((X.shape[0], k))
    diag_ix = np.arange(k)
    for lo in range(0, X.shape[0], 1024):
        chunk = X[lo : lo + 1024]
        vtx = chunk @ V  # (c, K)
        dist2 = np.maximum(anchor_sq[None, :] - 2.0 * vtx + np.sum(chunk**2, axis=1)[:, None], 0.0)
        systems = np.broadcast_to(gram, (chunk.shape[0], k, k)).copy()
        systems[:, diag_ix, diag_ix] += anchors.sigma * dist2
        out[lo : lo + 1024] = np.linalg.solve(systems, vtx[..., None])[..., 0]
    return out


def local_coordinates(x: np.ndarray, anchors: AnchorSet) -> np.ndarray:
    """Local coordinates of a single instance, shape (K,)."""
    return local_coordinates_batch(np.asarray(x)[None, :], anchors)[0]


def _instance_scores_local(instances: np.ndarray, gammas: np.ndarray, W: np.ndarray) -> np.ndarray:
    """<W gamma(x), x> per row: rowwise dot of gamma with W'x."""
    return np.einsum("ik,ik->i", instances @ W, gammas)


def bag_score_local(bag: Bag, model: LocalModel) -> WitnessResult:
    """Max locally-linear instance score; lowest index wins ties."""
    if bag.dim != model.dim:
        raise DimensionMismatchError(model.dim, bag.dim)
    gammas = local_coordinates_batch(bag.instances, model.anchors)
    scores = _instance_scores_local(bag.instances, gammas, model.W)
    ix = int(np.argmax(scores))
    return WitnessResult(float(scores[ix]), ix)


def objective_local_classification(
    dataset: Dataset, model: LocalModel, lam: float
) -> float:
    """lam/2 ||W||_F^2 + mean bag hinge loss under the local decision."""
    if lam <= 0:
        raise ValueError(f"regularization parameter must be positive, got {lam}")
    reg = 0.5 * lam * float(np.sum(model.W**2))
    losses = [
        max(0.0, 1.0 - b.label * bag_score_local(b, model).score) for b in dataset.bags
    ]
    return reg + float(np.mean(losses))


def objective_local_ranking(dataset: Dataset, model: LocalModel, lam: float) -> float:
    """lam/2 ||W||_F^2 + mean pairwise hinge under the local decision."""
    if lam <= 0:
        raise ValueError(f"regularization parameter must be positive, got {lam}")
    pairs = ordered_pairs([b.label for b in dataset.bags])
    if not pairs:
        raise DatasetError("ranking objective needs at least one ordered pair")
    scores = [bag_score_local(b, model).score for b in dataset.bags]
    total = 0.0
    for i, j in pairs:
        total += max(0.0, 1.0 - scores[i] + scores[j]) * (
            dataset.bags[i].label - dataset.bags[j].label
        )
    reg = 0.5 * lam * float(np.sum(model.W**2))
    return reg + total / len(pairs)


def _precode(dataset: Dataset, anchors: AnchorSet) -> list[np.ndarray]:
    """Per-bag coordinate matrices for all training instances, computed once."""
    gammas = local_coordinates_batch(dataset.all_instances(), anchors)
    out = []
    lo = 0
    for b in dataset.bags:
        out.append(gammas[lo : lo + b.size])
        lo += b.size
    return out


def train_local_classifier(
    dataset: Dataset,
    anchors: AnchorSet,
    cfg: TrainConfig,
    _trace_weights: bool = False,
) -> tuple[LocalModel, TrainTrace]:
    """Train the locally linear MIL classifier (rank-one witness updates)."""
    if dataset.task != "classification":
        raise DatasetError(f"classifier needs a classification dataset, got {dataset.task}")
    if dataset.dim != anchors.dim:
        raise DimensionMismatchError(anchors.dim, dataset.dim)
    bags = dataset.bags
    labels = dataset.labels().astype(np.float64)
    coded = _precode(dataset, anchors)
    rng = make_rng(cfg.seed)

    W = np.zeros((dataset.dim, anchors.n_anchors))
    trace = TrainTrace(weights_log=[] if _trace_weights else None)
    every = cfg.record_objective_every
    for t in range(1, cfg.T + 1):
        if every and (t - 1) % every == 0:
            trace.objective_samples.append(
                (t, objective_local_classification(dataset, LocalModel(W, anchors), cfg.lam))
            )
        b = int(rng.integers(len(bags)))
        scores = _instance_scores_local(bags[b].instances, coded[b], W)
        star = int(np.argmax(scores))
        eta = 1.0 / (cfg.lam * t)
        W *= 1.0 - eta * cfg.lam
        if labels[b] * scores[star] < 1.0:
            W += (eta * labels[b]) * np.outer(bags[b].instances[star], coded[b][star])
        _check_finite_weights(W, t)
        if _trace_weights:
            trace.weights_log.append(W.copy())

    model = LocalModel(
        W,
        anchors,
        meta={
            "lam": cfg.lam,
            "T": cfg.T,
            "seed": cfg.seed,
            "task": "classification",
            "K": anchors.n_anchors,
            "sigma": anchors.sigma,
        },
    )
    if every:
        trace.objective_samples.append(
            (cfg.T + 1, objective_local_classification(dataset, model, cfg.lam))
        )
    trace.final_violations = sum(
        1
        for b, g in zip(bags, coded)
        if b.label * np.max(_instance_scores_local(b.instances, g, model.W)) < 1.0
    )
    return model, trace


def train_local_ranker(
    dataset: Dataset,
    anchors: AnchorSet,
    cfg: TrainConfig,
    _trace_weights: bool = False,
    _mirror_update_sign: bool = False,
) -> tuple[LocalModel, TrainTrace]:
    """Train the locally linear MIL ranker on ordered bag pairs."""
    if dataset.dim != anchors.dim:
        raise DimensionMismatchError(anchors.dim, dataset.dim)
    bags = dataset.bags
    pairs = ordered_pairs([b.label for b in bags])
    if not pairs:
        raise DatasetError("ranking needs at least one pair of bags with distinct ranks")
    coded = _precode(dataset, anchors)
    rng = make_rng(cfg.seed)

    sign = -1.0 if _mirror_update_sign else 1.0
    W = np.zeros((dataset.dim, anchors.n_anchors))
    trace = TrainTrace(weights_log=[] if _trace_weights else None)
    every = cfg.record_objective_every
    for t in range(1, cfg.T + 1):
        if every and (t - 1) % every == 0:
            trace.objective_samples.append(
                (t, objective_local_ranking(dataset, LocalModel(W, anchors), cfg.lam))
            )
        i, j = pairs[int(rng.integers(len(pairs)))]
        scores_i = _instance_scores_local(bags[i].instances, coded[i], W)
        scores_j = _instance_scores_local(bags[j].instances, coded[j], W)
        star_i = int(np.argmax(scores_i))
        star_j = int(np.argmax(scores_j))
        eta = 1.0 / (cfg.lam * t)
        W *= 1.0 - eta * cfg.lam
        if scores_i[star_i] - scores_j[star_j] < 1.0:
            gap = float(bags[i].label - bags[j].label)
            W += (sign * eta * gap) * (
                np.outer(bags[i].instances[star_i], coded[i][star_i])
                - np.outer(bags[j].instances[star_j], coded[j][star_j])
            )
        _check_finite_weights(W, t)
        if _trace_weights:
            trace.weights_log.append(W.copy())

    model = LocalModel(
        W,
        anchors,
        meta={
            "lam": cfg.lam,
            "T": cfg.T,
            "seed": cfg.seed,
            "task": "ranking",
            "K": anchors.n_anchors,
            "sigma": anchors.sigma,
        },
    )
    if every:
        trace.objective_samples.append(
            (cfg.T + 1, objective_local_ranking(dataset, model, cfg.lam))
        )
    scores = [
        float(np.max(_instance_scores_local(b.instances, g, model.W)))
        for b, g in zip(bags, coded)
    ]
    trace.final_violations = sum(1 for i, j in pairs if scores[i] - scores[j] < 1.0)
    return model, trace
