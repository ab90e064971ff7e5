"""Bags, datasets, models, and the max-scoring-instance decision functions.

An instance is a 1-D float64 feature vector; a bag stores its instances as
the rows of a read-only (m, d) array.  Labels are integers: -1/+1 for
classification, arbitrary integer ranks for ranking.  A bag's score under a
model is the score of its highest-scoring instance (the *witness*), with
argmax ties broken by the lowest instance index.

Everything here is immutable after construction and safe to share across
worker processes or threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

Task = Literal["classification", "ranking"]


class DimensionMismatchError(ValueError):
    """Model and data disagree on feature dimensionality."""

    def __init__(self, model_dim: int, data_dim: int):
        super().__init__(
            f"dimension mismatch: model has d={model_dim}, data has d={data_dim}"
        )
        self.model_dim = model_dim
        self.data_dim = data_dim


class DatasetError(ValueError):
    """A dataset violates a structural precondition (labels, pairs, size)."""


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float64)
    out.setflags(write=False)
    return out


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite values")


@dataclass(frozen=True)
class Bag:
    """A non-empty group of instances sharing one bag-level label or rank."""

    id: str
    instances: np.ndarray  # (m, d), read-only
    label: int

    def __post_init__(self):
        inst = np.atleast_2d(np.asarray(self.instances, dtype=np.float64))
        if inst.shape[0] < 1 or inst.shape[1] < 1:
            raise ValueError(f"bag {self.id!r} must contain at least one instance")
        _check_finite(inst, f"bag {self.id!r}")
        object.__setattr__(self, "instances", _freeze(inst))
        object.__setattr__(self, "label", int(self.label))

    @property
    def size(self) -> int:
        return self.instances.shape[0]

    @property
    def dim(self) -> int:
        return self.instances.shape[1]


@dataclass(frozen=True)
class Dataset:
    """Bags plus the task they were labeled for.

    Instances are owned by exactly one bag (bags hold their own arrays), so
    non-overlap is structural.  Classification datasets must contain both
    classes with labels in {-1, +1}; ranking datasets need at least two
    distinct rank values.
    """

    bags: tuple[Bag, ...]
    dim: int
    task: Task

    def __post_init__(self):
        object.__setattr__(self, "bags", tuple(self.bags))
        if not self.bags:
            raise DatasetError("dataset has no bags")
        dims = {b.dim for b in self.bags}
        if dims != {self.dim}:
            raise DatasetError(f"inconsistent instance dimensions {sorted(dims)}, expected {{{self.dim}}}")
        labels = {b.label for b in self.bags}
        if self.task == "classification":
            if not labels <= {-1, 1}:
                raise DatasetError(f"classification labels must be -1/+1, got {sorted(labels)}")
            if labels != {-1, 1}:
                raise DatasetError("classification dataset needs at least one bag of each class")
        elif self.task == "ranking":
            if len(labels) < 2:
                raise DatasetError("ranking dataset needs at least two distinct rank values")
        else:
            raise DatasetError(f"unknown task {self.task!r}")

    @property
    def n_bags(self) -> int:
        return len(self.bags)

    @property
    def n_instances(self) -> int:
        return sum(b.size for b in self.bags)

    def labels(self) -> np.ndarray:
        return np.array([b.label for b in self.bags], dtype=np.int64)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        """New dataset holding the selected bags (same task, same dim)."""
        return Dataset(tuple(self.bags[i] for i in indices), self.dim, self.task)

    def all_instances(self) -> np.ndarray:
        """All instance rows stacked in bag order, (n, d)."""
        return np.vstack([b.instances for b in self.bags])


def make_dataset(bags: Sequence[Bag], task: Task) -> Dataset:
    """Dataset from bags, inferring d from the first bag."""
    bags = tuple(bags)
    if not bags:
        raise DatasetError("dataset has no bags")
    return Dataset(bags, bags[0].dim, task)


def as_ranking(dataset: Dataset) -> Dataset:
    """View a classification dataset as a 2-rank ranking problem.

    Labels map -1 -> rank 1 and +1 -> rank 2 so that every ordered pair has
    unit rank difference and the ranker's loss scale matches the
    classifier's.  Ranking datasets pass through unchanged.
    """
    if dataset.task == "ranking":
        return dataset
    bags = tuple(
        Bag(b.id, b.instances, 2 if b.label > 0 else 1) for b in dataset.bags
    )
    return Dataset(bags, dataset.dim, "ranking")


@dataclass(frozen=True)
class LinearModel:
    """Weight vector for the linear bag decision f(B) = max_x <w, x>."""

    w: np.ndarray  # (d,)
    scaling: "tuple[np.ndarray, np.ndarray] | None" = None  # (means, stds)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        _check_finite(w, "model weights")
        object.__setattr__(self, "w", _freeze(w))
        if self.scaling is not None:
            means, stds = self.scaling
            means = _freeze(np.asarray(means, dtype=np.float64).reshape(-1))
            stds = _freeze(np.asarray(stds, dtype=np.float64).reshape(-1))
            if np.any(stds <= 0):
                raise ValueError("scaler stddevs must be positive")
            object.__setattr__(self, "scaling", (means, stds))

    @property
    def dim(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class WitnessResult:
    """Bag score plus the index of the instance that achieved it."""

    score: float
    index: int


def instance_scores_linear(bag: Bag, w: np.ndarray) -> np.ndarray:
    """Per-instance decision values <w, x> for one bag."""
    if bag.dim != w.shape[0]:
        raise DimensionMismatchError(w.shape[0], bag.dim)
    return bag.instances @ w


def bag_score_linear(bag: Bag, model: LinearModel) -> WitnessResult:
    """Max instance score and its argmax index (lowest index on ties)."""
    scores = instance_scores_linear(bag, model.w)
    ix = int(np.argmax(scores))  # np.argmax returns the first maximizer
    return WitnessResult(float(scores[ix]), ix)


def hinge_loss_classification(bag: Bag, model: LinearModel) -> float:
    """max(0, 1 - Y * f(B)) for a -1/+1 labeled bag."""
    f = bag_score_linear(bag, model).score
    return max(0.0, 1.0 - bag.label * f)


def hinge_loss_ranking(bag_i: Bag, bag_j: Bag, model: LinearModel) -> float:
    """max(0, 1 - f(B_I) + f(B_J)) * (Y_I - Y_J), requiring Y_I > Y_J."""
    if bag_i.label <= bag_j.label:
        raise ValueError(
            f"ranking loss needs Y_I > Y_J, got {bag_i.label} <= {bag_j.label}"
        )
    f_i = bag_score_linear(bag_i, model).score
    f_j = bag_score_linear(bag_j, model).score
    return max(0.0, 1.0 - f_i + f_j) * (bag_i.label - bag_j.label)


def ordered_pairs(labels: Sequence[int]) -> list[tuple[int, int]]:
    """All index pairs (i, j) with label_i > label_j, in row-major order."""
    n = len(labels)
    return [(i, j) for i in range(n) for j in range(n) if labels[i] > labels[j]]


def objective_classification(dataset: Dataset, model: LinearModel, lam: float) -> float:
    """lam/2 ||w||^2 + mean bag hinge loss; exact, for diagnostics."""
    if lam <= 0:
        raise ValueError(f"regularization parameter must be positive, got {lam}")
    reg = 0.5 * lam * float(model.w @ model.w)
    losses = [hinge_loss_classification(b, model) for b in dataset.bags]
    return reg + float(np.mean(losses))


def objective_ranking(dataset: Dataset, model: LinearModel, lam: float) -> float:
    """lam/2 ||w||^2 + mean pairwise hinge over all ordered pairs."""
    if lam <= 0:
        raise ValueError(f"regularization parameter must be positive, got {lam}")
    pairs = ordered_pairs([b.label for b in dataset.bags])
    if not pairs:
        raise DatasetError("ranking objective needs at least one ordered pair")
    scores = [bag_score_linear(b, model).score for b in dataset.bags]
    total = 0.0
    for i, j in pairs:
        total += max(0.0, 1.0 - scores[i] + scores[j]) * (
            dataset.bags[i].label - dataset.bags[j].label
        )
    reg = 0.5 * lam * float(model.w @ model.w)
    return reg + total / len(pairs)
