"""Stochastic sub-gradient training for linear MIL classification and ranking.

Both loops start from w = 0 and run T iterations with learning rate
eta_t = 1/(lambda * t).  The classifier samples one bag per iteration and
updates along the hinge sub-gradient of that bag's loss; the ranker samples
one ordered pair (Y_I > Y_J) uniformly from the set of all such pairs,
materialized once up front.  The witness (argmax instance) is recomputed
against the current weights every iteration.  The returned weights are
w_{T+1}: no averaging, no projection.

Ranking update sign: descending the pairwise hinge
max(0, 1 - f_I + f_J)*(Y_I - Y_J) requires adding
eta*(x*_I - x*_J)*(Y_I - Y_J) on violation.  The mirrored update (which
increases the active pair loss) is available behind the test-only
``_mirror_update_sign`` flag so its divergence can be demonstrated.

Training is deterministic given (dataset order, config): all sampling comes
from a Philox generator keyed with ``cfg.seed`` drawing one index per
iteration (see :mod:`lemmings.rng`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    Bag,
    Dataset,
    DatasetError,
    LinearModel,
    WitnessResult,
    bag_score_linear,
    objective_classification,
    objective_ranking,
    ordered_pairs,
)
from .rng import make_rng


@dataclass(frozen=True)
class TrainConfig:
    """Solver hyperparameters: regularization, iteration count, seed."""

    lam: float
    T: int
    seed: int = 0
    record_objective_every: int = 0  # 0 = no objective sampling

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.record_objective_every < 0:
            raise ValueError("record_objective_every must be >= 0")


@dataclass
class TrainTrace:
    """Convergence diagnostics collected during one training run.

    ``objective_samples`` holds (iteration, objective) pairs: the objective
    of w_t is sampled at t = 1, 1+e, 1+2e, ... for sampling period e, plus a
    final sample (T+1, .) for the returned weights.  ``final_violations``
    counts bags (classification) or ordered pairs (ranking) whose margin is
    violated by the final weights.
    """

    objective_samples: list[tuple[int, float]] = field(default_factory=list)
    final_violations: int = 0
    weights_log: "list[np.ndarray] | None" = None  # per-iteration w_t, tests only


def default_iterations(n_bags: int) -> int:
    """Default iteration budget when none is given: 50 per bag."""
    return 50 * n_bags


def _check_finite_weights(w: np.ndarray, t: int) -> None:
    if not np.all(np.isfinite(w)):
        raise FloatingPointError(f"non-finite weights at iteration {t}")


def train_linear_classifier(
    dataset: Dataset, cfg: TrainConfig, _trace_weights: bool = False
) -> tuple[LinearModel, TrainTrace]:
    """Train the linear MIL classifier by stochastic sub-gradient descent."""
    if dataset.task != "classification":
        raise DatasetError(f"classifier needs a classification dataset, got {dataset.task}")
    bags = dataset.bags
    labels = dataset.labels().astype(np.float64)
    rng = make_rng(cfg.seed)

    w = np.zeros(dataset.dim)
    trace = TrainTrace(weights_log=[] if _trace_weights else None)
    every = cfg.record_objective_every
    for t in range(1, cfg.T + 1):
        if every and (t - 1) % every == 0:
            trace.objective_samples.append(
                (t, objective_classification(dataset, LinearModel(w), cfg.lam))
            )
        b = int(rng.integers(len(bags)))
        scores = bags[b].instances @ w
        star = int(np.argmax(scores))
        eta = 1.0 / (cfg.lam * t)
        w *= 1.0 - eta * cfg.lam
        if labels[b] * scores[star] < 1.0:
            w += (eta * labels[b]) * bags[b].instances[star]
        _check_finite_weights(w, t)
        if _trace_weights:
            trace.weights_log.append(w.copy())

    model = LinearModel(w, meta={"lam": cfg.lam, "T": cfg.T, "seed": cfg.seed, "task": "classification"})
    if every:
        trace.objective_samples.append(
            (cfg.T + 1, objective_classification(dataset, model, cfg.lam))
        )
    trace.final_violations = sum(
        1 for b in bags if b.label * bag_score_linear(b, model).score < 1.0
    )
    return model, trace


def train_linear_ranker(
    dataset: Dataset,
    cfg: TrainConfig,
    _trace_weights: bool = False,
    _mirror_update_sign: bool = False,
) -> tuple[LinearModel, TrainTrace]:
    """Train the linear MIL ranker on uniformly sampled ordered bag pairs."""
    bags = dataset.bags
    pairs = ordered_pairs([b.label for b in bags])
    if not pairs:
        raise DatasetError("ranking needs at least one pair of bags with distinct ranks")
    rng = make_rng(cfg.seed)

    sign = -1.0 if _mirror_update_sign else 1.0
    w = np.zeros(dataset.dim)
    trace = TrainTrace(weights_log=[] if _trace_weights else None)
    every = cfg.record_objective_every
    for t in range(1, cfg.T + 1):
        if every and (t - 1) % every == 0:
            trace.objective_samples.append(
                (t, objective_ranking(dataset, LinearModel(w), cfg.lam))
            )
        i, j = pairs[int(rng.integers(len(pairs)))]
        scores_i = bags[i].instances @ w
        scores_j = bags[j].instances @ w
        star_i = int(np.argmax(scores_i))
        star_j = int(np.argmax(scores_j))
        eta = 1.0 / (cfg.lam * t)
        w *= 1.0 - eta * cfg.lam
        if scores_i[star_i] - scores_j[star_j] < 1.0:
            gap = float(bags[i].label - bags[j].label)
            w += (sign * eta * gap) * (
                bags[i].instances[star_i] - bags[j].instances[star_j]
            )
        _check_finite_weights(w, t)
        if _trace_weights:
            trace.weights_log.append(w.copy())

    model = LinearModel(w, meta={"lam": cfg.lam, "T": cfg.T, "seed": cfg.seed, "task": "ranking"})
    if every:
        trace.objective_samples.append(
            (cfg.T + 1, objective_ranking(dataset, model, cfg.lam))
        )
    trace.final_violations = sum(
        1
        for i, j in pairs
        if bag_score_linear(bags[i], model).score - bag_score_linear(bags[j], model).score < 1.0
    )
    return model, trace


def predict_bags(model, bags: "list[Bag] | tuple[Bag, ...]") -> list[WitnessResult]:
    """Score bags element-wise with a linear or local model, preserving order."""
    from .local import LocalModel, bag_score_local  # local imports linear's config types

    if isinstance(model, LocalModel):
        return [bag_score_local(b, model) for b in bags]
    return [bag_score_linear(b, model) for b in bags]
