"""Cross-validation protocols, hyperparameter search, and report assembly.

Protocol: for run r in 1..runs, bags are split into k folds with the seed
``derive_seed(master, r)``; each fold is held out once while the other
folds train a fresh model.  Held-out scores are pooled per run and the
run's metrics (accuracy, AUC-ROC, AUC-ROC at 10% FPR, AUC-PR) are computed
on the pool; the report gives mean and population standard deviation over
runs.  Classification models are thresholded at 0; ranking models get a
per-fold threshold tuned on the training bags (their scores have no
calibrated zero), which is applied before pooling for accuracy while the
area metrics always use the raw pooled scores.

Scaling (and the optional bias column) is fitted on the training folds only
and travels with the trained model, so held-out bags are transformed by
statistics they never influenced.

Fold jobs are independent; with ``jobs > 1`` they run in a process pool and
results are merged by (run, fold) index, never completion order, so the
report is identical for any worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Literal

import numpy as np

from .core import Bag, Dataset, DatasetError, as_ranking
from .data import fit_scaler, transform_bags
from .linear import (
    TrainConfig,
    default_iterations,
    predict_bags,
    train_linear_classifier,
    train_linear_ranker,
)
from .local import default_anchor_count, select_anchors, train_local_classifier, train_local_ranker
from .metrics import ScoredBag, accuracy, auc_pr, auc_roc, auc_roc_partial
from .rng import derive_seed, make_rng

METRIC_NAMES = ("accuracy", "auc_roc", "auc_roc_0.1", "auc_pr")


@dataclass(frozen=True)
class SolverSpec:
    """Which of the four solvers to run, and with what hyperparameters.

    ``iters=None`` means the 50-per-bag default, resolved against each
    training split.  ``anchors=None`` resolves to min(50, instance count).
    """

    solver: Literal["linear", "local"] = "linear"
    mode: Literal["class", "rank"] = "class"
    lam: float = 1e-3
    iters: "int | None" = None
    anchors: "int | None" = None
    sigma: float = 1.0
    anchor_method: Literal["kmeans", "random"] = "kmeans"
    scale: bool = True
    add_bias: bool = False

    def describe(self) -> dict:
        return {
            "solver": self.solver,
            "mode": self.mode,
            "lambda": self.lam,
            "iters": self.iters,
            "anchors": self.anchors if self.solver == "local" else None,
            "sigma": self.sigma if self.solver == "local" else None,
            "anchor_method": self.anchor_method if self.solver == "local" else None,
            "scale": self.scale,
            "add_bias": self.add_bias,
        }


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of every bag id to exactly one of k folds."""

    k: int
    assignments: dict[str, int]
    stratified: bool
    seed: int

    def fold_indices(self, dataset: Dataset) -> list[list[int]]:
        """Per-fold bag indices in dataset order."""
        folds: list[list[int]] = [[] for _ in range(self.k)]
        for i, b in enumerate(dataset.bags):
            folds[self.assignments[b.id]].append(i)
        return folds


def make_folds(dataset: Dataset, k: int, stratified: bool = True, seed: int = 0) -> FoldPlan:
    """Split bags into k folds, optionally stratified by bag label.

    Stratification shuffles each label class independently and deals bags
    round-robin, so per-class fold sizes differ by at most one.  The same
    seed always yields the same plan.
    """
    if k < 2:
        raise ValueError(f"need k >= 2 folds, got {k}")
    if k > dataset.n_bags:
        raise ValueError(f"k={k} exceeds the {dataset.n_bags} bags available")
    ids = [b.id for b in dataset.bags]
    if len(set(ids)) != len(ids):
        raise DatasetError("fold assignment needs unique bag ids")
    rng = make_rng(seed)
    assignments: dict[str, int] = {}
    if stratified:
        labels = dataset.labels()
        for lab in sorted(set(labels.tolist())):
            members = [i for i, l in enumerate(labels) if l == lab]
            if len(members) < k:
                raise ValueError(
                    f"stratified split needs >= k bags per class; label {lab} has {len(members)}"
                )
            order = rng.permutation(len(members))
            for slot, m in enumerate(order):
                assignments[ids[members[m]]] = slot % k
    else:
        order = rng.permutation(dataset.n_bags)
        for slot, m in enumerate(order):
            assignments[ids[m]] = slot % k
    return FoldPlan(k, assignments, stratified, seed)


def pick_threshold(train_scored: list[ScoredBag]) -> float:
    """Threshold maximizing training accuracy, scanning score midpoints.

    Candidates are the midpoints between consecutive sorted scores plus one
    sentinel below the minimum and one above the maximum; ties go to the
    candidate closest to zero.
    """
    labels = {s.true_label for s in train_scored}
    if not (1 in labels and -1 in labels):
        raise ValueError("threshold tuning needs both classes in the training scores")
    scores = sorted(s.score for s in train_scored)
    candidates = [scores[0] - 1.0, scores[-1] + 1.0]
    candidates += [(a + b) / 2.0 for a, b in zip(scores, scores[1:])]
    best = max(candidates, key=lambda t: (accuracy(train_scored, t), -abs(t), -t))
    return float(best)


@dataclass
class FoldOutcome:
    """Held-out scores for one fold plus the threshold its model was given."""

    fold: int
    scored: list[ScoredBag]
    threshold: float
    seconds: float


@dataclass
class RunResult:
    metrics: dict[str, float]
    fold_accuracy: list[float]
    seconds: float


@dataclass
class EvalReport:
    """Cross-validation outcome: per-run metrics and over-run aggregates.

    ``mean``/``std`` aggregate over runs (population standard deviation,
    ddof=0), matching a protocol that repeats the whole k-fold split
    ``runs`` times.  Wall-clock seconds are diagnostics and are excluded
    from the deterministic serialization (``to_dict``).
    """

    spec: dict
    k: int
    runs: list[RunResult]
    seed: int
    stratified: bool

    @property
    def mean(self) -> dict[str, float]:
        return {
            m: float(np.mean([r.metrics[m] for r in self.runs])) for m in METRIC_NAMES
        }

    @property
    def std(self) -> dict[str, float]:
        return {
            m: float(np.std([r.metrics[m] for r in self.runs])) for m in METRIC_NAMES
        }

    def to_dict(self) -> dict:
        return {
            "spec": self.spec,
            "folds": self.k,
            "stratified": self.stratified,
            "seed": self.seed,
            "runs": [
                {
                    "metrics": {m: r.metrics[m] for m in METRIC_NAMES},
                    "fold_accuracy": r.fold_accuracy,
                }
                for r in self.runs
            ],
            "mean": self.mean,
            "std": self.std,
        }

    def timing(self) -> dict:
        return {"seconds_per_run": [r.seconds for r in self.runs]}


def train_pipeline(dataset: Dataset, spec: SolverSpec, seed: int, anchor_seed: int = 0):
    """Fit scaler + anchors + solver on a dataset; returns the model.

    This is the single training path shared by the CLI and the CV harness.
    """
    bags = dataset.bags
    scaling = None
    if spec.scale:
        scaler = fit_scaler(np.vstack([b.instances for b in bags]))
        scaling = (scaler.means, scaler.stds)
    train_bags = transform_bags(bags, scaling, spec.add_bias)
    train_ds = Dataset(tuple(train_bags), train_bags[0].dim, dataset.task)
    if spec.mode == "rank":
        train_ds = as_ranking(train_ds)

    iters = spec.iters if spec.iters is not None else default_iterations(train_ds.n_bags)
    cfg = TrainConfig(lam=spec.lam, T=iters, seed=seed)
    if spec.solver == "linear":
        if spec.mode == "class":
            model, trace = train_linear_classifier(train_ds, cfg)
        else:
            model, trace = train_linear_ranker(train_ds, cfg)
    elif spec.solver == "local":
        k = spec.anchors if spec.anchors is not None else default_anchor_count(train_ds.n_instances)
        anchors = select_anchors(
            train_ds.all_instances(), k, method=spec.anchor_method,
            seed=anchor_seed, sigma=spec.sigma,
        )
        if spec.mode == "class":
            model, trace = train_local_classifier(train_ds, anchors, cfg)
        else:
            model, trace = train_local_ranker(train_ds, anchors, cfg)
    else:
        raise ValueError(f"unknown solver {spec.solver!r}")

    meta = dict(model.meta)
    meta["add_bias"] = spec.add_bias
    meta["mode"] = spec.mode
    return replace(model, meta=meta, scaling=scaling), trace


def pipeline_predict(model, bags) -> list:
    """Score raw bags through a trained model's scaling and bias settings."""
    prepared = transform_bags(bags, model.scaling, model.meta.get("add_bias", False))
    return predict_bags(model, prepared)


def _score_bags(model, bags) -> list[ScoredBag]:
    results = pipeline_predict(model, bags)
    return [
        ScoredBag(b.id, b.label, r.score) for b, r in zip(bags, results)
    ]


def _run_fold(
    dataset: Dataset,
    train_ix: list[int],
    test_ix: list[int],
    spec: SolverSpec,
    seed: int,
    anchor_seed: int,
    fold: int,
) -> FoldOutcome:
    t0 = time.perf_counter()
    train_ds = dataset.subset(train_ix)
    model, _ = train_pipeline(train_ds, spec, seed, anchor_seed)
    if spec.mode == "rank":
        threshold = pick_threshold(_score_bags(model, train_ds.bags))
    else:
        threshold = 0.0
    scored = _score_bags(model, [dataset.bags[i] for i in test_ix])
    return FoldOutcome(fold, scored, threshold, time.perf_counter() - t0)


def _fold_job(args):
    return _run_fold(*args)


def _run_metrics(outcomes: list[FoldOutcome]) -> RunResult:
    pooled = [s for o in outcomes for s in o.scored]
    adjusted = [
        ScoredBag(s.bag_id, s.true_label, s.score - o.threshold)
        for o in outcomes
        for s in o.scored
    ]
    metrics = {
        "accuracy": accuracy(adjusted, 0.0),
        "auc_roc": auc_roc(pooled),
        "auc_roc_0.1": auc_roc_partial(pooled, 0.1),
        "auc_pr": auc_pr(pooled),
    }
    fold_acc = [
        accuracy(
            [ScoredBag(s.bag_id, s.true_label, s.score - o.threshold) for s in o.scored],
            0.0,
        )
        for o in outcomes
    ]
    return RunResult(metrics, fold_acc, sum(o.seconds for o in outcomes))


def cross_validate(
    dataset: Dataset,
    spec: SolverSpec,
    k: int = 10,
    runs: int = 5,
    seed: int = 0,
    stratified: "bool | None" = None,
    jobs: int = 1,
) -> EvalReport:
    """k-fold cross-validation repeated ``runs`` times with derived seeds."""
    if stratified is None:
        stratified = set(dataset.labels().tolist()) <= {-1, 1}
    jobs = max(1, jobs)

    tasks = []
    layout = []  # (run, fold) in submission order
    for r in range(1, runs + 1):
        plan = make_folds(dataset, k, stratified=stratified, seed=derive_seed(seed, r))
        folds = plan.fold_indices(dataset)
        for f, test_ix in enumerate(folds):
            if not test_ix:
                raise DatasetError(f"fold {f} of run {r} is empty; lower k")
            train_ix = [i for i in range(dataset.n_bags) if i not in set(test_ix)]
            tasks.append(
                (dataset, train_ix, test_ix, spec,
                 derive_seed(seed, r, f, 0), derive_seed(seed, r, f, 1), f)
            )
            layout.append((r, f))

    if jobs == 1:
        outcomes = [_fold_job(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_fold_job, tasks, chunksize=1))

    by_run: dict[int, list[FoldOutcome]] = {}
    for (r, _f), outcome in zip(layout, outcomes):
        by_run.setdefault(r, []).append(outcome)
    run_results = [
        _run_metrics(sorted(by_run[r], key=lambda o: o.fold)) for r in sorted(by_run)
    ]
    return EvalReport(spec.describe(), k, run_results, seed, stratified)


def leave_one_bag_out(
    dataset: Dataset, spec: SolverSpec, seed: int = 0, jobs: int = 1
) -> EvalReport:
    """N train/test splits each holding out one bag; pooled metrics, one run."""
    if dataset.n_bags < 3:
        raise DatasetError("leave-one-bag-out needs at least 3 bags")
    return cross_validate(
        dataset, spec, k=dataset.n_bags, runs=1, seed=seed, stratified=False, jobs=jobs
    )


GRID_KEYS = ("lam", "anchors", "sigma", "anchor_method")


def grid_search(
    dataset: Dataset,
    spec: SolverSpec,
    grid: dict[str, list],
    inner_k: int = 3,
    seed: int = 0,
    jobs: int = 1,
) -> tuple[dict, EvalReport, list[tuple[dict, float]]]:
    """Exhaustive search maximizing single-run inner-CV pooled AUC-ROC.

    Every combination is evaluated on the same inner folds.  Ties prefer
    simpler models: larger lambda, then fewer anchors, then smaller sigma,
    then k-means over random anchors.  Returns the winning parameters, the
    winner's inner report, and the full (params, AUC) table.
    """
    if not grid:
        raise ValueError("empty hyperparameter grid")
    unknown = set(grid) - set(GRID_KEYS)
    if unknown:
        raise ValueError(f"unknown grid keys {sorted(unknown)}; valid: {GRID_KEYS}")
    keys = [k for k in GRID_KEYS if k in grid]
    combos = [dict(zip(keys, values)) for values in product(*(grid[k] for k in keys))]

    table: list[tuple[dict, float]] = []
    reports: list[EvalReport] = []
    for combo in combos:
        candidate = replace(spec, **combo)
        report = cross_validate(
            dataset, candidate, k=inner_k, runs=1, seed=seed, jobs=jobs
        )
        table.append((combo, report.mean["auc_roc"]))
        reports.append(report)

    def rank(ix: int):
        combo, auc = table[ix]
        return (
            auc,
            combo.get("lam", spec.lam),
            -(combo.get("anchors") or 0),
            -combo.get("sigma", spec.sigma),
            1 if combo.get("anchor_method", spec.anchor_method) == "kmeans" else 0,
            -ix,
        )

    best_ix = max(range(len(combos)), key=rank)
    return combos[best_ix], reports[best_ix], table
