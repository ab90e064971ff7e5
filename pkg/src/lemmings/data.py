"""Dataset ingestion, feature scaling, and sequence-to-bag construction.

File formats
------------
MUSK CSV (UCI clean1/clean2 layout, optionally gzip-compressed):
    molecule_name,conformation_name,f1,...,f166,class
Rows sharing a molecule name form one bag; class 0 maps to label -1 and
class 1 to +1.

Generic bag file (UTF-8 text, optionally gzip-compressed):
    bag_id<TAB>label<TAB>f1,f2,...,fd
``#`` starts a comment line; blank lines are ignored; lines sharing a
bag_id are merged into one bag in file order.  Labels outside {-1, +1}
switch the inferred task to ranking.

FASTA plus a sidecar annotation file ``seq_id<TAB>start<TAB>end`` (1-based,
inclusive) describe annotated sequences for window-bag construction.
"""

from __future__ import annotations

import gzip
import io
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import Bag, Dataset, DatasetError, Task, make_dataset

MUSK_FEATURES = 166

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
_AA_INDEX = {a: i for i, a in enumerate(AMINO_ACIDS)}


class DataFormatError(ValueError):
    """A data file does not match its documented format."""


def _open_text(path) -> io.TextIOBase:
    """Open a text file, transparently decompressing ``.gz`` paths."""
    if str(path).endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, "r", encoding="utf-8")


# ---------------------------------------------------------------------------
# MUSK loader


def load_musk(path) -> Dataset:
    """Load a UCI MUSK file into bags grouped by molecule name."""
    order: list[str] = []
    feats: dict[str, list[np.ndarray]] = {}
    labels: dict[str, int] = {}
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != MUSK_FEATURES + 3:
                raise DataFormatError(
                    f"row {lineno}: expected {MUSK_FEATURES + 3} comma-separated fields, got {len(parts)}"
                )
            mol = parts[0]
            try:
                x = np.array([float(v) for v in parts[2:-1]])
                cls = float(parts[-1])
            except ValueError as exc:
                raise DataFormatError(f"row {lineno}: non-numeric field ({exc})") from None
            if cls not in (0.0, 1.0):
                raise DataFormatError(f"row {lineno}: class must be 0 or 1, got {parts[-1]!r}")
            label = 1 if cls == 1.0 else -1
            if mol not in feats:
                order.append(mol)
                feats[mol] = []
                labels[mol] = label
            elif labels[mol] != label:
                raise DataFormatError(f"row {lineno}: molecule {mol!r} has inconsistent class labels")
            feats[mol].append(x)
    if not order:
        raise DataFormatError(f"{path}: empty MUSK file")
    bags = [Bag(mol, np.vstack(feats[mol]), labels[mol]) for mol in order]
    return make_dataset(bags, "classification")


# ---------------------------------------------------------------------------
# Generic bag files


def read_bag_file(path) -> list[Bag]:
    """Parse a generic bag file into bags (no dataset-level validation)."""
    order: list[str] = []
    rows: dict[str, list[np.ndarray]] = {}
    labels: dict[str, int] = {}
    dim = None
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataFormatError(
                    f"line {lineno}: expected bag_id<TAB>label<TAB>features, got {len(parts)} fields"
                )
            bag_id, label_s, feat_s = parts
            try:
                label = int(label_s)
                x = np.array([float(v) for v in feat_s.split(",")])
            except ValueError as exc:
                raise DataFormatError(f"line {lineno}: {exc}") from None
            if dim is None:
                dim = x.shape[0]
            elif x.shape[0] != dim:
                raise DataFormatError(
                    f"line {lineno}: expected {dim} features, got {x.shape[0]}"
                )
            if bag_id not in rows:
                order.append(bag_id)
                rows[bag_id] = []
                labels[bag_id] = label
            elif labels[bag_id] != label:
                raise DataFormatError(f"line {lineno}: bag {bag_id!r} has inconsistent labels")
            rows[bag_id].append(x)
    return [Bag(b, np.vstack(rows[b]), labels[b]) for b in order]


def infer_task(bags: Sequence[Bag]) -> Task:
    """Classification iff every label is -1/+1, else ranking."""
    labels = {b.label for b in bags}
    return "classification" if labels <= {-1, 1} else "ranking"


def load_bags(path) -> Dataset:
    """Load a generic bag file, inferring the task from its labels."""
    bags = read_bag_file(path)
    if not bags:
        raise DataFormatError(f"{path}: no bags found")
    return make_dataset(bags, infer_task(bags))


def save_bags(dataset_or_bags, path) -> None:
    """Write bags in the generic format at 17 significant digits."""
    bags = dataset_or_bags.bags if isinstance(dataset_or_bags, Dataset) else dataset_or_bags
    with open(path, "w", encoding="utf-8") as fh:
        for b in bags:
            for row in b.instances:
                feats = ",".join(f"{v:.17g}" for v in row)
                fh.write(f"{b.id}\t{b.label}\t{feats}\n")


# ---------------------------------------------------------------------------
# Feature scaling


@dataclass(frozen=True)
class FeatureScaler:
    """Per-feature z-score parameters fitted on training instances only.

    Features constant on the training data keep stddev 1, so they pass
    through centered but unscaled (inert).
    """

    means: np.ndarray
    stds: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.means) / self.stds


def fit_scaler(train_instances: np.ndarray) -> FeatureScaler:
    """Fit per-feature mean/std (population formula) on (n, d) rows."""
    X = np.atleast_2d(np.asarray(train_instances, dtype=np.float64))
    if X.shape[0] < 2:
        raise ValueError("scaler needs at least 2 training instances")
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    stds = np.where(stds > 0, stds, 1.0)
    return FeatureScaler(means, stds)


def apply_scaler(dataset: Dataset, scaler: FeatureScaler) -> Dataset:
    """Transform every bag of a dataset with a fitted scaler."""
    bags = tuple(
        Bag(b.id, scaler.transform(b.instances), b.label) for b in dataset.bags
    )
    return Dataset(bags, dataset.dim, dataset.task)


def transform_bags(
    bags: Sequence[Bag],
    scaling: "tuple[np.ndarray, np.ndarray] | None",
    add_bias: bool = False,
) -> list[Bag]:
    """Apply stored (means, stds) scaling, then optionally append a 1 column.

    The bias column is appended after scaling so it stays constant.
    """
    out = []
    for b in bags:
        X = b.instances
        if scaling is not None:
            means, stds = scaling
            X = (X - means) / stds
        if add_bias:
            X = np.hstack([X, np.ones((X.shape[0], 1))])
        out.append(Bag(b.id, X, b.label))
    return out


# ---------------------------------------------------------------------------
# Sequence windows and amino-acid composition


@dataclass(frozen=True)
class SequenceAnnotation:
    """An amino-acid sequence with 1-based inclusive annotated regions."""

    sequence: str
    regions: tuple[tuple[int, int], ...]
    id: str = "seq"

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple((int(s), int(e)) for s, e in self.regions))
        n = len(self.sequence)
        prev_end = 0
        for start, end in self.regions:
            if not (1 <= start <= end <= n):
                raise ValueError(
                    f"{self.id}: region ({start},{end}) outside sequence of length {n}"
                )
            if start <= prev_end:
                raise ValueError(f"{self.id}: regions must be sorted and non-overlapping")
            prev_end = end


def aac_features(window: str, skip_unknown: bool = False) -> np.ndarray:
    """20-dim amino-acid composition: per-residue frequencies summing to 1."""
    if not window:
        raise ValueError("cannot compute composition of an empty window")
    counts = np.zeros(len(AMINO_ACIDS))
    for ch in window.upper():
        ix = _AA_INDEX.get(ch)
        if ix is None:
            if skip_unknown:
                continue
            raise ValueError(f"unknown residue {ch!r} (use skip_unknown to ignore)")
        counts[ix] += 1
    total = counts.sum()
    if total == 0:
        raise ValueError("window has no standard residues")
    return counts / total


def classify_window_starts(
    seq_len: int,
    window_len: int,
    regions: Sequence[tuple[int, int]],
    stride: int = 1,
) -> tuple[list[list[int]], list[int]]:
    """Assign each window start to a region, the remainder, or neither.

    Returns (per-region positive starts, negative starts), all 1-based.
    A window [s, s+L-1] is positive for a region it lies fully inside and
    negative when it overlaps no region at all; windows partially
    overlapping a region are discarded.
    """
    if window_len > seq_len:
        raise ValueError(f"window length {window_len} exceeds sequence length {seq_len}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    positives: list[list[int]] = [[] for _ in regions]
    negatives: list[int] = []
    for s in range(1, seq_len - window_len + 2, stride):
        e = s + window_len - 1
        inside = [i for i, (rs, re) in enumerate(regions) if rs <= s and e <= re]
        if inside:
            positives[inside[0]].append(s)
            continue
        overlaps = any(s <= re and rs <= e for rs, re in regions)
        if not overlaps:
            negatives.append(s)
    return positives, negatives


def windows_to_bags(
    annotated: SequenceAnnotation,
    window_len: int,
    stride: int = 1,
    featurizer: Callable[[str], np.ndarray] = aac_features,
) -> tuple[list[Bag], Bag]:
    """Build one positive bag per annotated region and one negative bag.

    Every window fully inside a region joins that region's positive bag;
    every window with zero region overlap joins the sequence's single
    negative bag; boundary windows are dropped.  Empty positive or negative
    bags are errors (a region shorter than the window, or annotations
    covering everything).
    """
    seq = annotated.sequence
    positives, negatives = classify_window_starts(
        len(seq), window_len, annotated.regions, stride
    )
    pos_bags = []
    for (start, end), starts in zip(annotated.regions, positives):
        if not starts:
            raise ValueError(
                f"{annotated.id}: region ({start},{end}) is shorter than the window "
                f"(no fully-contained window of length {window_len})"
            )
        X = np.vstack([featurizer(seq[s - 1 : s - 1 + window_len]) for s in starts])
        pos_bags.append(Bag(f"{annotated.id}:pos:{start}-{end}", X, 1))
    if not negatives:
        raise ValueError(
            f"{annotated.id}: no windows clear of the annotated regions (negative bag would be empty)"
        )
    Xn = np.vstack([featurizer(seq[s - 1 : s - 1 + window_len]) for s in negatives])
    neg_bag = Bag(f"{annotated.id}:neg", Xn, -1)
    return pos_bags, neg_bag


def read_fasta(path) -> dict[str, str]:
    """Minimal FASTA reader: id (first token after '>') -> sequence."""
    seqs: dict[str, str] = {}
    current = None
    parts: list[str] = []
    with _open_text(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith(">"):
                if current is not None:
                    seqs[current] = "".join(parts)
                current = line[1:].split()[0]
                if not current:
                    raise DataFormatError(f"{path}: FASTA header with no id")
                if current in seqs:
                    raise DataFormatError(f"{path}: duplicate sequence id {current!r}")
                parts = []
            else:
                if current is None:
                    raise DataFormatError(f"{path}: sequence data before first header")
                parts.append(line)
    if current is not None:
        seqs[current] = "".join(parts)
    if not seqs:
        raise DataFormatError(f"{path}: no sequences found")
    return seqs


def read_annotations(path) -> dict[str, list[tuple[int, int]]]:
    """Sidecar annotations ``seq_id<TAB>start<TAB>end`` grouped by sequence."""
    regions: dict[str, list[tuple[int, int]]] = {}
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataFormatError(
                    f"line {lineno}: expected seq_id<TAB>start<TAB>end, got {len(parts)} fields"
                )
            try:
                start, end = int(parts[1]), int(parts[2])
            except ValueError:
                raise DataFormatError(f"line {lineno}: start/end must be integers") from None
            regions.setdefault(parts[0], []).append((start, end))
    for spans in regions.values():
        spans.sort()
    return regions


def annotated_sequences(
    fasta_path, annotations_path
) -> list[SequenceAnnotation]:
    """Join a FASTA file with its sidecar annotations (missing ids -> no regions)."""
    seqs = read_fasta(fasta_path)
    regions = read_annotations(annotations_path)
    unknown = set(regions) - set(seqs)
    if unknown:
        raise DataFormatError(f"annotations reference unknown sequence ids: {sorted(unknown)}")
    return [
        SequenceAnnotation(seq, tuple(regions.get(sid, [])), id=sid)
        for sid, seq in seqs.items()
    ]
