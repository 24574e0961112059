"""Epistemic network analysis: moving-window co-occurrence, means rotation,
node co-registration and mean/subtraction networks.

Adjacency vectors list the unordered code pairs ``(i, j)``, ``i < j``, in
row-major upper-triangle order over the canonical code ordering.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Hashable, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import DegenerateRotationError
from .parser import LabelledAction
from .trace import CODES, SrlProcess

CENTROID_CONVENTION = "(x_i + x_j) / 2, weights = raw / sum(raw)"


def code_pairs(n_codes: int = len(CODES)) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n_codes) for j in range(i + 1, n_codes)]


def n_codes_for(n_pairs: int) -> int:
    k = int(round((1 + np.sqrt(1 + 8 * n_pairs)) / 2))
    if k * (k - 1) // 2 != n_pairs:
        raise ValueError(f"{n_pairs} is not a triangular pair count")
    return k


def pair_labels(codes: Sequence = CODES) -> list[str]:
    names = [c.value if isinstance(c, SrlProcess) else str(c) for c in codes]
    return [f"{names[i]}|{names[j]}" for i, j in code_pairs(len(names))]


def pair_position(a: SrlProcess, b: SrlProcess) -> int:
    i, j = sorted((a.index, b.index))
    if i == j:
        raise ValueError("self-pairs have no position")
    return code_pairs().index((i, j))


@dataclass(frozen=True)
class CodedLine:
    unit_id: Hashable
    conversation_id: Hashable
    line_index: int
    codes: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class AdjacencyVector:
    unit_id: Hashable
    raw: np.ndarray
    normalized: np.ndarray

    @classmethod
    def from_raw(cls, unit_id: Hashable, raw) -> "AdjacencyVector":
        raw = np.asarray(raw, dtype=np.int64)
        if (raw < 0).any():
            raise ValueError("raw co-occurrence counts must be >= 0")
        norm = np.sqrt(np.dot(raw.astype(float), raw.astype(float)))
        normalized = raw / norm if norm > 0 else np.zeros(raw.shape, dtype=float)
        return cls(unit_id, raw, normalized)

    @property
    def is_degenerate(self) -> bool:
        return not self.raw.any()


def lines_matrix(lines) -> np.ndarray:
    """Binary ``(n_lines, n_codes)`` matrix from coded lines or an array."""
    if len(lines) and isinstance(lines[0], CodedLine):
        idx = [ln.line_index for ln in lines]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("line_index must be strictly increasing within a conversation")
        return np.array([ln.codes for ln in lines], dtype=bool)
    arr = np.asarray(lines)
    if arr.size == 0:
        return np.zeros((0, len(CODES)), dtype=bool)
    if arr.ndim != 2:
        raise ValueError("coded lines must form a 2-D array")
    return arr.astype(bool)


def accumulate(lines, window: int, unit_id: Hashable = None, n_codes: int | None = None) -> AdjacencyVector:
    """Binary moving-window co-occurrence counts for one unit.

    The window of line ``l`` spans lines ``max(0, l - window + 1) .. l``. For
    every pair ``(i, j)`` a referent line contributes 1 when it carries one
    code of the pair and its window carries the other.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    codes = lines_matrix(lines)
    if n_codes is not None and codes.shape[1] != n_codes:
        if codes.shape[0] == 0:
            codes = np.zeros((0, n_codes), dtype=bool)
        else:
            raise ValueError(f"expected {n_codes} codes per line, got {codes.shape[1]}")
    n, k = codes.shape
    iu = np.triu_indices(k, 1)
    if n == 0:
        return AdjacencyVector.from_raw(unit_id, np.zeros(len(iu[0]), dtype=np.int64))
    running = np.zeros((n + 1, k), dtype=np.int64)
    np.cumsum(codes, axis=0, out=running[1:])
    start = np.maximum(np.arange(n) - window + 1, 0)
    in_window = (running[1:] - running[start]) > 0
    hit = codes[:, :, None] & in_window[:, None, :]
    hit |= hit.transpose(0, 2, 1)
    counts = hit.sum(axis=0, dtype=np.int64)
    return AdjacencyVector.from_raw(unit_id, counts[iu])


def labelled_to_lines(labelled: Sequence[LabelledAction], drop_unlabelled: bool = False) -> np.ndarray:
    """One-hot code matrix; unlabelled actions become all-zero lines unless dropped."""
    rows = [la for la in labelled if la.process is not None] if drop_unlabelled else list(labelled)
    out = np.zeros((len(rows), len(CODES)), dtype=bool)
    for r, la in enumerate(rows):
        if la.process is not None:
            out[r, la.process.index] = True
    return out


@dataclass(frozen=True, eq=False)
class CenteredData:
    normalized: np.ndarray
    centered: np.ndarray
    grand_mean: np.ndarray
    degenerate: np.ndarray

    def __iter__(self):
        # allows ``centered, grand_mean = normalize_and_center(...)``
        return iter((self.centered, self.grand_mean))


def normalize_and_center(vectors: Sequence[AdjacencyVector]) -> CenteredData:
    """Stack normalized vectors and subtract the grand mean.

    Degenerate (all-zero) units do not contribute to the grand mean but keep
    their row, so they can still be projected.
    """
    if len(vectors) < 2:
        raise ValueError("need at least 2 units")
    normalized = np.vstack([v.normalized for v in vectors]).astype(float)
    degenerate = np.array([v.is_degenerate for v in vectors])
    if degenerate.all():
        raise ValueError("every unit has an all-zero network")
    grand_mean = normalized[~degenerate].mean(axis=0)
    return CenteredData(normalized, normalized - grand_mean, grand_mean, degenerate)


@dataclass(frozen=True, eq=False)
class NodeFit:
    positions: np.ndarray
    pearson: list[float | None]
    spearman: list[float | None]
    n_fitted: int

    def goodness_of_fit(self) -> list[dict]:
        return [{"pearson": p, "spearman": s} for p, s in zip(self.pearson, self.spearman)]


@dataclass(frozen=True, eq=False)
class EnaSpace:
    """A fitted embedding.

    ``basis`` holds the full set of directions (column 0 is the means-rotation
    axis when ``rotation == "means"``); ``n_report_dims`` of them are the ones
    reported and plotted.
    """

    basis: np.ndarray
    grand_mean: np.ndarray
    variance_explained: np.ndarray
    scores: np.ndarray
    fit_mask: np.ndarray
    rotation: str = "means"
    n_report_dims: int = 2
    nodes: NodeFit | None = None
    unit_ids: tuple = ()
    group_labels: tuple[str, str] | None = None

    @property
    def node_positions(self) -> np.ndarray | None:
        return None if self.nodes is None else self.nodes.positions

    @property
    def dimension_names(self) -> list[str]:
        first = "MR1" if self.rotation == "means" else "SVD1"
        return [first] + [f"SVD{d + 1}" for d in range(1, self.basis.shape[1])]

    def project(self, centered: np.ndarray) -> np.ndarray:
        return centered @ self.basis


def _orient(vectors: np.ndarray) -> np.ndarray:
    # deterministic sign: largest-magnitude entry of each column positive
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1
    return vectors * signs


def _numerical_rank(s: np.ndarray, shape: tuple[int, int]) -> int:
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > s[0] * max(shape) * np.finfo(float).eps))


def _variance_explained(fitted: np.ndarray, scores: np.ndarray) -> np.ndarray:
    total = fitted.var(axis=0).sum()
    if total == 0:
        return np.zeros(scores.shape[1])
    return scores.var(axis=0) / total


def means_rotation(
    centered,
    groups,
    fit_mask=None,
    n_report_dims: int = 2,
    unit_ids: Sequence = (),
    group_labels: tuple[str, str] | None = None,
) -> EnaSpace:
    """Means-rotated embedding of centered network data.

    ``groups`` is a boolean assignment (True = group A). The first axis is the
    unit-length difference of group A and group B mean rows; the remaining
    axes are the right-singular vectors of the data with that axis deflated
    out. Rows excluded by ``fit_mask`` are projected but do not shape the
    space.
    """
    grand_mean = None
    if isinstance(centered, CenteredData):
        if fit_mask is None:
            fit_mask = ~centered.degenerate
        grand_mean = centered.grand_mean
        centered = centered.centered
    x_all = np.asarray(centered, dtype=float)
    groups = np.asarray(groups).astype(bool)
    if groups.shape[0] != x_all.shape[0]:
        raise ValueError("one group assignment per unit is required")
    fit_mask = np.ones(len(x_all), dtype=bool) if fit_mask is None else np.asarray(fit_mask, dtype=bool)
    x = x_all[fit_mask]
    g = groups[fit_mask]
    if not g.any() or g.all():
        raise ValueError("means rotation needs two non-empty groups")

    diff = x[g].mean(axis=0) - x[~g].mean(axis=0)
    norm = np.linalg.norm(diff)
    if norm <= 1e-12:
        raise DegenerateRotationError(
            "group means are identical; fall back to plain SVD (svd_space)"
        )
    v1 = diff / norm

    deflated = x - np.outer(x @ v1, v1)
    _, s, vt = np.linalg.svd(deflated, full_matrices=False)
    rank = _numerical_rank(s, deflated.shape)
    rest = vt[:rank].T
    rest = rest - np.outer(v1, v1 @ rest)
    rest, _ = np.linalg.qr(rest) if rank else (rest, None)
    rest = _orient(rest) if rank else rest
    basis = np.column_stack([v1, rest])

    return EnaSpace(
        basis=basis,
        grand_mean=np.zeros(x_all.shape[1]) if grand_mean is None else grand_mean,
        variance_explained=_variance_explained(x, x @ basis),
        scores=x_all @ basis,
        fit_mask=fit_mask,
        rotation="means",
        n_report_dims=min(n_report_dims, basis.shape[1]),
        unit_ids=tuple(unit_ids),
        group_labels=group_labels,
    )


def svd_space(centered, fit_mask=None, n_report_dims: int = 2, unit_ids: Sequence = ()) -> EnaSpace:
    """Plain SVD embedding, the fallback when group means coincide."""
    grand_mean = None
    if isinstance(centered, CenteredData):
        if fit_mask is None:
            fit_mask = ~centered.degenerate
        grand_mean = centered.grand_mean
        centered = centered.centered
    x_all = np.asarray(centered, dtype=float)
    fit_mask = np.ones(len(x_all), dtype=bool) if fit_mask is None else np.asarray(fit_mask, dtype=bool)
    x = x_all[fit_mask]
    _, s, vt = np.linalg.svd(x, full_matrices=False)
    rank = _numerical_rank(s, x.shape)
    if rank == 0:
        raise DegenerateRotationError("centered data has rank 0")
    basis = _orient(vt[:rank].T)
    return EnaSpace(
        basis=basis,
        grand_mean=np.zeros(x_all.shape[1]) if grand_mean is None else grand_mean,
        variance_explained=_variance_explained(x, x @ basis),
        scores=x_all @ basis,
        fit_mask=fit_mask,
        rotation="svd",
        n_report_dims=min(n_report_dims, basis.shape[1]),
        unit_ids=tuple(unit_ids),
    )


def centroid_design(vectors: Sequence[AdjacencyVector]) -> tuple[np.ndarray, np.ndarray]:
    """Rows map node positions to unit centroids; returns (design, usable mask)."""
    raw = np.vstack([v.raw for v in vectors]).astype(float)
    k = n_codes_for(raw.shape[1])
    totals = raw.sum(axis=1)
    usable = totals > 0
    weights = np.zeros_like(raw)
    weights[usable] = raw[usable] / totals[usable, None]
    design = np.zeros((len(vectors), k))
    for p, (i, j) in enumerate(code_pairs(k)):
        design[:, i] += weights[:, p] / 2
        design[:, j] += weights[:, p] / 2
    return design, usable


def _correlation(fn, a: np.ndarray, b: np.ndarray) -> float | None:
    if np.ptp(a) <= 1e-12 or np.ptp(b) <= 1e-12:
        return None
    return float(fn(a, b)[0])


def fit_node_positions(space: EnaSpace, vectors: Sequence[AdjacencyVector]) -> NodeFit:
    """Least-squares node positions so unit centroids track unit scores.

    Each dimension is solved independently with the minimum-norm solution;
    units whose networks are empty are left out of the fit.
    """
    if len(vectors) != space.scores.shape[0]:
        raise ValueError("need one adjacency vector per scored unit")
    design, usable = centroid_design(vectors)
    if usable.sum() < 2:
        raise ValueError("fewer than 2 units with non-empty networks")
    a = design[usable]
    s = space.scores[usable]
    positions, *_ = np.linalg.lstsq(a, s, rcond=None)
    centroids = a @ positions
    pearson, spearman = [], []
    for d in range(s.shape[1]):
        r = _correlation(stats.pearsonr, centroids[:, d], s[:, d])
        rho = _correlation(stats.spearmanr, centroids[:, d], s[:, d])
        if r is None:
            warnings.warn(f"goodness of fit undefined on dimension {d + 1}: zero variance", RuntimeWarning)
        pearson.append(r)
        spearman.append(rho)
    return NodeFit(positions, pearson, spearman, int(usable.sum()))


@dataclass(frozen=True, eq=False)
class MeanNetwork:
    group_id: str
    edge_weights: np.ndarray
    member_count: int


@dataclass(frozen=True, eq=False)
class SubtractionNetwork:
    group_a: str
    group_b: str
    signed_weights: np.ndarray


def mean_network(vectors: Sequence[AdjacencyVector], group_id: str = "") -> MeanNetwork:
    if not vectors:
        raise ValueError(f"group {group_id!r} is empty")
    weights = np.vstack([v.normalized for v in vectors]).mean(axis=0)
    return MeanNetwork(group_id, weights, len(vectors))


def subtract_networks(a: MeanNetwork, b: MeanNetwork) -> SubtractionNetwork:
    if a.edge_weights.shape != b.edge_weights.shape:
        raise ValueError("networks use different code pairings")
    return SubtractionNetwork(a.group_id, b.group_id, a.edge_weights - b.edge_weights)


@dataclass(eq=False)
class EnaModel:
    """Everything one grouped ENA run produces."""

    unit_ids: list
    groups: list[str]
    group_labels: tuple[str, str]
    vectors: list[AdjacencyVector]
    data: CenteredData
    space: EnaSpace
    means: dict[str, MeanNetwork] = field(default_factory=dict)

    @property
    def degenerate_units(self) -> list:
        return [u for u, d in zip(self.unit_ids, self.data.degenerate) if d]

    def subtraction(self, a: str, b: str) -> SubtractionNetwork:
        return subtract_networks(self.means[a], self.means[b])

    def group_mean_scores(self, label: str) -> np.ndarray:
        mask = np.array([g == label for g in self.groups]) & self.space.fit_mask
        return self.space.scores[mask].mean(axis=0)


def fit_ena(
    units: Mapping[Hashable, np.ndarray],
    groups: Mapping[Hashable, str],
    group_labels: tuple[str, str],
    window: int = 50,
    n_report_dims: int = 2,
) -> EnaModel:
    """Accumulate, center, means-rotate and co-register a set of units.

    ``units`` maps unit id to its coded-line matrix; ``group_labels[0]`` is
    rotated to the positive side of the first axis.
    """
    ids = sorted(units)
    labels = [groups[u] for u in ids]
    unknown = set(labels) - set(group_labels)
    if unknown:
        raise ValueError(f"unexpected group labels {sorted(unknown)}")
    vectors = [accumulate(units[u], window, unit_id=u, n_codes=len(CODES)) for u in ids]
    data = normalize_and_center(vectors)
    assignment = np.array([lab == group_labels[0] for lab in labels])
    space = means_rotation(
        data, assignment, n_report_dims=n_report_dims, unit_ids=ids, group_labels=group_labels
    )
    space = replace(space, nodes=fit_node_positions(space, vectors))
    means = {
        label: mean_network([v for v, lab in zip(vectors, labels) if lab == label], label)
        for label in group_labels
    }
    return EnaModel(ids, labels, group_labels, vectors, data, space, means)
