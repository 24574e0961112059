"""Group comparison statistics: median split, OLS, percentile bootstrap, Cohen's d."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np
from scipy import stats as sps

from .errors import RankDeficiencyError
from .trace import EducationLevel, SessionMetadata

INTERCEPT = "intercept"

MODEL_COLUMNS: dict[str, tuple[str, ...]] = {
    "M1": (INTERCEPT, "performance_low", "school_1", "pretest_score", "task_length"),
    "M2": (INTERCEPT, "performance_low", "cet4_score", "pretest_score", "task_length"),
    "M3": (INTERCEPT, "performance_low", "level_SE", "pretest_score"),
}
# factor of interest per model: the indicator the ENA dimension was rotated on
MODEL_FACTOR = {"M1": "performance_low", "M2": "performance_low", "M3": "level_SE"}
# row order used when several models are tabulated together
TABLE_ROWS = (INTERCEPT, "performance_low", "school_1", "cet4_score", "level_SE", "pretest_score", "task_length")


# --- group assignment -------------------------------------------------------


def median(values: Sequence[float]) -> float:
    if not len(values):
        raise ValueError("median of an empty sample")
    return float(np.median(np.asarray(values, dtype=float)))


def median_split(scores: Mapping[Hashable, float], tie: str = "low") -> dict[Hashable, str]:
    """Assign ``"high"`` above the sample median and ``"low"`` below it.

    Units scoring exactly the median go to the ``tie`` group.
    """
    if tie not in ("low", "high"):
        raise ValueError("tie must be 'low' or 'high'")
    if len(scores) < 2:
        raise ValueError("median split needs at least 2 units")
    m = median(list(scores.values()))
    return {u: ("high" if s > m else "low" if s < m else tie) for u, s in scores.items()}


# --- design matrices --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    response: np.ndarray
    columns: dict[str, np.ndarray]
    model_id: str | None = None
    unit_ids: tuple = ()

    def __post_init__(self) -> None:
        y = np.asarray(self.response, dtype=float)
        cols = {name: np.asarray(col, dtype=float) for name, col in self.columns.items()}
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "columns", cols)
        if self.model_id is not None:
            expected = MODEL_COLUMNS.get(self.model_id)
            if expected is None:
                raise ValueError(f"unknown model {self.model_id!r}")
            if tuple(cols) != expected:
                raise ValueError(f"{self.model_id} needs columns {expected}, got {tuple(cols)}")
        n = len(y)
        for name, col in cols.items():
            if col.shape != (n,):
                raise ValueError(f"column {name!r} has shape {col.shape}, expected ({n},)")
            if not np.isfinite(col).all():
                raise ValueError(f"column {name!r} has missing or non-finite values")
        if n <= len(cols):
            raise RankDeficiencyError(f"need more observations ({n}) than columns ({len(cols)})")
        for name, col in cols.items():
            if name != INTERCEPT and np.ptp(col) == 0:
                raise RankDeficiencyError(f"column {name!r} is constant")
        if np.linalg.matrix_rank(self.X) < len(cols):
            raise RankDeficiencyError("design matrix columns are collinear")

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    @property
    def X(self) -> np.ndarray:
        return np.column_stack(list(self.columns.values()))

    @property
    def n_obs(self) -> int:
        return len(self.response)

    def with_column(self, name: str, values) -> "DesignMatrix":
        cols = dict(self.columns)
        cols[name] = np.asarray(values, dtype=float)
        return DesignMatrix(self.response, cols, None, self.unit_ids)


def build_design(
    model_id: str,
    response: Mapping[Hashable, float],
    metadata: Mapping[Hashable, SessionMetadata],
    performance: Mapping[Hashable, str],
    school_reference: str | None = None,
) -> DesignMatrix:
    """Assemble one of the M1/M2/M3 designs for the units in ``response``.

    Baselines: performance "high", level HE and the ``school_reference``
    school. ``school_1`` is 1 for the other school (exactly two schools).
    """
    if model_id not in MODEL_COLUMNS:
        raise ValueError(f"unknown model {model_id!r}")
    units = sorted(response)
    metas = [metadata[u] for u in units]
    cols: dict[str, list[float]] = {}
    for name in MODEL_COLUMNS[model_id]:
        if name == INTERCEPT:
            cols[name] = [1.0] * len(units)
        elif name == "performance_low":
            cols[name] = [1.0 if performance[u] == "low" else 0.0 for u in units]
        elif name == "school_1":
            if school_reference is None:
                raise ValueError("M1 needs an explicit school reference level")
            schools = sorted({m.school_id for m in metas})
            if school_reference not in schools or len(schools) != 2:
                raise ValueError(f"school_1 needs exactly two schools including {school_reference!r}, found {schools}")
            cols[name] = [0.0 if m.school_id == school_reference else 1.0 for m in metas]
        elif name == "cet4_score":
            if any(m.cet4_score is None for m in metas):
                raise ValueError("cet4_score missing for some units")
            cols[name] = [m.cet4_score for m in metas]
        elif name == "level_SE":
            cols[name] = [1.0 if m.education_level is EducationLevel.SE else 0.0 for m in metas]
        elif name == "pretest_score":
            cols[name] = [m.pretest_score for m in metas]
        elif name == "task_length":
            cols[name] = [m.task_length_minutes for m in metas]
    return DesignMatrix(np.array([response[u] for u in units]), cols, model_id, tuple(units))


# --- OLS --------------------------------------------------------------------


@dataclass
class RegressionResult:
    names: list[str]
    coefficients: dict[str, float]
    standard_errors: dict[str, float]
    t_values: dict[str, float]
    p_values: dict[str, float]
    r_squared: float
    f_value: float | None
    f_p_value: float | None
    n_obs: int
    df_resid: int
    residual_se: float
    model_id: str | None = None
    bootstrap_ci: dict[str, tuple[float, float]] | None = None
    bootstrap_redraws: int = 0
    cohens_d: float | None = None
    cohens_d_ci: tuple[float, float] | None = None
    interactions: list["InteractionTerm"] = field(default_factory=list)

    def to_dict(self) -> dict:
        def pair(t):
            return None if t is None else [float(t[0]), float(t[1])]

        return {
            "model": self.model_id,
            "n_obs": self.n_obs,
            "df_resid": self.df_resid,
            "coefficients": {
                n: {
                    "beta": self.coefficients[n],
                    "se": self.standard_errors[n],
                    "t": self.t_values[n],
                    "p": self.p_values[n],
                    "ci_beta": pair(self.bootstrap_ci.get(n)) if self.bootstrap_ci else None,
                }
                for n in self.names
            },
            "residual_se": self.residual_se,
            "r_squared": self.r_squared,
            "f_value": self.f_value,
            "f_p_value": self.f_p_value,
            "bootstrap_redraws": self.bootstrap_redraws,
            "cohens_d": self.cohens_d,
            "ci_cohens_d": pair(self.cohens_d_ci),
            "interactions": [t.to_dict() for t in self.interactions],
        }


def _has_intercept(X: np.ndarray) -> bool:
    return bool(np.any(np.all(X == X[0], axis=0) & (X[0] != 0)))


def ols_fit(design: DesignMatrix) -> RegressionResult:
    """Least squares via QR with classical standard errors, t tests and F test."""
    X, y = design.X, design.response
    n, k = X.shape
    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    if diag.min() <= diag.max() * max(n, k) * np.finfo(float).eps:
        raise RankDeficiencyError("design matrix is rank deficient")
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    df = n - k
    sigma2 = rss / df
    r_inv = np.linalg.inv(r)
    se = np.sqrt(sigma2 * np.sum(r_inv**2, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = beta / se
    p = 2 * sps.t.sf(np.abs(t), df)

    if _has_intercept(X):
        tss = float(np.sum((y - y.mean()) ** 2))
        df_model = k - 1
    else:
        tss = float(y @ y)
        df_model = k
    r2 = 1 - rss / tss if tss > 0 else 1.0
    if df_model > 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            f = ((tss - rss) / df_model) / sigma2 if sigma2 > 0 else math.inf
        f_p = float(sps.f.sf(f, df_model, df))
    else:
        f, f_p = None, None

    names = design.names
    return RegressionResult(
        names=names,
        coefficients=dict(zip(names, map(float, beta))),
        standard_errors=dict(zip(names, map(float, se))),
        t_values=dict(zip(names, map(float, t))),
        p_values=dict(zip(names, map(float, p))),
        r_squared=float(r2),
        f_value=None if f is None else float(f),
        f_p_value=f_p,
        n_obs=n,
        df_resid=df,
        residual_se=math.sqrt(sigma2),
        model_id=design.model_id,
    )


@dataclass(frozen=True)
class InteractionTerm:
    covariate: str
    name: str
    coefficient: float
    p_value: float

    def to_dict(self) -> dict:
        return {"covariate": self.covariate, "term": self.name, "beta": self.coefficient, "p": self.p_value}


def interaction_scan(design: DesignMatrix, factor: str) -> list[InteractionTerm]:
    """Refit with ``factor x covariate`` added, once per covariate."""
    if factor not in design.columns:
        raise KeyError(factor)
    out = []
    for name in design.names:
        if name in (INTERCEPT, factor):
            continue
        term = f"{factor}:{name}"
        augmented = design.with_column(term, design.columns[factor] * design.columns[name])
        res = ols_fit(augmented)
        out.append(InteractionTerm(name, term, res.coefficients[term], res.p_values[term]))
    return out


# --- bootstrap --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BootstrapCI:
    intervals: dict[str, tuple[float, float]]
    draws: np.ndarray
    redraws: int
    n_boot: int
    alpha: float
    seed: int

    def __getitem__(self, name: str) -> tuple[float, float]:
        return self.intervals[name]


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """PCG64 stream for one bootstrap replicate, derived from (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _rank_ok(xb: np.ndarray) -> np.ndarray:
    return np.linalg.matrix_rank(xb) == xb.shape[-1]


def _replicate_chunk(X, y, seed, indices, max_redraws):
    n, k = X.shape
    rows = np.empty((len(indices), n), dtype=np.intp)
    rngs = [replicate_rng(seed, b) for b in indices]
    for i, rng in enumerate(rngs):
        rows[i] = rng.integers(0, n, size=n)
    redraws = 0
    bad = np.flatnonzero(~_rank_ok(X[rows]))
    while bad.size:
        redraws += bad.size
        if redraws > max_redraws:
            raise RankDeficiencyError("bootstrap resamples are persistently rank deficient")
        for i in bad:
            rows[i] = rngs[i].integers(0, n, size=n)
        bad = bad[~_rank_ok(X[rows[bad]])]
    xb, yb = X[rows], y[rows]
    u, s, vt = np.linalg.svd(xb, full_matrices=False)
    uty = np.einsum("bnk,bn->bk", u, yb)
    beta = np.einsum("bkj,bk->bj", vt, uty / s)
    return beta, redraws


def bootstrap_ci(
    design: DesignMatrix, B: int = 1000, alpha: float = 0.05, seed: int = 42, n_jobs: int = 1
) -> BootstrapCI:
    """Percentile CIs from a case (row) bootstrap.

    Replicate ``b`` draws its rows from :func:`replicate_rng` ``(seed, b)``;
    rank-deficient resamples are redrawn from the same stream, so results do
    not depend on ``n_jobs``. Quantiles use linear interpolation between order
    statistics (the inclusive definition).
    """
    if B < 100:
        raise ValueError("B must be >= 100")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    X, y = design.X, design.response
    chunks = np.array_split(np.arange(B), max(1, min(n_jobs, B)))
    budget = 10 * B
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(lambda idx: _replicate_chunk(X, y, seed, idx, budget), chunks))
    else:
        parts = [_replicate_chunk(X, y, seed, idx, budget) for idx in chunks]
    draws = np.vstack([p[0] for p in parts])
    redraws = sum(p[1] for p in parts)
    if redraws > budget:
        raise RankDeficiencyError("bootstrap resamples are persistently rank deficient")
    lo = np.quantile(draws, alpha / 2, axis=0, method="linear")
    hi = np.quantile(draws, 1 - alpha / 2, axis=0, method="linear")
    intervals = {name: (float(a), float(b)) for name, a, b in zip(design.names, lo, hi)}
    return BootstrapCI(intervals, draws, redraws, B, alpha, seed)


# --- effect size ------------------------------------------------------------


def cohens_d(scores_a: Sequence[float], scores_b: Sequence[float]) -> float:
    """Standardized mean difference with the pooled (n - 1) standard deviation."""
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each group needs at least 2 observations")
    pooled = ((len(a) - 1) * a.var(ddof=1) + (len(b) - 1) * b.var(ddof=1)) / (len(a) + len(b) - 2)
    if pooled <= 0:
        raise ValueError("pooled standard deviation is zero")
    return float((a.mean() - b.mean()) / math.sqrt(pooled))


def cohens_d_ci(
    scores_a: Sequence[float], scores_b: Sequence[float], B: int = 1000, alpha: float = 0.05, seed: int = 42
) -> tuple[float, float]:
    """Percentile CI for d, resampling within each group."""
    if B < 100:
        raise ValueError("B must be >= 100")
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    values = []
    for rep in range(B):
        rng = replicate_rng(seed, rep)
        ra = a[rng.integers(0, len(a), len(a))]
        rb = b[rng.integers(0, len(b), len(b))]
        try:
            values.append(cohens_d(ra, rb))
        except ValueError:
            continue
    if not values:
        raise ValueError("every resample had zero pooled variance")
    values = np.asarray(values)
    return (
        float(np.quantile(values, alpha / 2, method="linear")),
        float(np.quantile(values, 1 - alpha / 2, method="linear")),
    )
