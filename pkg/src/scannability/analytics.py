"""Statistical toolkit: OLS with significance tests, group contrasts,
binned-mean curves, paired seed comparisons, and 2-D PCA."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .dataset import TARGET_TYPES


@dataclass
class OlsFit:
    coef: np.ndarray
    stderr: np.ndarray
    t_values: np.ndarray
    p_values: np.ndarray
    resid_var: float
    f_stat: float
    f_dof: tuple
    r2: float
    column_names: tuple = ()

    def table(self, title="OLS fit"):
        lines = [title, f"{'term':>16} {'coef':>10} {'se':>10} {'t':>9} {'p':>9}"]
        names = self.column_names or tuple(f"x{i}" for i in range(len(self.coef)))
        for n, c, s, t, p in zip(names, self.coef, self.stderr, self.t_values, self.p_values):
            lines.append(f"{n:>16} {c:>10.4f} {s:>10.4f} {t:>9.2f} {p:>9.4f}")
        lines.append(f"R^2 = {self.r2:.4f}   F({self.f_dof[0]}, {self.f_dof[1]}) = {self.f_stat:.1f}")
        return "\n".join(lines)

    def to_csv(self):
        names = self.column_names or tuple(f"x{i}" for i in range(len(self.coef)))
        rows = ["term,coef,stderr,t,p"]
        for n, c, s, t, p in zip(names, self.coef, self.stderr, self.t_values, self.p_values):
            rows.append(f"{n},{c!r},{s!r},{t!r},{p!r}")
        return "\n".join(rows) + "\n"


def ols(X, y, column_names=()) -> OlsFit:
    """Least squares with an intercept column expected in X.

    Standard errors come from the sigma^2 (X'X)^-1 diagonal, t statistics
    use the Student-t distribution with n - p degrees of freedom.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if n <= p:
        raise ValueError(f"need more rows than columns, got {n} x {p}")
    rank = np.linalg.matrix_rank(X)
    if rank < p:
        dependent = [j for j in range(p) if np.linalg.matrix_rank(np.delete(X, j, axis=1)) == rank]
        names = column_names or tuple(f"x{j}" for j in range(p))
        bad = [names[j] for j in dependent]
        raise ValueError(f"design matrix is rank deficient; dependent columns: {bad}")
    coef, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_res = float(resid @ resid)
    dof = n - p
    resid_var = ss_res / dof
    xtx_inv = np.linalg.inv(X.T @ X)
    stderr = np.sqrt(resid_var * np.diag(xtx_inv))
    t_values = coef / stderr
    p_values = 2 * stats.t.sf(np.abs(t_values), dof)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    f_dof = (p - 1, dof)
    if p > 1 and ss_res > 0:
        f_stat = ((ss_tot - ss_res) / f_dof[0]) / (ss_res / f_dof[1])
    else:
        f_stat = float("inf") if p > 1 else 0.0
    return OlsFit(
        coef=coef,
        stderr=stderr,
        t_values=t_values,
        p_values=p_values,
        resid_var=resid_var,
        f_stat=float(f_stat),
        f_dof=f_dof,
        r2=r2,
        column_names=tuple(column_names),
    )


@dataclass
class TypeContrast:
    type_means: dict
    differences: dict  # vs the image reference level
    fit: OlsFit


def type_contrast(times, types) -> TypeContrast:
    """Per-type mean time, differences against the image reference, and the dummy-coded OLS."""
    times = np.asarray(times, dtype=np.float64)
    types = list(types)
    present = [t for t in TARGET_TYPES if t in set(types)]
    if len(present) < 2:
        raise ValueError(f"need at least 2 target types present, got {present}")
    non_ref = [t for t in present if t != "image"]
    X = np.ones((len(times), 1 + len(non_ref)))
    for j, t in enumerate(non_ref):
        X[:, 1 + j] = [1.0 if tt == t else 0.0 for tt in types]
    fit = ols(X, times, column_names=("intercept",) + tuple(non_ref))
    type_means = {t: float(times[[tt == t for tt in types]].mean()) for t in present}
    ref = type_means.get("image", fit.coef[0])
    differences = {t: type_means[t] - ref for t in present if t != "image"}
    return TypeContrast(type_means=type_means, differences=differences, fit=fit)


@dataclass
class TTestResult:
    t_value: float
    dof: int
    p_value: float
    group_means: tuple


def two_sample_t(a, b) -> TTestResult:
    """Pooled-variance two-sample t test with n1 + n2 - 2 degrees of freedom."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("both groups need at least 2 values")
    n1, n2 = len(a), len(b)
    dof = n1 + n2 - 2
    sp2 = (((a - a.mean()) ** 2).sum() + ((b - b.mean()) ** 2).sum()) / dof
    denom = np.sqrt(sp2 * (1 / n1 + 1 / n2))
    t = (a.mean() - b.mean()) / denom if denom > 0 else 0.0
    p = 2 * stats.t.sf(abs(t), dof) if denom > 0 else 1.0
    return TTestResult(t_value=float(t), dof=dof, p_value=float(p), group_means=(float(a.mean()), float(b.mean())))


def paired_t(a, b) -> TTestResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) != len(b):
        raise ValueError(f"paired test needs equal lengths, got {len(a)} and {len(b)}")
    if len(a) < 2:
        raise ValueError("need at least 2 pairs")
    d = a - b
    if np.allclose(d.std(ddof=1), 0.0) and not np.allclose(d, 0.0):
        raise ValueError("zero variance in paired differences")
    dof = len(d) - 1
    se = d.std(ddof=1) / np.sqrt(len(d))
    if se == 0:
        return TTestResult(t_value=0.0, dof=dof, p_value=1.0, group_means=(float(a.mean()), float(b.mean())))
    t = d.mean() / se
    p = 2 * stats.t.sf(abs(t), dof)
    return TTestResult(t_value=float(t), dof=dof, p_value=float(p), group_means=(float(a.mean()), float(b.mean())))


@dataclass
class BinnedStats:
    bin_edges: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray
    counts: np.ndarray

    def to_csv(self):
        rows = ["bin_lo,bin_hi,mean,stderr,count"]
        for i in range(len(self.means)):
            rows.append(
                f"{self.bin_edges[i]!r},{self.bin_edges[i + 1]!r},{self.means[i]!r},{self.stderrs[i]!r},{int(self.counts[i])}"
            )
        return "\n".join(rows) + "\n"


def binned_stats(values, feature, n_bins) -> BinnedStats:
    """Uniform-width bins over [min, max] of the feature; per-bin mean and standard error."""
    values = np.asarray(values, dtype=np.float64)
    feature = np.asarray(feature, dtype=np.float64)
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    lo, hi = feature.min(), feature.max()
    if hi <= lo:
        raise ValueError("feature is constant; cannot bin")
    edges = np.linspace(lo, hi, n_bins + 1)
    idx = np.minimum(((feature - lo) / (hi - lo) * n_bins).astype(int), n_bins - 1)
    means = np.full(n_bins, np.nan)
    stderrs = np.full(n_bins, np.nan)
    counts = np.zeros(n_bins, dtype=int)
    for b in range(n_bins):
        sel = values[idx == b]
        counts[b] = len(sel)
        if len(sel):
            means[b] = sel.mean()
            stderrs[b] = sel.std() / np.sqrt(len(sel)) if len(sel) > 1 else 0.0
    return BinnedStats(bin_edges=edges, means=means, stderrs=stderrs, counts=counts)


def pca2(matrix):
    """Project rows onto the top-2 principal components.

    Returns (projection, explained_variance_ratios) with ratios descending.
    """
    X = np.asarray(matrix, dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / X.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    proj = Xc @ evecs[:, :2]
    total = evals.sum()
    ratios = evals[:2] / total if total > 0 else np.zeros(2)
    return proj, ratios
