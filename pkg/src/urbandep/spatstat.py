"""Correlation testing under spatial autocorrelation.

Spearman's r_s is tested with a modified t-test whose degrees of freedom come
from an effective sample size estimated from distance-band correlograms of the
two rank-transformed fields. Moran's I serves as an autocorrelation
diagnostic, and Benjamini-Hochberg (or Storey) q-values control the false
discovery rate over the family of tested categories.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from urbandep.errors import ConfigError, DataError, DegeneracyError, InsufficientDataError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpatialField:
    ward_ids: tuple[str, ...]
    values: np.ndarray
    centroids: np.ndarray  # (n, 2) lon/lat

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        c = np.asarray(self.centroids, dtype=float).reshape(-1, 2)
        if not (len(self.ward_ids) == v.shape[0] == c.shape[0]):
            raise DataError("SpatialField: ward ids, values and centroids differ in length")
        if not np.all(np.isfinite(v)):
            raise DataError("SpatialField: non-finite values")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "centroids", c)
        object.__setattr__(self, "ward_ids", tuple(self.ward_ids))

    def __len__(self):
        return len(self.ward_ids)

    @classmethod
    def from_mapping(cls, values: Mapping[str, float], centroids: Mapping[str, tuple[float, float]]):
        ids = tuple(values)
        return cls(ids, np.array([values[w] for w in ids]), np.array([centroids[w] for w in ids]))

    def with_values(self, values) -> "SpatialField":
        return replace(self, values=np.asarray(values, dtype=float))


@dataclass(frozen=True)
class CategoryStat:
    category: str
    source: str
    r_s: float
    effective_n: float
    p_value: float
    q_value: float
    n: int
    selected: bool = False


@dataclass(frozen=True)
class SelectionConfig:
    alpha: float = 0.05
    min_abs_r: float = 0.05
    bands: int = 10
    max_q: float | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.min_abs_r < 0:
            raise ConfigError("min_abs_r must be non-negative")
        if self.bands < 2:
            raise ConfigError("bands must be at least 2")


def _check_not_constant(x: np.ndarray, what: str = "input"):
    if np.ptp(x) == 0.0:
        raise DegeneracyError(f"{what} is constant (zero variance)")


def spearman(x, y) -> float:
    """Spearman's r_s: Pearson correlation of average ranks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("spearman: x and y must be 1-d sequences of equal length")
    if x.size < 3:
        raise InsufficientDataError("spearman: need at least 3 observations")
    _check_not_constant(x, "x")
    _check_not_constant(y, "y")
    rx = stats.rankdata(x) - (x.size + 1) / 2.0
    ry = stats.rankdata(y) - (y.size + 1) / 2.0
    r = float(np.dot(rx, ry) / np.sqrt(np.dot(rx, rx) * np.dot(ry, ry)))
    return min(1.0, max(-1.0, r))


def t_test_p(r: float, dof: float) -> float:
    """Two-sided Student-t p-value for a correlation r with ``dof`` degrees of freedom."""
    if abs(r) >= 1.0:
        return 0.0
    t = r * np.sqrt(dof / (1.0 - r * r))
    return float(min(1.0, 2.0 * stats.t.sf(abs(t), dof)))


def naive_spearman_test(x, y) -> tuple[float, float]:
    """Uncorrected test of r_s with n - 2 degrees of freedom; returns (r_s, p)."""
    r = spearman(x, y)
    return r, t_test_p(r, len(x) - 2)


# -- Moran's I -------------------------------------------------------------

def knn_indices(centroids: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest other points per row; ties go to the lower index."""
    d = _pairwise_distances(centroids)
    np.fill_diagonal(d, np.inf)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def _moran_stat(z: np.ndarray, nbrs: np.ndarray) -> np.ndarray:
    # row-normalized weights: S0 == n, so I = sum_i z_i * mean(z_nbrs) / sum z^2
    lag = z[..., nbrs].mean(axis=-1)
    return (z * lag).sum(axis=-1) / (z * z).sum(axis=-1)


@dataclass(frozen=True)
class MoranResult:
    I: float
    expected: float
    p_perm: float


def morans_i(f: SpatialField, k: int = 8, permutations: int = 999, seed: int = 0) -> MoranResult:
    """Global Moran's I with row-normalized k-nearest-neighbour weights.

    The p-value is two-sided: the share of permuted statistics at least as far
    from E[I] = -1/(n-1) as the observed one, counting the observed as one draw.
    """
    n = len(f)
    if not 1 <= k < n:
        raise DataError(f"morans_i: need 1 <= k < n (k={k}, n={n})")
    _check_not_constant(f.values, "field")
    nbrs = knn_indices(f.centroids, k)
    z = f.values - f.values.mean()
    observed = float(_moran_stat(z, nbrs))
    expected = -1.0 / (n - 1)
    rng = np.random.default_rng(seed)
    perms = rng.permuted(np.broadcast_to(z, (permutations, n)), axis=1)
    sims = _moran_stat(perms, nbrs)
    extreme = np.count_nonzero(np.abs(sims - expected) >= abs(observed - expected) - 1e-12)
    return MoranResult(observed, expected, (extreme + 1) / (permutations + 1))


# -- correlograms and the modified t-test ----------------------------------

def _pairwise_distances(c: np.ndarray) -> np.ndarray:
    diff = c[:, None, :] - c[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def distance_bands(centroids: np.ndarray, bands: int, max_distance: float | None = None) -> np.ndarray:
    """Band index per ordered pair: 0 on the diagonal, 1..K over (0, max_distance], -1 beyond.

    ``max_distance`` defaults to the largest pairwise distance.
    """
    d = _pairwise_distances(np.asarray(centroids, dtype=float))
    dmax = d.max() if max_distance is None else max_distance
    if dmax <= 0:
        raise DegeneracyError("all centroids coincide")
    width = dmax / bands
    idx = np.clip(np.ceil(d / width).astype(np.int64), 1, None)
    idx[d > dmax * (1 + 1e-12)] = -1
    np.fill_diagonal(idx, 0)
    return idx


@dataclass(frozen=True)
class Correlogram:
    pair_count: np.ndarray  # (K+1,)
    autocov: np.ndarray  # (K+1,)


def _correlogram(values: np.ndarray, band_idx: np.ndarray, bands: int) -> Correlogram:
    z = values - values.mean()
    prod = np.outer(z, z)
    ok = band_idx >= 0
    b = band_idx[ok]
    counts = np.bincount(b, minlength=bands + 1)
    sums = np.bincount(b, weights=prod[ok], minlength=bands + 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cov = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    return Correlogram(counts, cov)


def correlogram(f: SpatialField, bands: int = 10, max_distance: float | None = None) -> Correlogram:
    """Autocovariance by distance band over ordered ward pairs.

    Band 0 holds the n self-pairs, so its autocovariance is the population
    variance. Bands 1..K split (0, max_distance] into equal widths.
    """
    if len(f) < 3:
        raise InsufficientDataError("correlogram: need at least 3 wards")
    if bands < 2:
        raise ConfigError("correlogram: need at least 2 bands")
    idx = distance_bands(f.centroids, bands, max_distance)
    return _correlogram(f.values, idx, bands)


@dataclass(frozen=True)
class CliffordResult:
    r_s: float
    effective_n: float
    p_value: float


def clifford_from_ranks(rx: np.ndarray, ry: np.ndarray, band_idx: np.ndarray, bands: int) -> CliffordResult:
    """Modified t-test on already rank-transformed values and precomputed bands."""
    n = rx.size
    r = spearman(rx, ry)
    cx = _correlogram(rx, band_idx, bands)
    cy = _correlogram(ry, band_idx, bands)
    var_r = float(np.sum(cx.pair_count * cx.autocov * cy.autocov)
                  / (n * n * cx.autocov[0] * cy.autocov[0]))
    if not var_r > 0.0:
        raise DegeneracyError(f"estimated variance of r_s is non-positive ({var_r:.3g})")
    m_eff = min(max(1.0 + 1.0 / var_r, 3.0), float(n))
    return CliffordResult(r, m_eff, t_test_p(r, m_eff - 2.0))


def half_range_bands(centroids: np.ndarray, bands: int) -> np.ndarray:
    d = _pairwise_distances(np.asarray(centroids, dtype=float))
    return distance_bands(centroids, bands, 0.5 * d.max())


def clifford_test(x: SpatialField, y: SpatialField, bands: int = 10) -> CliffordResult:
    """Spearman correlation with an effective-sample-size corrected p-value.

    Correlograms of the two rank fields use ``bands`` equal-width bands out
    to half the largest centroid distance. The variance of r_s is estimated
    as sum_k N_k c_x(k) c_y(k) / (n^2 c_x(0) c_y(0)), the effective sample
    size is 1 + 1/var clamped to [3, n], and the t statistic is referred to
    Student's t with M - 2 degrees of freedom.
    """
    if x.ward_ids != y.ward_ids:
        raise DataError("clifford_test: fields must share ward ids in the same order")
    if len(x) < 10:
        raise InsufficientDataError("clifford_test: need at least 10 wards")
    _check_not_constant(x.values, "x field")
    _check_not_constant(y.values, "y field")
    idx = half_range_bands(x.centroids, bands)
    return clifford_from_ranks(stats.rankdata(x.values), stats.rankdata(y.values), idx, bands)


# -- false discovery rate --------------------------------------------------

def fdr_qvalues(p_values: Sequence[float]) -> np.ndarray:
    """Benjamini-Hochberg step-up q-values, returned in input order."""
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        raise DataError("fdr_qvalues: empty p-value list")
    if np.any(~(p >= 0.0) | ~(p <= 1.0)):
        raise DataError("fdr_qvalues: p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    q_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    q = np.empty(m)
    q[order] = np.minimum(q_sorted, 1.0)
    return q


STOREY_LAMBDAS = np.round(np.arange(0.05, 0.951, 0.05), 2)


def storey_pi0(p_values: Sequence[float]) -> float:
    """Null proportion estimate: a straight-line fit of pi0(lambda) read off at lambda = 0.95."""
    p = np.asarray(p_values, dtype=float)
    lam = STOREY_LAMBDAS
    pi0 = np.array([np.count_nonzero(p > l) / (p.size * (1.0 - l)) for l in lam])
    slope, intercept = np.polyfit(lam, pi0, 1)
    return float(np.clip(intercept + slope * lam[-1], 1.0 / p.size, 1.0))


def storey_qvalues(p_values: Sequence[float]) -> np.ndarray:
    return np.minimum(storey_pi0(p_values) * fdr_qvalues(p_values), 1.0)


def qvalues(p_values, method: str = "bh") -> np.ndarray:
    if method == "bh":
        return fdr_qvalues(p_values)
    if method == "storey":
        fdr_qvalues(p_values)  # validation
        return storey_qvalues(p_values)
    raise ConfigError(f"unknown FDR method {method!r}")


# -- category screening ----------------------------------------------------

@dataclass
class Selection:
    selected: list[CategoryStat]
    all: list[CategoryStat]
    degenerate: list[tuple[str, str]]  # (category, reason)
    unmatched_wards: list[str]


def select_features(
    oa,
    imd: Mapping[str, float],
    centroids: Mapping[str, tuple[float, float]],
    cfg: SelectionConfig = SelectionConfig(),
    *,
    source: str = "both",
    fdr: str = "bh",
    workers: int = 1,
) -> Selection:
    """Test every OA category against the deprivation field and pick significant ones.

    ``oa`` is an :class:`~urbandep.profile.OaMatrix`; ``imd`` maps ward id to
    ward score. Wards are inner-joined on id. Categories whose test is
    degenerate are reported and left out of the FDR family.
    """
    oa_pos = {w: i for i, w in enumerate(oa.ward_ids)}
    joined = [w for w in oa.ward_ids if w in imd and w in centroids]
    unmatched = sorted((set(oa.ward_ids) ^ set(imd)) | (set(oa.ward_ids) - set(centroids)))
    if len(joined) < 10:
        raise InsufficientDataError(f"only {len(joined)} wards have both OA and scores (need 10)")
    rows = np.array([oa_pos[w] for w in joined])
    cent = np.array([centroids[w] for w in joined], dtype=float)
    y = np.array([imd[w] for w in joined], dtype=float)
    _check_not_constant(y, "deprivation field")
    band_idx = half_range_bands(cent, cfg.bands)
    ry = stats.rankdata(y)
    values = oa.oa[rows]

    def one(j):
        x = values[:, j]
        if np.ptp(x) == 0.0:
            return j, None, "constant OA over joined wards"
        try:
            return j, clifford_from_ranks(stats.rankdata(x), ry, band_idx, cfg.bands), None
        except DegeneracyError as e:
            return j, None, str(e)

    cols = range(len(oa.categories))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, cols))
    else:
        results = [one(j) for j in cols]

    tested = [(j, res) for j, res, _ in results if res is not None]
    degenerate = [(oa.categories[j], why) for j, res, why in results if res is None]
    if not tested:
        return Selection([], [], degenerate, unmatched)
    q = qvalues([res.p_value for _, res in tested], fdr)
    stats_all = []
    for (j, res), qv in zip(tested, q):
        keep = (res.p_value < cfg.alpha and abs(res.r_s) >= cfg.min_abs_r
                and (cfg.max_q is None or qv <= cfg.max_q))
        stats_all.append(CategoryStat(oa.categories[j], source, res.r_s, res.effective_n,
                                      res.p_value, float(qv), len(joined), keep))
    stats_all.sort(key=lambda s: (s.p_value, s.category))
    return Selection([s for s in stats_all if s.selected], stats_all, degenerate, unmatched)


def qvalue_quartiles(stats_list: Sequence[CategoryStat]) -> dict:
    """1st quartile, median, 3rd quartile and max of q over the given categories."""
    q = np.array([s.q_value for s in stats_list], dtype=float)
    if q.size == 0:
        return {"count": 0, "q1": None, "median": None, "q3": None, "max": None}
    q1, med, q3 = np.percentile(q, [25, 50, 75])
    return {"count": int(q.size), "q1": float(q1), "median": float(med),
            "q3": float(q3), "max": float(q.max())}


STRENGTH_BINS = ((0.05, 0.2), (0.2, 0.4), (0.4, 0.6), (0.6, 0.8), (0.8, 1.0001))


def strength_bins(stats_list: Sequence[CategoryStat]) -> list[dict]:
    """Count positive and negative correlations per |r_s| band."""
    out = []
    for lo, hi in STRENGTH_BINS:
        pos = sum(1 for s in stats_list if lo <= s.r_s < hi)
        neg = sum(1 for s in stats_list if lo <= -s.r_s < hi)
        out.append({"low": lo, "high": min(hi, 1.0), "positive": pos, "negative": neg})
    return out
