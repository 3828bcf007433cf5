"""Latin hypercube and simple random sampling of standard-normal coefficients.

Sample matrices are stored variables-by-samples: row ``i`` holds the ``N``
draws of coefficient ``i`` and column ``k`` is the ``k``-th sampling vector.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from ._random import STREAM_DECORRELATE, STREAM_LHS, STREAM_SRS, check_seed, stream
from ._validation import check_count

METHODS = ("lhs", "lhs_decorrelated", "srs")
PLACEMENTS = ("uniform_in_stratum", "midpoint")

# Wichura's AS241 (PPND16) rational approximations, highest degree first.
_CENTRAL_NUM = (
    2509.0809287301226727, 33430.575583588128105, 67265.770927008700853, 45921.953931549871457,
    13731.693765509461125, 1971.5909503065514427, 133.14166789178437745, 3.387132872796366608,
)
_CENTRAL_DEN = (
    5226.495278852545925, 28729.085735721942674, 39307.89580009271061, 21213.794301586595867,
    5394.1960214247511077, 687.1870074920579083, 42.313330701600911252, 1.0,
)
_INTER_NUM = (
    7.7454501427834140764e-4, 0.0227238449892691845833, 0.24178072517745061177, 1.27045825245236838258,
    3.64784832476320460504, 5.7694972214606914055, 4.6303378461565452959, 1.42343711074968357734,
)
_INTER_DEN = (
    1.05075007164441684324e-9, 5.475938084995344946e-4, 0.0151986665636164571966, 0.14810397642748007459,
    0.68976733498510000455, 1.6763848301838038494, 2.05319162663775882187, 1.0,
)
_TAIL_NUM = (
    2.01033439929228813265e-7, 2.71155556874348757815e-5, 0.0012426609473880784386, 0.026532189526576123093,
    0.29656057182850489123, 1.7848265399172913358, 5.4637849111641143699, 6.6579046435011037772,
)
_TAIL_DEN = (
    2.04426310338993978564e-15, 1.4215117583164458887e-7, 1.8463183175100546818e-5, 7.868691311456132591e-4,
    0.0148753612908506148525, 0.13692988092273580531, 0.59983220655588793769, 1.0,
)


def _horner(coefs, x):
    acc = coefs[0]
    for c in coefs[1:]:
        acc = acc * x + c
    return acc


def norm_ppf(p) -> np.ndarray:
    """Vectorised standard-normal quantile (AS241, relative accuracy ~1e-16)."""
    p = np.asarray(p, dtype=float)
    if np.any(~(p > 0.0) | ~(p < 1.0)):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    q = p - 0.5
    out = np.empty_like(p)
    central = np.abs(q) <= 0.425
    if np.any(central):
        qc = q[central]
        r = 0.180625 - qc * qc
        out[central] = qc * _horner(_CENTRAL_NUM, r) / _horner(_CENTRAL_DEN, r)
    tail = ~central
    if np.any(tail):
        qt = q[tail]
        r = np.sqrt(-np.log(np.where(qt < 0.0, p[tail], 1.0 - p[tail])))
        near = r <= 5.0
        val = np.empty_like(r)
        rn = r[near] - 1.6
        val[near] = _horner(_INTER_NUM, rn) / _horner(_INTER_DEN, rn)
        rf = r[~near] - 5.0
        val[~near] = _horner(_TAIL_NUM, rf) / _horner(_TAIL_DEN, rf)
        out[tail] = np.where(qt < 0.0, -val, val)
    return out


def inverse_normal_cdf(p: float) -> float:
    """Φ⁻¹(p) for ``0 < p < 1``."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    return float(norm_ppf(np.array([p]))[0])


@dataclass(frozen=True, eq=False)
class SampleMatrix:
    """``M x N`` coefficient samples plus the method that produced them.

    ``flags`` records non-fatal events, e.g. a decorrelation fallback.
    """

    values: np.ndarray
    method: str
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.size == 0:
            raise ValueError(f"sample matrix must be a non-empty 2-D array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("sample matrix contains non-finite values")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "flags", tuple(self.flags))

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @property
    def columns(self) -> np.ndarray:
        """Sampling vectors as an ``(N, M)`` array."""
        return self.values.T

    def __eq__(self, other):
        return (
            isinstance(other, SampleMatrix)
            and self.method == other.method
            and np.array_equal(self.values, other.values)
        )

    def to_csv(self, path=None) -> str | None:
        buf = io.StringIO()
        buf.write(f"# method: {self.method}\n")
        if self.flags:
            buf.write(f"# flags: {','.join(self.flags)}\n")
        buf.write(",".join(f"s{k + 1}" for k in range(self.N)) + "\n")
        for row in self.values:
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        if path is None:
            return buf.getvalue()
        Path(path).write_text(buf.getvalue())
        return None

    @classmethod
    def from_csv(cls, source) -> "SampleMatrix":
        text = source.read() if hasattr(source, "read") else Path(source).read_text()
        method, flags, rows = "srs", (), []
        header_seen = False
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                if key.strip() == "method":
                    method = value.strip()
                elif key.strip() == "flags":
                    flags = tuple(f for f in value.strip().split(",") if f)
                continue
            if not header_seen:
                header_seen = True
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
        return cls(np.array(rows), method, flags)


def lhs_normal(M: int, N: int, seed: int = 0, placement: str = "uniform_in_stratum") -> SampleMatrix:
    """Latin hypercube sample of ``M`` independent standard normals, ``N`` draws each.

    Row ``i`` takes one probability from each stratum ``((k-1)/N, k/N)``,
    maps it through Φ⁻¹ and shuffles the row. Rows use independent streams.
    """
    M = check_count(M, "M")
    N = check_count(N, "N")
    seed = check_seed(seed)
    if placement not in PLACEMENTS:
        raise ValueError(f"placement must be one of {PLACEMENTS}, got {placement!r}")
    values = np.empty((M, N))
    k = np.arange(N, dtype=float)
    for i in range(M):
        gen = stream(seed, STREAM_LHS, i)
        if placement == "midpoint":
            u = np.full(N, 0.5)
        else:
            # open interval (0, 1): keeps every probability strictly inside its stratum
            u = gen.integers(1, 2**53, size=N) / 2.0**53
        row = norm_ppf((k + u) / N)
        values[i] = row[gen.permutation(N)]
    return SampleMatrix(values, "lhs")


def srs_normal(M: int, N: int, seed: int = 0) -> SampleMatrix:
    """Independent standard normals, one stream per row."""
    M = check_count(M, "M")
    N = check_count(N, "N")
    seed = check_seed(seed)
    values = np.stack([stream(seed, STREAM_SRS, i).standard_normal(N) for i in range(M)])
    return SampleMatrix(values, "srs")


def max_offdiag_correlation(values: np.ndarray) -> float:
    """Largest absolute off-diagonal Pearson correlation between rows."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] < 2:
        return 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(values)
    corr = np.nan_to_num(corr, nan=0.0)
    np.fill_diagonal(corr, 0.0)
    return float(np.max(np.abs(corr)))


def _van_der_waerden(values):
    N = values.shape[1]
    ranks = rankdata(values, axis=1, method="ordinal")
    return norm_ppf(ranks / (N + 1.0))


def _rearrange_like(values, target):
    # each row of ``values`` reordered so its ranks follow the ranks of ``target``
    out = np.empty_like(values)
    for i in range(values.shape[0]):
        order = np.argsort(target[i], kind="stable")
        out[i, order] = np.sort(values[i], kind="stable")
    return out


def _iman_conover_pass(values):
    scores = _van_der_waerden(values)
    C = np.corrcoef(scores)
    L = np.linalg.cholesky(C)
    whitened = np.linalg.solve(L, scores)
    return _rearrange_like(values, whitened)


def decorrelate(s: SampleMatrix, seed: int = 0, *, max_passes: int = 4) -> SampleMatrix:
    """Reorder each row to drive cross-row correlation towards zero (Iman-Conover).

    The rank correlation of the van der Waerden scores is factored as
    ``C = L Lᵀ``; each row is rearranged to follow the ranks of ``L⁻¹``
    applied to the scores. Passes repeat while they help. Row contents are
    preserved exactly; the result is never more correlated than the input.
    A rank-correlation matrix that is not positive definite falls back to
    independent random row permutations, flagged ``fallback_permutation``.
    """
    seed = check_seed(seed)
    values = np.array(s.values)
    M, N = values.shape
    method = "lhs_decorrelated" if s.method.startswith("lhs") else s.method
    if M == 1:
        return SampleMatrix(values, method, s.flags)
    if N <= M:
        warnings.warn(
            f"decorrelating {M} variables with only {N} samples; the rank correlation "
            "matrix is singular", RuntimeWarning, stacklevel=2,
        )
    start = max_offdiag_correlation(values)
    best, best_corr = values, start
    flags = list(s.flags)
    current = values
    try:
        for _ in range(max_passes):
            current = _iman_conover_pass(current)
            corr = max_offdiag_correlation(current)
            if corr < best_corr:
                best, best_corr = current, corr
            else:
                break
    except np.linalg.LinAlgError:
        gen = stream(seed, STREAM_DECORRELATE)
        shuffled = np.stack([row[gen.permutation(N)] for row in values])
        flags.append("fallback_permutation")
        if max_offdiag_correlation(shuffled) <= start:
            best = shuffled
    if best is values:
        flags.append("unchanged")
    return SampleMatrix(best, method, tuple(dict.fromkeys(flags)))


class ImanConoverDecorrelator(TransformerMixin, BaseEstimator):
    """Transformer form of :func:`decorrelate` for ``(n_samples, n_features)`` input.

    Stateless: ``fit`` only validates. Each column of the output is a
    permutation of the corresponding input column.
    """

    def __init__(self, max_passes: int = 4, random_state: int = 0):
        self.max_passes = max_passes
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X)
        out = decorrelate(SampleMatrix(X.T, "lhs"), self.random_state, max_passes=self.max_passes)
        self.flags_ = out.flags
        return np.array(out.values.T)


class LatinHypercubeNormal(BaseEstimator):
    """Sampler producing ``(n_samples, n_features)`` standard-normal designs.

    ``sample(n_features)`` returns a Latin hypercube design, decorrelated
    when ``decorrelate`` is set; ``method="srs"`` gives the plain Monte Carlo
    baseline with the same interface.
    """

    def __init__(self, n_samples: int = 100, method: str = "lhs", placement: str = "uniform_in_stratum",
                 decorrelate: bool = True, random_state: int = 0):
        self.n_samples = n_samples
        self.method = method
        self.placement = placement
        self.decorrelate = decorrelate
        self.random_state = random_state

    def sample_matrix(self, n_features: int) -> SampleMatrix:
        if self.method == "srs":
            return srs_normal(n_features, self.n_samples, self.random_state)
        if self.method != "lhs":
            raise ValueError(f"method must be 'lhs' or 'srs', got {self.method!r}")
        s = lhs_normal(n_features, self.n_samples, self.random_state, self.placement)
        if self.decorrelate and n_features > 1:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                s = decorrelate(s, self.random_state)
        return s

    def sample(self, n_features: int) -> np.ndarray:
        return np.array(self.sample_matrix(n_features).columns)

