"""Maximum-likelihood identification of polynomial Itô models from sampled data.

Over one sampling interval the Euler-Maruyama transition is Gaussian with
mean ``h μ(ξ)`` and covariance ``2 D`` where ``D = h σ σᵀ / 2``. Dropping
constants, the negative log-likelihood of a record is

    L' = ¼ Σ_j r_jᵀ D_j⁻¹ r_j + ½ Σ_j log det D_j,     r_j = Δξ_j − h μ(ξ_j).

Drift and diffusion entries are polynomials whose coefficients form the
parameter vector ``q`` (all drift coefficients first, then diffusion
entries in row-major order). Monomials of each entry are ordered by total
degree, so for a scalar state ``q`` reads ``c0, c1, c2, ...``.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator

from ._random import STREAM_VALIDATE, derive_seed
from ._validation import check_count, check_matrix, check_positive
from .exceptions import IdentificationError
from .ito import ItoModel, PolynomialMap
from .sde import PathSet, TimeGrid, em_batch

DIFFUSION_FLOOR = 1e-9
FD_STEP = 1e-6
REPORT_FORMAT = "fastmcs-fit-report"


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True, eq=False)
class Dataset:
    """Uniformly sampled record ``samples[k] = ξ(t0 + k h)``."""

    samples: np.ndarray
    h: float
    t0: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] < 1:
            raise ValueError(f"samples must be (n_obs, m), got shape {x.shape}")
        if x.shape[0] < 2:
            raise ValueError(f"need at least 2 observations, got {x.shape[0]}")
        bad = np.argwhere(~np.isfinite(x))
        if bad.size:
            raise ValueError(f"sample {bad[0][0]} is not finite")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "h", check_positive(self.h, "h"))

    @property
    def n_obs(self) -> int:
        return self.samples.shape[0]

    @property
    def m(self) -> int:
        return self.samples.shape[1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.samples, axis=0)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.t0, self.t0 + self.h * (self.n_obs - 1), self.h)

    @classmethod
    def from_paths(cls, paths: PathSet, path: int = 0) -> "Dataset":
        return cls(paths.values[path], paths.grid.h, paths.grid.t0)

    @classmethod
    def from_csv(cls, source) -> "Dataset":
        """Parse ``t, xi_1..xi_m`` rows; a header line and ``#`` comments are skipped."""
        text = source.read() if hasattr(source, "read") else Path(source).read_text()
        times, rows = [], []
        width = None
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = next(csv.reader([stripped]))
            try:
                values = [float(v) for v in fields]
            except ValueError:
                if not times and width is None:
                    width = len(fields)  # header
                    continue
                raise ValueError(f"line {lineno}: non-numeric field in {stripped!r}") from None
            if len(values) < 2:
                raise ValueError(f"line {lineno}: need a time column and at least one state column")
            if width is not None and len(values) != width:
                raise ValueError(f"line {lineno}: expected {width} fields, got {len(values)}")
            width = len(values)
            if not all(math.isfinite(v) for v in values):
                raise ValueError(f"line {lineno}: non-finite value")
            times.append(values[0])
            rows.append(values[1:])
        if len(rows) < 2:
            raise ValueError("data CSV needs at least two data rows")
        t = np.array(times)
        h = (t[-1] - t[0]) / (t.size - 1)
        if not h > 0:
            raise ValueError("time column must be increasing")
        dev = np.abs(np.diff(t) - h)
        k = int(np.argmax(dev))
        if dev[k] > 1e-9 * h:
            raise ValueError(f"non-uniform sampling between rows {k + 1} and {k + 2} (spacing {t[k + 1] - t[k]!r}, expected {h!r})")
        return cls(np.array(rows), h, t[0])

    def to_csv(self, path=None) -> str | None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"xi_{i + 1}" for i in range(self.m)])
        for k, row in enumerate(self.samples):
            w.writerow([repr(self.t0 + k * self.h)] + [repr(float(v)) for v in row])
        if path is None:
            return buf.getvalue()
        Path(path).write_text(buf.getvalue())
        return None


# ---------------------------------------------------------------------------
# basis and parameter layout


def monomials(m: int, degree: int) -> list[tuple[int, ...]]:
    """Exponent tuples of total degree ``<= degree`` in ``m`` variables, by degree."""
    out = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(m), d):
            exps = [0] * m
            for k in combo:
                exps[k] += 1
            out.append(tuple(exps))
    return out


@dataclass(frozen=True)
class BasisSpec:
    """Polynomial degrees of each drift component and each diffusion entry.

    ``diffusion_degree`` is an ``m x n`` nested tuple; scalars are accepted
    for one-dimensional models.
    """

    drift_degree: tuple
    diffusion_degree: tuple

    def __post_init__(self):
        drift = self.drift_degree
        drift = (drift,) if isinstance(drift, (int, np.integer)) else tuple(drift)
        diff = self.diffusion_degree
        if isinstance(diff, (int, np.integer)):
            diff = ((diff,),)
        diff = tuple(tuple(row) if not isinstance(row, (int, np.integer)) else (row,) for row in diff)
        if len(diff) != len(drift) or len({len(r) for r in diff}) != 1:
            raise ValueError("diffusion_degree must be an m x n table matching the drift dimension")
        for d in list(drift) + [d for row in diff for d in row]:
            check_count(d, "degree", minimum=0)
        object.__setattr__(self, "drift_degree", tuple(int(d) for d in drift))
        object.__setattr__(self, "diffusion_degree", tuple(tuple(int(d) for d in row) for row in diff))

    @property
    def m(self) -> int:
        return len(self.drift_degree)

    @property
    def n(self) -> int:
        return len(self.diffusion_degree[0])

    def drift_terms(self) -> list[list[tuple[int, ...]]]:
        return [monomials(self.m, d) for d in self.drift_degree]

    def diffusion_terms(self) -> list[list[tuple[int, ...]]]:
        return [monomials(self.m, d) for row in self.diffusion_degree for d in row]

    @property
    def n_drift(self) -> int:
        return sum(len(t) for t in self.drift_terms())

    @property
    def n_params(self) -> int:
        return self.n_drift + sum(len(t) for t in self.diffusion_terms())

    def split(self, q) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Per-entry coefficient arrays ``(drift, diffusion)``."""
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {q.shape}")
        out, k = [], 0
        for terms in self.drift_terms() + self.diffusion_terms():
            out.append(q[k:k + len(terms)])
            k += len(terms)
        return out[: self.m], out[self.m:]

    def to_model(self, q, *, x0=None, name: str = "identified") -> ItoModel:
        drift_c, diff_c = self.split(q)
        drift = PolynomialMap(
            [list(zip(t, c)) for t, c in zip(self.drift_terms(), drift_c)], self.m, (self.m, 1)
        )
        diffusion = PolynomialMap(
            [list(zip(t, c)) for t, c in zip(self.diffusion_terms(), diff_c)], self.m, (self.m, self.n)
        )
        return ItoModel(drift, diffusion, (), x0, name)

    def to_dict(self) -> dict:
        return {"drift_degree": list(self.drift_degree), "diffusion_degree": [list(r) for r in self.diffusion_degree]}


def _features(X: np.ndarray, exps_list) -> np.ndarray:
    """Monomial design matrix ``(len(X), len(exps_list))``."""
    cols = []
    for exps in exps_list:
        col = np.ones(X.shape[0])
        for k, e in enumerate(exps):
            for _ in range(e):
                col = col * X[:, k]
        cols.append(col)
    return np.stack(cols, axis=1)


def _soft_floor(x: np.ndarray, eps: float) -> np.ndarray:
    # smooth max(x, eps): always > eps, equal to x up to eps * exp(-x/eps) above the floor
    return eps + eps * np.logaddexp(0.0, (x - eps) / eps)


class _Likelihood:
    """Per-increment terms of ``L'`` with the basis features precomputed."""

    def __init__(self, data: Dataset, basis: BasisSpec, floor: float):
        if basis.m != data.m:
            raise ValueError(f"basis is for m={basis.m}, data has m={data.m}")
        X = data.samples[:-1]
        self.dxi = data.increments
        self.h = data.h
        self.floor = floor
        self.basis = basis
        cache = {}
        def feats(terms):
            key = tuple(terms)
            if key not in cache:
                cache[key] = _features(X, terms)
            return cache[key]
        self.drift_feats = [feats(t) for t in basis.drift_terms()]
        self.diff_feats = [feats(t) for t in basis.diffusion_terms()]
        self.n_inc = self.dxi.shape[0]

    def parts(self, q):
        drift_c, diff_c = self.basis.split(q)
        m, n = self.basis.m, self.basis.n
        mu = np.stack([F @ c for F, c in zip(self.drift_feats, drift_c)], axis=1)
        sigma = np.stack([F @ c for F, c in zip(self.diff_feats, diff_c)], axis=1).reshape(-1, m, n)
        return mu, sigma

    def terms(self, q) -> np.ndarray:
        mu, sigma = self.parts(q)
        r = self.dxi - self.h * mu
        S = sigma @ np.swapaxes(sigma, 1, 2)
        idx = np.arange(self.basis.m)
        S[:, idx, idx] = _soft_floor(S[:, idx, idx], self.floor)
        D = 0.5 * self.h * S
        with np.errstate(all="ignore"):
            if self.basis.m == 1:
                d = D[:, 0, 0]
                quad = r[:, 0] ** 2 / d
                logdet = np.log(d)
            else:
                sign, logdet = np.linalg.slogdet(D)
                logdet = np.where(sign > 0, logdet, np.nan)
                quad = np.einsum("ki,ki->k", r, np.linalg.solve(D, r[..., None])[..., 0])
            out = 0.25 * quad + 0.5 * logdet
        bad = np.flatnonzero(~np.isfinite(out))
        if bad.size:
            raise IdentificationError("diffusion matrix is not positive definite or the likelihood overflowed", int(bad[0]))
        return out

    def value(self, q) -> float:
        return float(np.sum(self.terms(q)))


def nll(q, data: Dataset, basis: BasisSpec, *, floor: float = DIFFUSION_FLOOR) -> float:
    """Negative log-likelihood ``L'`` of the record (constants dropped)."""
    return _Likelihood(data, basis, floor).value(q)


# ---------------------------------------------------------------------------
# fitting


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of :func:`fit`.

    ``gradient_norm`` is measured in the whitened coordinates the optimizer
    works in, on the per-increment objective ``L' / (n_obs - 1)``. When
    the line search stalls on data whose increments all score alike, the
    raw gradient norm is reported instead.
    """

    q: np.ndarray
    objective: float
    iterations: int
    gradient_norm: float
    converged: bool
    basis: BasisSpec
    h: float
    degenerate: bool = False
    floor: float = DIFFUSION_FLOOR
    n_increments: int = 0
    x0: tuple = ()
    history: list = field(default_factory=list, repr=False)

    @property
    def drift_coefficients(self) -> list[np.ndarray]:
        return self.basis.split(self.q)[0]

    @property
    def diffusion_coefficients(self) -> list[np.ndarray]:
        return self.basis.split(self.q)[1]

    def to_model(self, name: str = "identified") -> ItoModel:
        return self.basis.to_model(self.q, x0=self.x0 or None, name=name)

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "converged": self.converged,
            "degenerate": self.degenerate,
            "objective": self.objective,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "h": self.h,
            "n_increments": self.n_increments,
            "diffusion_floor": self.floor,
            "basis": self.basis.to_dict(),
            "q": [float(v) for v in self.q],
            "drift": [[float(v) for v in c] for c in self.drift_coefficients],
            "diffusion": [[float(v) for v in c] for c in self.diffusion_coefficients],
        }

    def to_json(self, path=None) -> str | None:
        text = json.dumps(self.to_dict(), indent=2) + "\n"
        if path is None:
            return text
        Path(path).write_text(text)
        return None


def initial_guess(data: Dataset, basis: BasisSpec) -> np.ndarray:
    """Least-squares drift; diffusion scaled from the residuals.

    A constant diffusion entry starts at the residual standard deviation per
    unit time. Higher-degree diagonal entries start from a regression of the
    scaled absolute residual ``sqrt(pi/2) |r| / sqrt(h)``, whose mean is
    ``|σ|`` for Gaussian increments.
    """
    lik = _Likelihood(data, basis, DIFFUSION_FLOOR)
    h = data.h
    coefs = []
    resid = np.empty_like(lik.dxi)
    for i, F in enumerate(lik.drift_feats):
        c, *_ = np.linalg.lstsq(F, lik.dxi[:, i] / h, rcond=None)
        coefs.append(c)
        resid[:, i] = lik.dxi[:, i] - h * (F @ c)
    n = basis.n
    for e, F in enumerate(lik.diff_feats):
        i, j = divmod(e, n)
        c = np.zeros(F.shape[1])
        if i == j:
            if F.shape[1] == 1:
                c[0] = math.sqrt(np.var(resid[:, i]) / h)
            else:
                target = math.sqrt(math.pi / 2) * np.abs(resid[:, i]) / math.sqrt(h)
                c, *_ = np.linalg.lstsq(F, target, rcond=None)
        coefs.append(c)
    return np.concatenate(coefs)


def _fd_steps(q: np.ndarray) -> np.ndarray:
    return FD_STEP * np.maximum(np.abs(q), 1.0)


def _per_increment_gradient(lik: _Likelihood, q: np.ndarray) -> np.ndarray:
    """Central-difference gradient of every increment's term, ``(n_inc, p)``."""
    steps = _fd_steps(q)
    cols = []
    for k, dk in enumerate(steps):
        e = np.zeros_like(q)
        e[k] = dk
        cols.append((lik.terms(q + e) - lik.terms(q - e)) / (2 * dk))
    return np.stack(cols, axis=1)


def _whitening(G: np.ndarray) -> np.ndarray:
    """``C`` with ``Cᵀ F C = I`` for the outer-product information ``F`` of the scores ``G``."""
    p = G.shape[1]
    F = G.T @ G / G.shape[0]
    ridge = 1e-12 * max(np.trace(F), 1e-300)
    try:
        L = np.linalg.cholesky(F + ridge * np.eye(p))
        return np.linalg.inv(L).T
    except np.linalg.LinAlgError:
        d = np.sqrt(np.maximum(np.diag(F), 1e-300))
        return np.diag(1.0 / d)


def fit(
    data: Dataset,
    basis: BasisSpec,
    *,
    max_iter: int = 10_000,
    step_tol: float = 1e-12,
    grad_tol: float = 1e-6,
    diffusion_floor: float = DIFFUSION_FLOOR,
    q0=None,
    refresh: int = 100,
) -> FitResult:
    """Minimise ``L'`` by gradient descent with Armijo backtracking.

    The descent runs on the per-increment objective ``L' / (n_obs - 1)``
    (same minimiser) in coordinates whitened by the outer-product
    information of the per-increment scores, refreshed every ``refresh``
    iterations. Gradients are central finite differences.
    """
    max_iter = check_count(max_iter, "max_iter", minimum=0)
    check_positive(grad_tol, "grad_tol")
    check_positive(diffusion_floor, "diffusion_floor")
    lik = _Likelihood(data, basis, diffusion_floor)
    if basis.n_params >= lik.n_inc:
        raise ValueError(f"{basis.n_params} parameters need more than {lik.n_inc} increments")
    q = initial_guess(data, basis) if q0 is None else np.array(q0, dtype=float)
    scale = 1.0 / lik.n_inc

    def f(qq):
        return lik.value(qq) * scale

    fq = f(q)
    history = [fq]
    C = None
    alpha = 1.0
    it = 0
    gnorm = math.inf
    converged = False
    while True:
        G = _per_increment_gradient(lik, q)
        if C is None or (refresh and it % refresh == 0 and it > 0):
            C = _whitening(G)
        g = C.T @ G.mean(axis=0)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= grad_tol:
            converged = True
            break
        if it >= max_iter:
            break
        # Armijo backtracking along -g in whitened coordinates
        alpha = min(1.0, 2.0 * alpha)
        accepted = False
        while alpha * gnorm > step_tol:
            trial = q - alpha * (C @ g)
            try:
                ft = f(trial)
            except IdentificationError:
                ft = math.inf
            if ft <= fq - 1e-4 * alpha * gnorm * gnorm:
                accepted = True
                break
            alpha *= 0.5
        it += 1
        if not accepted:
            # identical per-increment scores (noise-free data) make the whitened norm
            # exactly 1; stationarity is then judged on the raw gradient
            raw = float(np.linalg.norm(G.mean(axis=0)))
            if raw <= grad_tol:
                converged = True
                gnorm = raw
            break
        q, fq = trial, ft
        history.append(fq)

    diff_vals = lik.parts(q)[1]
    S_diag = np.einsum("kij,kij->ki", diff_vals, diff_vals)
    degenerate = bool(np.all(S_diag <= 10.0 * diffusion_floor))
    return FitResult(
        q=q, objective=fq * lik.n_inc, iterations=it, gradient_norm=gnorm, converged=converged,
        basis=basis, h=data.h, degenerate=degenerate, floor=diffusion_floor, n_increments=lik.n_inc,
        x0=tuple(float(v) for v in data.samples.mean(axis=0)), history=history,
    )


# ---------------------------------------------------------------------------
# validation


def autocorrelation(x, lags: int) -> np.ndarray:
    """Normalised sample autocorrelation at lags ``0..lags`` (biased estimator)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if lags >= n:
        raise ValueError(f"lags={lags} needs more than {n} samples")
    c = x - x.mean()
    var = float(c @ c)
    if var == 0.0:
        out = np.zeros(lags + 1)
        out[0] = 1.0
        return out
    size = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(c, size)
    acov = np.fft.irfft(spec * np.conj(spec), size)[: lags + 1]
    out = acov / acov[0]
    out[0] = 1.0
    return out


@dataclass(frozen=True)
class ValidationReport:
    pdf_distance: float
    acf_rmse: float
    lags: int
    seed: int | None

    def to_dict(self) -> dict:
        return {"pdf_distance": self.pdf_distance, "acf_rmse": self.acf_rmse, "lags": self.lags, "seed": self.seed}


def simulate_like(model: ItoModel, data: Dataset, seed: int = 0) -> Dataset:
    """One model path with the record's length, step and initial state."""
    values = em_batch(model, data.grid, data.samples[0], [0], derive_seed(seed, STREAM_VALIDATE))[0]
    return Dataset(values, data.h, data.t0)


def compare_records(a: Dataset, b: Dataset, lags: int) -> tuple[float, float]:
    """KS distance between value distributions and RMSE between ACFs (worst component)."""
    if a.m != b.m:
        raise ValueError("records have different dimensions")
    ks = max(stats.ks_2samp(a.samples[:, i], b.samples[:, i]).statistic for i in range(a.m))
    err = np.concatenate([
        autocorrelation(a.samples[:, i], lags) - autocorrelation(b.samples[:, i], lags) for i in range(a.m)
    ])
    return float(ks), float(np.sqrt(np.mean(err ** 2)))


def validate(model: ItoModel, data: Dataset, lags: int = 50, *, seed: int = 0,
             diagnostic: bool = False) -> ValidationReport:
    """Compare the record with a simulated path of the model.

    In ``diagnostic`` mode the record is compared with itself, which pins
    both distances at zero and checks the plumbing.
    """
    lags = check_count(lags, "lags", minimum=0)
    if lags >= data.n_obs:
        raise ValueError(f"lags={lags} needs more than {data.n_obs} observations")
    if model.m != data.m:
        raise ValueError(f"model has m={model.m}, data has m={data.m}")
    other = data if diagnostic else simulate_like(model, data, seed)
    ks, rmse = compare_records(data, other, lags)
    return ValidationReport(ks, rmse, lags, None if diagnostic else seed)


# ---------------------------------------------------------------------------
# estimator


class ItoModelIdentifier(BaseEstimator):
    """Estimator wrapper: ``fit(X)`` on a ``(n_obs, m)`` record sampled every ``h``."""

    def __init__(self, h: float = 1.0, drift_degree=1, diffusion_degree=0, max_iter: int = 10_000,
                 grad_tol: float = 1e-6, step_tol: float = 1e-12, diffusion_floor: float = DIFFUSION_FLOOR):
        self.h = h
        self.drift_degree = drift_degree
        self.diffusion_degree = diffusion_degree
        self.max_iter = max_iter
        self.grad_tol = grad_tol
        self.step_tol = step_tol
        self.diffusion_floor = diffusion_floor

    def _basis(self, m: int) -> BasisSpec:
        drift = self.drift_degree
        diff = self.diffusion_degree
        if isinstance(drift, (int, np.integer)):
            drift = (drift,) * m
        if isinstance(diff, (int, np.integer)):
            diff = tuple(tuple(diff for _ in range(m)) for _ in range(m))
        return BasisSpec(drift, diff)

    def fit(self, X, y=None):
        X = check_matrix(np.asarray(X, dtype=float).reshape(len(X), -1), "X")
        data = Dataset(X, self.h)
        self.basis_ = self._basis(data.m)
        self.result_ = fit(data, self.basis_, max_iter=self.max_iter, grad_tol=self.grad_tol,
                           step_tol=self.step_tol, diffusion_floor=self.diffusion_floor)
        self.model_ = self.result_.to_model()
        self.coef_ = self.result_.q
        self.n_features_in_ = data.m
        return self

    def predict(self, X) -> np.ndarray:
        """One-step conditional mean ``ξ + h μ(ξ)``."""
        X = np.asarray(X, dtype=float).reshape(len(X), -1)
        return X + self.h * self.model_.drift_batch(X)

    def score(self, X, y=None) -> float:
        """Mean per-increment log-likelihood (constants dropped)."""
        data = Dataset(np.asarray(X, dtype=float).reshape(len(X), -1), self.h)
        return -nll(self.coef_, data, self.basis_, floor=self.diffusion_floor) / (data.n_obs - 1)
