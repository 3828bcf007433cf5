"""Monte Carlo orchestration: traditional (Euler-Maruyama) and fast (LHS + KLE).

Both arms produce a :class:`StatsReport` holding the expectation and
variance estimates at every sample size ``1..N``. In ``prefix`` mode the
size-``n`` estimate uses the first ``n`` samples of one run. In ``rerun``
mode every size is an independent run with its own seed derived from
``(seed, n)``; for Latin hypercube designs this is the only mode where the
size-``n`` estimate comes from a stratified design of size ``n``.

Samples are evaluated in fixed-size chunks, optionally on a thread pool.
The chunk layout does not depend on the pool width and the statistics are
reduced sequentially in sample order, so reports are bit-identical for any
number of workers.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._random import STREAM_RERUN, check_seed, derive_seed
from ._validation import check_count
from .exceptions import SamplerError, SimulationError
from .ito import ItoModel
from .sampling import decorrelate as decorrelate_matrix
from .sampling import lhs_normal, srs_normal
from .sde import TimeGrid, em_batch
from .spectral import KleConfig, spectral_batch, unflatten

DEGREE_WINDOW = 5
MODES = ("prefix", "rerun")
REPORT_FORMAT = "fastmcs-stats-report"

RRF = Callable[[np.ndarray, TimeGrid], np.ndarray]


def running_stats(samples: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Prefix means and unbiased variances by Welford's recurrence.

    The size-1 variance is reported as 0.
    """
    x = np.asarray(samples, dtype=float)
    means = np.empty(x.size)
    variances = np.empty(x.size)
    mean = 0.0
    m2 = 0.0
    for k, v in enumerate(x, start=1):
        delta = v - mean
        mean += delta / k
        m2 += delta * (v - mean)
        means[k - 1] = mean
        variances[k - 1] = m2 / (k - 1) if k > 1 else 0.0
    return means, np.maximum(variances, 0.0)


def convergence_degree(estimates: Sequence[float]) -> float:
    """Spread (max - min) of the last five estimates."""
    est = np.asarray(estimates, dtype=float)
    if est.ndim != 1 or est.size < DEGREE_WINDOW:
        raise ValueError(f"need at least {DEGREE_WINDOW} estimates, got {est.size}")
    tail = est[-DEGREE_WINDOW:]
    return float(tail.max() - tail.min())


def degree_sequence(estimates: Sequence[float]) -> np.ndarray:
    """Convergence degree at every size; NaN below five estimates."""
    est = np.asarray(estimates, dtype=float)
    out = np.full(est.size, np.nan)
    for n in range(DEGREE_WINDOW, est.size + 1):
        tail = est[n - DEGREE_WINDOW:n]
        out[n - 1] = tail.max() - tail.min()
    return out


@dataclass(frozen=True, eq=False)
class StatsReport:
    """Expectation/variance estimates of a response at sizes ``1..N``."""

    method: str
    mode: str
    seed: int
    mean: np.ndarray
    variance: np.ndarray
    samples: np.ndarray
    K: int | None = None
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        variance = np.asarray(self.variance, dtype=float)
        if mean.shape != variance.shape or mean.ndim != 1 or mean.size == 0:
            raise ValueError("mean and variance must be equal-length non-empty vectors")
        if np.any(variance < 0):
            raise ValueError("variance estimates must be non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", variance)
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))

    @property
    def N(self) -> int:
        return self.mean.size

    @property
    def final_mean(self) -> float:
        return float(self.mean[-1])

    @property
    def final_variance(self) -> float:
        return float(self.variance[-1])

    def estimates(self, statistic: str) -> np.ndarray:
        if statistic == "mean":
            return self.mean
        if statistic == "variance":
            return self.variance
        raise ValueError(f"statistic must be 'mean' or 'variance', got {statistic!r}")

    def degrees(self, statistic: str) -> np.ndarray:
        return degree_sequence(self.estimates(statistic))

    @property
    def degree_mean(self) -> np.ndarray:
        return self.degrees("mean")

    @property
    def degree_variance(self) -> np.ndarray:
        return self.degrees("variance")

    def to_dict(self) -> dict:
        def clean(a):
            return [None if not math.isfinite(v) else float(v) for v in np.asarray(a, dtype=float)]

        return {
            "format": REPORT_FORMAT,
            "method": self.method,
            "mode": self.mode,
            "seed": self.seed,
            "K": self.K,
            "N": self.N,
            "settings": self.settings,
            "final_mean": self.final_mean,
            "final_variance": self.final_variance,
            "final_degree_mean": clean(self.degree_mean[-1:])[0] if self.N >= DEGREE_WINDOW else None,
            "final_degree_variance": clean(self.degree_variance[-1:])[0] if self.N >= DEGREE_WINDOW else None,
            "mean": clean(self.mean),
            "variance": clean(self.variance),
            "samples": clean(self.samples),
        }

    def to_json(self, path=None) -> str | None:
        text = json.dumps(self.to_dict(), indent=2) + "\n"
        if path is None:
            return text
        Path(path).write_text(text)
        return None

    @classmethod
    def from_dict(cls, d: dict) -> "StatsReport":
        if d.get("format") != REPORT_FORMAT:
            raise ValueError("not a stats report")
        return cls(d["method"], d["mode"], d["seed"], d["mean"], d["variance"],
                   [np.nan if v is None else v for v in d["samples"]], d.get("K"), d.get("settings", {}))

    @classmethod
    def from_json(cls, path) -> "StatsReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_csv(self, path=None) -> str | None:
        """Per-size sequences: ``N, mean, variance, degree_mean, degree_variance``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "mean", "variance", "degree_mean", "degree_variance"])
        dm, dv = self.degree_mean, self.degree_variance
        for n in range(self.N):
            w.writerow([
                n + 1, repr(float(self.mean[n])), repr(float(self.variance[n])),
                "" if math.isnan(dm[n]) else repr(float(dm[n])),
                "" if math.isnan(dv[n]) else repr(float(dv[n])),
            ])
        if path is None:
            return buf.getvalue()
        Path(path).write_text(buf.getvalue())
        return None


def _chunks(n: int, size: int):
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def _evaluate_chunks(func, chunks, workers: int) -> np.ndarray:
    if workers <= 1 or len(chunks) <= 1:
        parts = [func(a, b) for a, b in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ab: func(*ab), chunks))
    return np.concatenate(parts) if parts else np.empty(0)


def _call_rrf(rrf: RRF, paths: np.ndarray, grid: TimeGrid, start: int) -> np.ndarray:
    try:
        values = np.asarray(rrf(paths, grid), dtype=float).reshape(-1)
    except SamplerError as exc:
        index = start + exc.index if exc.index is not None else start
        raise SamplerError(str(exc), index) from exc
    except SimulationError as exc:
        index = start + exc.path if exc.path is not None else start
        raise SamplerError(f"response simulation failed: {exc}", index) from exc
    if values.shape[0] != paths.shape[0]:
        raise SamplerError(f"response function returned {values.shape[0]} values for {paths.shape[0]} paths", start)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise SamplerError("response function returned a non-finite value", start + int(bad[0]))
    return values


def _bind_rrf(rrf, model: ItoModel):
    bind = getattr(rrf, "bind_schedule", None)
    return bind(model.x0[0]) if bind is not None else rrf


def _traditional_values(model, rrf, grid, seeds, path_ids, *, xi0, substeps, workers, batch_size):
    xi0 = model.x0 if xi0 is None else xi0
    rrf = _bind_rrf(rrf, model)

    def run(a, b):
        try:
            paths = em_batch(model, grid, xi0, path_ids[a:b], seeds[a:b], substeps=substeps)
        except SimulationError as exc:
            index = a + list(path_ids[a:b]).index(exc.path) if exc.path is not None else a
            raise SamplerError(f"path simulation failed: {exc}", index) from exc
        return _call_rrf(rrf, paths, grid, a)

    return _evaluate_chunks(run, _chunks(len(path_ids), batch_size), workers)


def kle_design(cfg: KleConfig, N: int, seed: int, *, sampling: str = "lhs", decorrelate: bool = True,
               placement: str = "uniform_in_stratum"):
    """Coefficient design for ``N`` spectral paths (``SampleMatrix`` with ``M = n K`` rows)."""
    if sampling == "srs":
        return srs_normal(cfg.M, N, seed)
    if sampling != "lhs":
        raise ValueError(f"sampling must be 'lhs' or 'srs', got {sampling!r}")
    design = lhs_normal(cfg.M, N, seed, placement)
    if decorrelate and cfg.M > 1 and N > 1:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            design = decorrelate_matrix(design, seed)
    return design


def _spectral_values(model, rrf, grid, cfg, columns, *, xi0, ito_correction, workers, batch_size):
    xi0 = model.x0 if xi0 is None else xi0
    rrf = _bind_rrf(rrf, model)

    def run(a, b):
        zeta = unflatten(columns[a:b], cfg)
        try:
            paths = spectral_batch(model, zeta, grid, cfg, xi0, ito_correction=ito_correction,
                                   sample_ids=list(range(a, b)))
        except SimulationError as exc:
            raise SamplerError(f"spectral path failed: {exc}", exc.path) from exc
        return _call_rrf(rrf, paths, grid, a)

    return _evaluate_chunks(run, _chunks(columns.shape[0], batch_size), workers)


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def rerun_seed(seed: int, n: int) -> int:
    """Seed of the independent size-``n`` run in ``rerun`` mode."""
    return derive_seed(seed, STREAM_RERUN, n)


def _split_runs(values: np.ndarray, N: int):
    means = np.empty(N)
    variances = np.empty(N)
    offset = 0
    for n in range(1, N + 1):
        m, v = running_stats(values[offset:offset + n])
        means[n - 1], variances[n - 1] = m[-1], v[-1]
        offset += n
    return means, variances, values[offset - N:offset]


def run_traditional_mcs(
    model: ItoModel, rrf: RRF, grid: TimeGrid, N: int, seed: int = 0, *,
    mode: str = "prefix", xi0=None, substeps: int = 1, workers: int = 1, batch_size: int = 1024,
) -> StatsReport:
    """Plain Monte Carlo over Euler-Maruyama paths."""
    N = check_count(N, "N")
    seed = check_seed(seed)
    _check_mode(mode)
    if mode == "prefix":
        seeds, ids = [seed] * N, list(range(N))
    else:
        seeds, ids = [], []
        for n in range(1, N + 1):
            seeds += [rerun_seed(seed, n)] * n
            ids += range(n)
    values = _traditional_values(model, rrf, grid, seeds, ids, xi0=xi0, substeps=substeps,
                                 workers=workers, batch_size=batch_size)
    if mode == "prefix":
        samples = values
        means, variances = running_stats(samples)
    else:
        means, variances, samples = _split_runs(values, N)
    settings = {"h": grid.h, "T": grid.T, "t0": grid.t0, "substeps": substeps, "model": model.name}
    return StatsReport("traditional", mode, seed, means, variances, samples, None, settings)


def run_fast_mcs(
    model: ItoModel, rrf: RRF, grid: TimeGrid, N: int, K: int = 6, seed: int = 0,
    decorrelate: bool = True, *,
    mode: str = "prefix", placement: str = "uniform_in_stratum", sampling: str = "lhs",
    xi0=None, ito_correction: bool = True, workers: int = 1, batch_size: int = 1024,
) -> StatsReport:
    """Latin hypercube sampling of the KLE coefficients, spectral paths, response statistics.

    ``sampling="srs"`` swaps the design for independent normals, isolating
    the effect of stratification from the spectral truncation.
    """
    N = check_count(N, "N")
    K = check_count(K, "K")
    seed = check_seed(seed)
    _check_mode(mode)
    cfg = KleConfig(K, grid.span, model.n)
    opts = dict(sampling=sampling, decorrelate=decorrelate, placement=placement)
    if mode == "prefix":
        designs = [kle_design(cfg, N, seed, **opts)]
    else:
        designs = [kle_design(cfg, n, rerun_seed(seed, n), **opts) for n in range(1, N + 1)]
    columns = np.concatenate([d.columns for d in designs])
    flags = sorted({f for d in designs for f in d.flags})
    values = _spectral_values(model, rrf, grid, cfg, columns, xi0=xi0, ito_correction=ito_correction,
                              workers=workers, batch_size=batch_size)
    if mode == "prefix":
        samples = values
        means, variances = running_stats(samples)
    else:
        means, variances, samples = _split_runs(values, N)
    settings = {
        "h": grid.h, "T": grid.T, "t0": grid.t0, "model": model.name, "sampling": sampling,
        "decorrelate": bool(decorrelate), "placement": placement, "ito_correction": bool(ito_correction),
        "design_flags": flags,
    }
    return StatsReport("fast", mode, seed, means, variances, samples, K, settings)


@dataclass(frozen=True)
class Comparison:
    """Sizes at which two reports first reach the reference convergence degree.

    ``target_degree`` is report A's degree at its largest size; ``N_A`` and
    ``N_B`` are the first sizes where each report's degree drops to it.
    ``N_B`` and ``speedup`` are None when B never gets there.
    """

    statistic: str
    target_degree: float
    N_A: int
    N_B: int | None
    speedup: float | None

    @property
    def reached(self) -> bool:
        return self.N_B is not None

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic, "target_degree": self.target_degree, "N_A": self.N_A,
            "N_B": self.N_B, "speedup": self.speedup, "reached": self.reached,
        }


def _first_reach(degrees: np.ndarray, target: float) -> int | None:
    hit = np.flatnonzero(np.nan_to_num(degrees, nan=np.inf) <= target)
    return int(hit[0]) + 1 if hit.size else None


def compare_methods(report_a: StatsReport, report_b: StatsReport, statistic: str = "mean") -> Comparison:
    """Speed-up of B over A at A's final convergence degree."""
    if report_a.N < DEGREE_WINDOW or report_b.N < DEGREE_WINDOW:
        raise ValueError(f"both reports need at least {DEGREE_WINDOW} sizes to compute a convergence degree")
    deg_a = report_a.degrees(statistic)
    deg_b = report_b.degrees(statistic)
    target = float(deg_a[-1])
    n_a = _first_reach(deg_a, target)
    n_b = _first_reach(deg_b, target)
    speedup = None if n_b is None else n_a / n_b
    return Comparison(statistic, target, n_a, n_b, speedup)


class _MonteCarloBase(BaseEstimator):
    """Shared estimator plumbing: ``fit(model, rrf, grid)`` stores ``report_``."""

    def _store(self, report: StatsReport):
        self.report_ = report
        self.mean_ = report.final_mean
        self.variance_ = report.final_variance
        self.n_samples_ = report.N
        return self

    def convergence_degree(self, statistic: str = "mean") -> float:
        return convergence_degree(self.report_.estimates(statistic))


class TraditionalMonteCarlo(_MonteCarloBase):
    """Estimator wrapper around :func:`run_traditional_mcs`."""

    def __init__(self, n_samples: int = 1000, mode: str = "prefix", substeps: int = 1,
                 random_state: int = 0, n_jobs: int = 1, batch_size: int = 1024):
        self.n_samples = n_samples
        self.mode = mode
        self.substeps = substeps
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.batch_size = batch_size

    def fit(self, model: ItoModel, rrf: RRF, grid: TimeGrid, xi0=None):
        return self._store(run_traditional_mcs(
            model, rrf, grid, self.n_samples, self.random_state, mode=self.mode, xi0=xi0,
            substeps=self.substeps, workers=self.n_jobs, batch_size=self.batch_size,
        ))


class FastMonteCarlo(_MonteCarloBase):
    """Estimator wrapper around :func:`run_fast_mcs`."""

    def __init__(self, n_samples: int = 21, K: int = 6, decorrelate: bool = True, mode: str = "prefix",
                 placement: str = "uniform_in_stratum", sampling: str = "lhs", ito_correction: bool = True,
                 random_state: int = 0, n_jobs: int = 1, batch_size: int = 1024):
        self.n_samples = n_samples
        self.K = K
        self.decorrelate = decorrelate
        self.mode = mode
        self.placement = placement
        self.sampling = sampling
        self.ito_correction = ito_correction
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.batch_size = batch_size

    def fit(self, model: ItoModel, rrf: RRF, grid: TimeGrid, xi0=None):
        return self._store(run_fast_mcs(
            model, rrf, grid, self.n_samples, self.K, self.random_state, self.decorrelate,
            mode=self.mode, placement=self.placement, sampling=self.sampling, xi0=xi0,
            ito_correction=self.ito_correction, workers=self.n_jobs, batch_size=self.batch_size,
        ))
