"""Euler-Maruyama simulation of Itô-process paths."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from ._random import STREAM_EM, check_seed, stream
from ._validation import check_count, check_positive, check_vector
from .exceptions import SimulationError
from .ito import ItoModel

ORIGINS = ("euler_maruyama", "spectral")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0, t0 + h, ..., T``."""

    t0: float
    T: float
    h: float

    def __post_init__(self):
        t0 = float(self.t0)
        T = float(self.T)
        h = check_positive(self.h, "h")
        if not (math.isfinite(t0) and math.isfinite(T)) or T <= t0:
            raise ValueError(f"need finite t0 < T, got t0={t0}, T={T}")
        ratio = (T - t0) / h
        k = round(ratio)
        if k < 1 or abs(ratio - k) > np.spacing(float(k)):
            raise ValueError(f"(T - t0)/h = {ratio!r} is not an integer number of steps")
        object.__setattr__(self, "t0", t0)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "h", h)

    @property
    def n_steps(self) -> int:
        return round((self.T - self.t0) / self.h)

    @property
    def span(self) -> float:
        return self.T - self.t0

    @property
    def times(self) -> np.ndarray:
        t = self.t0 + self.h * np.arange(self.n_steps + 1)
        t[-1] = self.T
        return t

    def refine(self, substeps: int) -> "TimeGrid":
        return TimeGrid(self.t0, self.T, self.h / substeps)


@dataclass(frozen=True, eq=False)
class PathSet:
    """Ensemble of paths with values of shape ``(n_paths, n_steps + 1, m)``."""

    grid: TimeGrid
    values: np.ndarray
    origin: str = "euler_maruyama"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 3 or values.shape[1] != self.grid.n_steps + 1:
            raise ValueError(
                f"values must have shape (n_paths, {self.grid.n_steps + 1}, m), got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("path values must be finite")
        if self.origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}, got {self.origin!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[2]

    def __eq__(self, other):
        return (
            isinstance(other, PathSet)
            and self.grid == other.grid
            and self.origin == other.origin
            and np.array_equal(self.values, other.values)
        )

    def to_csv(self, path=None) -> str | None:
        """Write ``path_id, t, xi_1..xi_m`` rows; returns the text if ``path`` is None."""
        text = paths_to_csv(self.values, self.grid, self.origin)
        if path is None:
            return text
        Path(path).write_text(text)
        return None

    @classmethod
    def from_csv(cls, source) -> "PathSet":
        """Read a path CSV from a file path or an open text stream."""
        if hasattr(source, "read"):
            text = source.read()
        else:
            text = Path(source).read_text()
        values, grid, origin = paths_from_csv(text)
        return cls(grid, values, origin)


def paths_to_csv(values: np.ndarray, grid: TimeGrid, origin: str | None) -> str:
    values = np.asarray(values, dtype=float)
    n_paths, n_times, m = values.shape
    buf = io.StringIO()
    if origin is not None:
        buf.write(f"# origin: {origin}\n")
    buf.write(f"# grid: {grid.t0!r} {grid.T!r} {grid.h!r}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["path_id", "t"] + [f"xi_{i + 1}" for i in range(m)])
    times = grid.times
    for k in range(n_paths):
        for s in range(n_times):
            writer.writerow([k, repr(float(times[s]))] + [repr(float(v)) for v in values[k, s]])
    return buf.getvalue()


def paths_from_csv(text: str) -> tuple[np.ndarray, TimeGrid, str]:
    origin = "euler_maruyama"
    stated = None
    lines = text.splitlines()
    body = []
    for line in lines:
        stripped = line.strip()
        if stripped.startswith("#"):
            key, _, value = stripped[1:].partition(":")
            if key.strip() == "origin":
                origin = value.strip()
            elif key.strip() == "grid":
                try:
                    stated = tuple(float(v) for v in value.split())
                except ValueError:
                    stated = None
            continue
        if stripped:
            body.append(line)
    if not body:
        raise ValueError("path CSV is empty")
    reader = csv.reader(body)
    header = next(reader)
    if len(header) < 3 or header[0] != "path_id" or header[1] != "t":
        raise ValueError(f"path CSV header must start with path_id,t,xi_1...; got {header}")
    m = len(header) - 2
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != m + 2:
            raise ValueError(f"line {lineno}: expected {m + 2} fields, got {len(row)}")
        try:
            rows.append((int(row[0]), float(row[1]), [float(v) for v in row[2:]]))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    ids = sorted({r[0] for r in rows})
    if ids != list(range(len(ids))):
        raise ValueError("path ids must be 0..n_paths-1")
    by_path: dict[int, list] = {k: [] for k in ids}
    for pid, t, xs in rows:
        by_path[pid].append((t, xs))
    n_times = len(by_path[0])
    if n_times < 2 or any(len(v) != n_times for v in by_path.values()):
        raise ValueError("every path needs the same number (>= 2) of time points")
    times = np.array([t for t, _ in by_path[0]])
    h = (times[-1] - times[0]) / (n_times - 1)
    if np.max(np.abs(np.diff(times) - h)) > 1e-9 * max(h, 1.0) * n_times:
        raise ValueError("path CSV times are not uniformly spaced")
    grid = TimeGrid(times[0], times[-1], h)
    if stated is not None and len(stated) == 3:
        # exact grid parameters survive the round trip when they agree with the rows
        t0, T, hs = stated
        if abs(t0 - times[0]) <= 1e-12 * max(1.0, abs(t0)) and abs(hs - h) <= 1e-9 * h:
            grid = TimeGrid(t0, T, hs)
    values = np.array([[xs for _, xs in by_path[k]] for k in ids], dtype=float)
    return values, grid, origin


def _diffusion_times_noise(sigma: np.ndarray, z: np.ndarray) -> np.ndarray:
    # sigma (..., m, n) times z (..., n) with elementwise products only
    out = sigma[..., 0] * z[..., None, 0]
    for j in range(1, sigma.shape[-1]):
        out = out + sigma[..., j] * z[..., None, j]
    return out


def _em_update(model: ItoModel, X: np.ndarray, h: float, sqrt_h: float, Z: np.ndarray) -> np.ndarray:
    return X + h * model.drift_batch(X) + _diffusion_times_noise(model.diffusion_batch(X), Z) * sqrt_h


def em_step(model: ItoModel, xi, t: float, h: float, zeta) -> np.ndarray:
    """One Euler-Maruyama step ``ξ + h μ(ξ) + σ(ξ) √h ζ`` followed by the boundary policy."""
    h = check_positive(h, "h")
    xi = check_vector(xi, model.m, "xi")
    zeta = check_vector(zeta, model.n, "zeta")
    new = _em_update(model, xi, h, math.sqrt(h), zeta)
    bad = np.flatnonzero(~np.isfinite(new))
    if bad.size:
        raise SimulationError("non-finite Euler-Maruyama update", component=int(bad[0]))
    return model.apply_boundary(new)


def em_batch(
    model: ItoModel,
    grid: TimeGrid,
    xi0,
    path_ids: Iterable[int],
    seed: int,
    *,
    substeps: int = 1,
    chunk_steps: int = 4096,
) -> np.ndarray:
    """Simulate the listed paths; returns ``(len(path_ids), n_steps + 1, m)``.

    Path ``k`` consumes the ``(seed, k)`` normal stream in step order, so its
    values do not depend on which other paths share the batch. ``seed`` may
    also be a sequence giving one seed per path.
    """
    substeps = check_count(substeps, "substeps")
    xi0 = check_vector(xi0, model.m, "xi0")
    path_ids = [check_seed(k) for k in path_ids]
    if isinstance(seed, (int, np.integer)):
        seeds = [check_seed(seed)] * len(path_ids)
    else:
        seeds = [check_seed(s) for s in seed]
        if len(seeds) != len(path_ids):
            raise ValueError("need one seed per path")
    B, m, n = len(path_ids), model.m, model.n
    n_out = grid.n_steps
    n_int = n_out * substeps
    h = grid.h / substeps
    sqrt_h = math.sqrt(h)
    gens = [stream(s, STREAM_EM, k) for s, k in zip(seeds, path_ids)]

    out = np.empty((B, n_out + 1, m))
    out[:, 0, :] = xi0
    X = np.broadcast_to(xi0, (B, m)).copy()
    step = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while step < n_int:
            S = min(chunk_steps, n_int - step)
            Z = np.stack([g.standard_normal((S, n)) for g in gens], axis=1) if B else np.empty((S, 0, n))
            for s in range(S):
                new = _em_update(model, X, h, sqrt_h, Z[s])
                finite = np.isfinite(new)
                if not finite.all():
                    b, c = np.argwhere(~finite)[0]
                    raise SimulationError(
                        "non-finite Euler-Maruyama update", path=path_ids[b], step=step + s + 1, component=int(c)
                    )
                X = model.apply_boundary(new)
                if (step + s + 1) % substeps == 0:
                    out[:, (step + s + 1) // substeps, :] = X
            step += S
    return out


def simulate_em_paths(
    model: ItoModel,
    grid: TimeGrid,
    xi0=None,
    n_paths: int = 1,
    seed: int = 0,
    *,
    substeps: int = 1,
) -> PathSet:
    """Euler-Maruyama ensemble on ``grid``.

    ``substeps`` integrates at ``grid.h / substeps`` and records every
    ``substeps``-th state, which keeps long fine-step runs small in memory.
    ``xi0`` defaults to the model's reference state.
    """
    n_paths = check_count(n_paths, "n_paths")
    xi0 = model.x0 if xi0 is None else xi0
    values = em_batch(model, grid, xi0, range(n_paths), seed, substeps=substeps)
    return PathSet(grid, values, "euler_maruyama")
