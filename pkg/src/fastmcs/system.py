"""Random response functions: disturbance path in, scalar response out.

Any callable ``rrf(paths, grid) -> responses`` with ``paths`` of shape
``(B, n_steps + 1, m)`` and a finite ``(B,)`` result can drive the Monte
Carlo engine. The engine only ever sees paths through this contract, so a
commercial simulator can be swapped in through :class:`ExternalSimulatorRRF`.

The built-in system is a two-state aggregate frequency model

    2H dΔω/dt   = ΔP_wind(t) - ΔP_loss(t) + ΔP_gov - D Δω
    Tg dΔP_gov/dt = -ΔP_gov - Δω / R

with a step loss of generation at the trip time.
"""

from __future__ import annotations

import math
import shlex
import subprocess
from dataclasses import dataclass

import numpy as np

from ._validation import check_positive
from .exceptions import SamplerError, SimulationError
from .sde import TimeGrid, paths_to_csv

RMS_WINDOW = (0.0, 60.0)


@dataclass(frozen=True)
class FrequencyModel:
    """Aggregate inertia/damping/droop model; powers in pu of ``Pbase``.

    ``schedule`` is the wind output (pu of ``wind_base``) the dispatch
    assumes; only deviations from it disturb the frequency. ``None`` means
    "use the disturbance model's reference state".
    """

    H: float = 5.0
    D: float = 1.0
    R: float = 0.05
    Tg: float = 0.5
    Pbase: float = 10_000.0
    wind_base: float = 3_000.0
    schedule: float | None = None

    def __post_init__(self):
        check_positive(self.H, "H")
        check_positive(self.Tg, "Tg")
        check_positive(self.R, "R")
        check_positive(self.D, "D", strict=False)
        check_positive(self.Pbase, "Pbase")
        check_positive(self.wind_base, "wind_base", strict=False)
        if self.schedule is not None and not math.isfinite(self.schedule):
            raise ValueError("schedule must be finite")

    @property
    def stiffness(self) -> float:
        """Static frequency response ``D + 1/R``."""
        return self.D + 1.0 / self.R


@dataclass(frozen=True)
class TripEvent:
    time: float = 1.0
    lost_power: float = 0.08

    def __post_init__(self):
        if not (math.isfinite(self.time) and self.time >= 0):
            raise ValueError(f"trip time must be >= 0, got {self.time}")
        if not math.isfinite(self.lost_power):
            raise ValueError("lost_power must be finite")


NO_TRIP = TripEvent(0.0, 0.0)


@dataclass(frozen=True, eq=False)
class ResponseTrajectory:
    grid: TimeGrid
    freq_deviation: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.freq_deviation, dtype=float)
        if d.shape != (self.grid.n_steps + 1,):
            raise ValueError(f"freq_deviation must have length {self.grid.n_steps + 1}")
        if not np.all(np.isfinite(d)):
            raise ValueError("freq_deviation must be finite")
        object.__setattr__(self, "freq_deviation", d)


def simulate_response_batch(
    model: FrequencyModel,
    disturbance: np.ndarray,
    event: TripEvent,
    grid: TimeGrid,
    schedule: float = 0.0,
) -> np.ndarray:
    """Frequency deviation for a ``(B, n_steps + 1)`` batch of wind paths.

    RK4 at the grid step; the disturbance is interpolated linearly to the
    half steps. Returns ``(B, n_steps + 1)``.
    """
    w = np.atleast_2d(np.asarray(disturbance, dtype=float))
    if w.shape[1] != grid.n_steps + 1:
        raise ValueError(f"disturbance has {w.shape[1]} points, grid has {grid.n_steps + 1}")
    scale = model.wind_base / model.Pbase
    p_wind = (w - schedule) * scale
    p_mid = 0.5 * (p_wind[:, :-1] + p_wind[:, 1:])
    t = grid.times
    h = grid.h
    loss = lambda tt: event.lost_power if tt >= event.time else 0.0  # noqa: E731
    inv_2h = 1.0 / (2.0 * model.H)
    inv_tg = 1.0 / model.Tg
    inv_r = 1.0 / model.R
    D = model.D

    def f(dw, pg, pw, pl):
        return (pw - pl + pg - D * dw) * inv_2h, (-pg - dw * inv_r) * inv_tg

    B = w.shape[0]
    dw = np.zeros(B)
    pg = np.zeros(B)
    out = np.empty((B, grid.n_steps + 1))
    out[:, 0] = 0.0
    for s in range(grid.n_steps):
        t0, tm, t1 = t[s], t[s] + 0.5 * h, t[s + 1]
        l0, lm, l1 = loss(t0), loss(tm), loss(t1)
        a1, b1 = f(dw, pg, p_wind[:, s], l0)
        a2, b2 = f(dw + 0.5 * h * a1, pg + 0.5 * h * b1, p_mid[:, s], lm)
        a3, b3 = f(dw + 0.5 * h * a2, pg + 0.5 * h * b2, p_mid[:, s], lm)
        a4, b4 = f(dw + h * a3, pg + h * b3, p_wind[:, s + 1], l1)
        dw = dw + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        pg = pg + (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        out[:, s + 1] = dw
    if not np.all(np.isfinite(out)):
        b = int(np.argwhere(~np.isfinite(out))[0][0])
        raise SimulationError("non-finite frequency deviation", path=b)
    return out


def simulate_response(
    model: FrequencyModel,
    disturbance,
    event: TripEvent,
    grid: TimeGrid,
) -> ResponseTrajectory:
    """Frequency deviation for one disturbance path (pu of ``wind_base``)."""
    d = np.asarray(disturbance, dtype=float)
    if d.ndim != 1:
        raise ValueError("disturbance must be a 1-D path")
    schedule = 0.0 if model.schedule is None else model.schedule
    return ResponseTrajectory(grid, simulate_response_batch(model, d[None], event, grid, schedule)[0])


def trapezoid_weights(grid: TimeGrid, window) -> np.ndarray:
    """Trapezoid weights for the grid points inside ``window`` (zero outside)."""
    ta, tb = (float(v) for v in window)
    t = grid.times
    tol = 1e-9 * grid.h
    if ta < grid.t0 - tol or tb > grid.T + tol or tb < ta:
        raise ValueError(f"window [{ta}, {tb}] outside the trajectory span [{grid.t0}, {grid.T}]")
    inside = np.flatnonzero((t >= ta - tol) & (t <= tb + tol))
    if inside.size < 2:
        raise ValueError(f"window [{ta}, {tb}] contains fewer than two grid points")
    w = np.zeros_like(t)
    dt = np.diff(t[inside])
    w[inside[:-1]] += 0.5 * dt
    w[inside[1:]] += 0.5 * dt
    return w


def rms_batch(values: np.ndarray, grid: TimeGrid, window=RMS_WINDOW) -> np.ndarray:
    w = trapezoid_weights(grid, window)
    sq = np.asarray(values, dtype=float) ** 2
    return np.sqrt(np.sum(sq * w, axis=-1) / np.sum(w))


def rrf_rms(traj: ResponseTrajectory, window=RMS_WINDOW) -> float:
    """Root mean square of the deviation over ``window`` (trapezoid rule)."""
    return float(rms_batch(traj.freq_deviation, traj.grid, window))


class FrequencyResponseRRF:
    """RMS frequency deviation of the built-in model under a wind disturbance."""

    def __init__(self, model: FrequencyModel | None = None, event: TripEvent | None = None,
                 window=RMS_WINDOW, component: int = 0, schedule: float | None = None):
        self.model = model or FrequencyModel()
        self.event = event or TripEvent()
        self.window = tuple(float(v) for v in window)
        self.component = component
        self.schedule = schedule if schedule is not None else self.model.schedule

    def bind_schedule(self, default: float) -> "FrequencyResponseRRF":
        """Copy with the schedule filled in from the disturbance model when unset."""
        if self.schedule is not None:
            return self
        return FrequencyResponseRRF(self.model, self.event, self.window, self.component, default)

    def trajectories(self, paths, grid: TimeGrid) -> np.ndarray:
        paths = np.asarray(paths, dtype=float)
        schedule = 0.0 if self.schedule is None else self.schedule
        return simulate_response_batch(self.model, paths[..., self.component], self.event, grid, schedule)

    def __call__(self, paths, grid: TimeGrid) -> np.ndarray:
        return rms_batch(self.trajectories(paths, grid), grid, self.window)

    def describe(self) -> dict:
        m = self.model
        return {
            "kind": "frequency_rms",
            "H": m.H, "D": m.D, "R": m.R, "Tg": m.Tg, "Pbase": m.Pbase, "wind_base": m.wind_base,
            "schedule": self.schedule, "trip_time": self.event.time,
            "lost_power": self.event.lost_power, "window": list(self.window),
        }


class EndpointRRF:
    """Value of one disturbance component at the final time."""

    def __init__(self, component: int = 0):
        self.component = component

    def __call__(self, paths, grid: TimeGrid) -> np.ndarray:
        return np.asarray(paths, dtype=float)[:, -1, self.component].copy()

    def describe(self) -> dict:
        return {"kind": "endpoint", "component": self.component}


class FunctionRRF:
    """Adapter for a per-path callable ``f(path, grid) -> float``."""

    def __init__(self, func):
        self.func = func

    def __call__(self, paths, grid: TimeGrid) -> np.ndarray:
        return np.array([float(self.func(p, grid)) for p in np.asarray(paths)])

    def describe(self) -> dict:
        return {"kind": "function", "name": getattr(self.func, "__name__", repr(self.func))}


class ExternalSimulatorRRF:
    """Child-process simulator.

    For every path the command is started once, receives the path CSV
    (``path_id, t, xi_1..xi_m`` with a header, ``path_id`` always 0) on
    standard input and must print a single finite number on standard output
    and exit with status 0.
    """

    def __init__(self, command, timeout: float | None = 600.0):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise ValueError("external simulator command is empty")
        self.timeout = timeout

    def evaluate_one(self, path: np.ndarray, grid: TimeGrid) -> float:
        text = paths_to_csv(np.asarray(path, dtype=float)[None], grid, None)
        try:
            proc = subprocess.run(
                self.command, input=text, capture_output=True, text=True, timeout=self.timeout, check=False
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise SamplerError(f"external simulator failed to run: {exc}") from exc
        if proc.returncode != 0:
            raise SamplerError(f"external simulator exited with status {proc.returncode}: {proc.stderr.strip()}")
        try:
            value = float(proc.stdout.strip())
        except ValueError:
            raise SamplerError(f"external simulator printed {proc.stdout.strip()!r}, expected one number") from None
        if not math.isfinite(value):
            raise SamplerError("external simulator returned a non-finite value")
        return value

    def __call__(self, paths, grid: TimeGrid) -> np.ndarray:
        return np.array([self.evaluate_one(p, grid) for p in np.asarray(paths)])

    def describe(self) -> dict:
        return {"kind": "external", "command": self.command}
