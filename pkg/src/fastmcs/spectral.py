"""Karhunen-Loève representation of Wiener paths and spectral disturbance paths.

On ``[0, T]`` the white-noise rate of each Wiener component is expanded in
the cosine basis

    m_1(t) = sqrt(1/T),    m_j(t) = sqrt(2/T) cos((j - 1) π t / T),  j >= 2,

with independent standard-normal coefficients. Truncating at order ``K``
turns the SDE into an ODE with random coefficients, which is integrated
deterministically with classical RK4.

A flat coefficient vector of length ``M = n K`` is laid out Wiener component
first: entry ``i * K + j`` holds the coefficient of basis ``j + 1`` for
Wiener component ``i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_count, check_positive, check_vector
from .exceptions import SimulationError
from .ito import ItoModel
from .sde import PathSet, TimeGrid

DEFAULT_K = 6


@dataclass(frozen=True)
class KleConfig:
    K: int = DEFAULT_K
    T: float = 1.0
    n: int = 1

    def __post_init__(self):
        object.__setattr__(self, "K", check_count(self.K, "K"))
        object.__setattr__(self, "T", check_positive(self.T, "T"))
        object.__setattr__(self, "n", check_count(self.n, "n"))

    @property
    def M(self) -> int:
        return self.n * self.K


def _check_time(t, T):
    t = np.asarray(t, dtype=float)
    tol = 1e-12 * max(T, 1.0)
    if np.any(t < -tol) or np.any(t > T + tol):
        raise ValueError(f"t must lie in [0, {T}]")
    return np.clip(t, 0.0, T)


def kle_basis(j: int, t, T: float):
    """Basis function ``m_j`` on ``[0, T]`` (scalar or array ``t``)."""
    if int(j) != j or j < 1:
        raise ValueError(f"basis index must be an integer >= 1, got {j}")
    T = check_positive(T, "T")
    t = _check_time(t, T)
    if j == 1:
        out = np.full_like(t, math.sqrt(1.0 / T))
    else:
        out = math.sqrt(2.0 / T) * np.cos((j - 1) * math.pi * t / T)
    return float(out) if out.ndim == 0 else out


def kle_basis_integral(j: int, t, T: float):
    """Closed form of ``∫_0^t m_j``."""
    if int(j) != j or j < 1:
        raise ValueError(f"basis index must be an integer >= 1, got {j}")
    T = check_positive(T, "T")
    t = _check_time(t, T)
    if j == 1:
        out = t / math.sqrt(T)
    else:
        w = (j - 1) * math.pi / T
        out = math.sqrt(2.0 / T) * np.sin(w * t) / w
    return float(out) if out.ndim == 0 else out


def basis_matrix(K: int, t, T: float) -> np.ndarray:
    """``(K, len(t))`` array of ``m_1..m_K`` evaluated at ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.stack([kle_basis(j, t, T) for j in range(1, K + 1)])


def reconstruct_wiener_rate(zeta_row, t, cfg: KleConfig):
    """Truncated white-noise surrogate ``Σ_j ζ_j m_j(t)``."""
    zeta_row = check_vector(zeta_row, cfg.K, "zeta_row")
    scalar = np.ndim(t) == 0
    B = basis_matrix(cfg.K, t, cfg.T)
    out = _weighted_sum(zeta_row, B)
    return float(out[0]) if scalar else out


def _weighted_sum(coef, basis):
    # Σ_j coef[..., j] * basis[j] as sequential elementwise products (batch-size independent)
    out = coef[..., 0, None] * basis[0]
    for j in range(1, basis.shape[0]):
        out = out + coef[..., j, None] * basis[j]
    return out


def wiener_bridge_check(zeta_row, cfg: KleConfig, n_steps: int) -> np.ndarray:
    """Reconstructed Wiener path on ``n_steps + 1`` equispaced points of ``[0, T]``."""
    zeta_row = check_vector(zeta_row, cfg.K, "zeta_row")
    n_steps = check_count(n_steps, "n_steps")
    t = np.linspace(0.0, cfg.T, n_steps + 1)
    integrals = np.stack([kle_basis_integral(j, t, cfg.T) for j in range(1, cfg.K + 1)])
    return _weighted_sum(zeta_row, integrals)


def unflatten(zeta_flat, cfg: KleConfig) -> np.ndarray:
    """``(..., M)`` flat coefficients to ``(..., n, K)``."""
    zeta_flat = np.asarray(zeta_flat, dtype=float)
    if zeta_flat.shape[-1] != cfg.M:
        raise ValueError(f"expected {cfg.M} coefficients, got {zeta_flat.shape[-1]}")
    return zeta_flat.reshape(zeta_flat.shape[:-1] + (cfg.n, cfg.K))


def _check_grid(grid: TimeGrid, cfg: KleConfig):
    if abs(grid.span - cfg.T) > 1e-9 * max(cfg.T, 1.0):
        raise ValueError(f"grid span {grid.span} differs from KLE horizon {cfg.T}")


def spectral_batch(
    model: ItoModel,
    zeta: np.ndarray,
    grid: TimeGrid,
    cfg: KleConfig,
    xi0=None,
    *,
    ito_correction: bool = True,
    sample_ids=None,
) -> np.ndarray:
    """Integrate the random-coefficient ODE for a batch ``zeta`` of shape ``(B, n, K)``.

    Returns ``(B, n_steps + 1, m)``. With ``ito_correction`` the drift is
    reduced by ``½ Σ σ ∂σ`` so the smooth-noise limit is the Itô process
    rather than its Stratonovich counterpart; the term vanishes for
    state-independent diffusion.
    """
    zeta = np.asarray(zeta, dtype=float)
    if zeta.ndim != 3 or zeta.shape[1:] != (cfg.n, cfg.K):
        raise ValueError(f"zeta must have shape (B, {cfg.n}, {cfg.K}), got {zeta.shape}")
    if not np.all(np.isfinite(zeta)):
        raise ValueError("zeta contains non-finite values")
    if model.n != cfg.n:
        raise ValueError(f"model has {model.n} Wiener components, KLE config has {cfg.n}")
    _check_grid(grid, cfg)
    xi0 = check_vector(model.x0 if xi0 is None else xi0, model.m, "xi0")
    B = zeta.shape[0]
    h = grid.h
    n_steps = grid.n_steps
    # basis on the half-step grid used by the RK4 stages
    tau = np.clip(0.5 * h * np.arange(2 * n_steps + 1), 0.0, cfg.T)
    tau[-1] = cfg.T
    rates = _weighted_sum(zeta, basis_matrix(cfg.K, tau, cfg.T))  # (B, n, 2*n_steps + 1)

    def f(X, r):
        sigma = model.diffusion_batch(X)
        out = model.drift_batch(X)
        if ito_correction:
            out = out - model.ito_correction_batch(X)
        for j in range(sigma.shape[-1]):
            out = out + sigma[..., j] * r[:, j, None]
        return out

    out = np.empty((B, n_steps + 1, model.m))
    X = np.broadcast_to(xi0, (B, model.m)).copy()
    out[:, 0] = X
    half = 0.5 * h
    sixth = h / 6.0
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(n_steps):
            r0 = rates[:, :, 2 * s]
            r1 = rates[:, :, 2 * s + 1]
            r2 = rates[:, :, 2 * s + 2]
            k1 = f(X, r0)
            k2 = f(X + half * k1, r1)
            k3 = f(X + half * k2, r1)
            k4 = f(X + h * k3, r2)
            new = X + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            finite = np.isfinite(new)
            if not finite.all():
                b, c = np.argwhere(~finite)[0]
                path = None if sample_ids is None else sample_ids[b]
                raise SimulationError("non-finite spectral path state", path=path, step=s + 1, component=int(c))
            X = model.apply_boundary(new)
            out[:, s + 1] = X
    return out


def spectral_path(
    model: ItoModel,
    zeta,
    grid: TimeGrid,
    cfg: KleConfig,
    xi0=None,
    *,
    ito_correction: bool = True,
) -> np.ndarray:
    """Single spectral path for coefficients ``zeta`` of shape ``(n, K)``; returns ``(n_steps + 1, m)``."""
    zeta = np.asarray(zeta, dtype=float).reshape(cfg.n, cfg.K)
    return spectral_batch(model, zeta[None], grid, cfg, xi0, ito_correction=ito_correction)[0]


def spectral_paths(
    model: ItoModel,
    zeta_flat,
    grid: TimeGrid,
    cfg: KleConfig,
    xi0=None,
    *,
    ito_correction: bool = True,
) -> PathSet:
    """PathSet for flat coefficient vectors ``zeta_flat`` of shape ``(B, M)``."""
    zeta = unflatten(np.atleast_2d(zeta_flat), cfg)
    values = spectral_batch(model, zeta, grid, cfg, xi0, ito_correction=ito_correction)
    return PathSet(grid, values, "spectral")
