"""Itô-process disturbance models.

A model is the SDE ``dξ = μ(ξ) dt + σ(ξ) dW`` with ``ξ`` of dimension ``m``
and ``W`` an ``n``-dimensional standard Wiener process. Drift and diffusion
are coefficient maps evaluated on batches of states; the polynomial map
covers identified models, the root-variance map covers the one-dimensional
distribution presets whose diffusion is the square root of a simple
variance function.

All model objects are immutable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from ._validation import check_vector

MODEL_FORMAT = "fastmcs-ito-model"
GAMMA_FLOOR = 1e-9


class PolynomialMap:
    """Matrix-valued polynomial of an ``input_dim``-vector.

    Parameters
    ----------
    terms : sequence
        One entry per output element in row-major order over
        ``output_dims``; each entry is a list of ``(exponents, coefficient)``
        pairs where ``exponents`` has length ``input_dim``.
    input_dim : int
    output_dims : (int, int)
    """

    def __init__(self, terms, input_dim: int, output_dims: tuple[int, int]):
        rows, cols = (int(v) for v in output_dims)
        if input_dim < 1 or rows < 1 or cols < 1:
            raise ValueError("dimensions must be positive")
        if len(terms) != rows * cols:
            raise ValueError(f"expected {rows * cols} output entries, got {len(terms)}")
        entries = []
        for entry in terms:
            parsed = []
            for exps, coef in entry:
                exps = tuple(int(e) for e in exps)
                if len(exps) != input_dim or any(e < 0 for e in exps):
                    raise ValueError(f"bad exponent tuple {exps} for input_dim={input_dim}")
                coef = float(coef)
                if not math.isfinite(coef):
                    raise ValueError("polynomial coefficients must be finite")
                parsed.append((exps, coef))
            entries.append(tuple(parsed))
        self.terms = tuple(entries)
        self.input_dim = int(input_dim)
        self.output_dims = (rows, cols)
        self.max_degree = max((max(e) for entry in self.terms for e, _ in entry), default=0)

    @classmethod
    def scalar(cls, coefficients: Sequence[float]) -> "PolynomialMap":
        """1-D scalar polynomial ``c0 + c1 x + c2 x^2 + ...``."""
        return cls([[((k,), c) for k, c in enumerate(coefficients)]], 1, (1, 1))

    @classmethod
    def zeros(cls, input_dim: int, output_dims: tuple[int, int]) -> "PolynomialMap":
        return cls([[] for _ in range(output_dims[0] * output_dims[1])], input_dim, output_dims)

    def _powers(self, X):
        # powers[d][..., k] = X[..., k] ** d by repeated multiplication (bitwise reproducible)
        powers = [np.ones_like(X)]
        for _ in range(self.max_degree):
            powers.append(powers[-1] * X)
        return powers

    def _monomial(self, powers, exps):
        out = None
        for k, e in enumerate(exps):
            if e == 0:
                continue
            factor = powers[e][..., k]
            out = factor if out is None else out * factor
        return out

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.input_dim:
            raise ValueError(f"expected trailing dimension {self.input_dim}, got {X.shape}")
        powers = self._powers(X)
        batch = X.shape[:-1]
        out = np.zeros(batch + (len(self.terms),))
        for i, entry in enumerate(self.terms):
            acc = np.zeros(batch)
            for exps, coef in entry:
                mono = self._monomial(powers, exps)
                acc = acc + (coef if mono is None else coef * mono)
            out[..., i] = acc
        return out.reshape(batch + self.output_dims)

    def jacobian(self, X) -> np.ndarray:
        """Partial derivatives, shape ``batch + output_dims + (input_dim,)``."""
        X = np.asarray(X, dtype=float)
        powers = self._powers(X)
        batch = X.shape[:-1]
        out = np.zeros(batch + (len(self.terms), self.input_dim))
        for i, entry in enumerate(self.terms):
            for exps, coef in entry:
                for k, e in enumerate(exps):
                    if e == 0:
                        continue
                    reduced = list(exps)
                    reduced[k] = e - 1
                    mono = self._monomial(powers, reduced)
                    scale = coef * e
                    out[..., i, k] += scale if mono is None else scale * mono
        return out.reshape(batch + self.output_dims + (self.input_dim,))

    def ito_correction(self, X) -> np.ndarray:
        """``½ Σ_{k,j} σ_kj ∂_k σ_ij`` for this map taken as a diffusion matrix."""
        sigma = self(X)
        jac = self.jacobian(X)
        # sum over Wiener index j and state index k
        return 0.5 * np.einsum("...kj,...ijk->...i", sigma, jac)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dims": list(self.output_dims),
            "terms": [
                [{"exponents": list(e), "coef": c} for e, c in entry] for entry in self.terms
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolynomialMap":
        terms = [[(t["exponents"], t["coef"]) for t in entry] for entry in d["terms"]]
        return cls(terms, d["input_dim"], tuple(d["output_dims"]))

    def __eq__(self, other):
        return (
            isinstance(other, PolynomialMap)
            and self.terms == other.terms
            and self.input_dim == other.input_dim
            and self.output_dims == other.output_dims
        )

    def __repr__(self):
        return f"PolynomialMap(input_dim={self.input_dim}, output_dims={self.output_dims}, terms={self.terms!r})"


class PresetKind(str, Enum):
    GAUSSIAN = "gaussian"
    BETA = "beta"
    GAMMA = "gamma"
    LAPLACE = "laplace"


@dataclass(frozen=True)
class DistributionPreset:
    """One row of the drift/diffusion table for 1-D stationary laws.

    ``a`` and ``b`` keep their table meaning: Gaussian mean/variance,
    Beta shape pair, Gamma shape/rate, Laplace location/scale.
    """

    kind: PresetKind
    a: float
    b: float

    def __post_init__(self):
        kind = PresetKind(str(self.kind).lower() if not isinstance(self.kind, PresetKind) else self.kind)
        object.__setattr__(self, "kind", kind)
        a, b = float(self.a), float(self.b)
        if not (math.isfinite(a) and math.isfinite(b)):
            raise ValueError("preset parameters must be finite")
        if b <= 0:
            raise ValueError(f"{kind.value} preset requires b > 0, got b={b}")
        if kind in (PresetKind.BETA, PresetKind.GAMMA) and a <= 0:
            raise ValueError(f"{kind.value} preset requires a > 0, got a={a}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def mean(self) -> float:
        return stationary_moments(self)[0]

    def variance_function(self, x):
        """Tabulated σ²(x), clipped at zero outside the support."""
        x = np.asarray(x, dtype=float)
        a, b = self.a, self.b
        if self.kind is PresetKind.GAUSSIAN:
            return np.full_like(x, 2.0 * b)
        if self.kind is PresetKind.BETA:
            return np.maximum(2.0 * x * (1.0 - x) / (a + b), 0.0)
        if self.kind is PresetKind.GAMMA:
            return np.maximum(2.0 * x / b, 0.0)
        return 2.0 * b * np.abs(x - a) + 2.0 * b * b

    def variance_derivative(self, x):
        x = np.asarray(x, dtype=float)
        a, b = self.a, self.b
        if self.kind is PresetKind.GAUSSIAN:
            return np.zeros_like(x)
        if self.kind is PresetKind.BETA:
            inside = (x > 0.0) & (x < 1.0)
            return np.where(inside, 2.0 * (1.0 - 2.0 * x) / (a + b), 0.0)
        if self.kind is PresetKind.GAMMA:
            return np.where(x > 0.0, 2.0 / b, 0.0)
        return 2.0 * b * np.sign(x - a)


class RootVarianceMap:
    """Scalar diffusion ``σ(x) = sqrt(v(x))`` for a preset variance ``v``."""

    input_dim = 1
    output_dims = (1, 1)

    def __init__(self, preset: DistributionPreset):
        self.preset = preset

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.sqrt(self.preset.variance_function(X[..., 0]))[..., None, None]

    def ito_correction(self, X) -> np.ndarray:
        # ½ σ σ' = ¼ v' stays finite where σ' does not
        X = np.asarray(X, dtype=float)
        return 0.25 * self.preset.variance_derivative(X[..., 0])[..., None]

    def __eq__(self, other):
        return isinstance(other, RootVarianceMap) and self.preset == other.preset

    def __repr__(self):
        return f"RootVarianceMap({self.preset!r})"


@dataclass(frozen=True)
class Boundary:
    """Per-component domain policy applied after every integration step."""

    kind: str = "none"
    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        if self.kind not in ("none", "reflect", "clamp"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.kind != "none" and not float(self.lo) < float(self.hi):
            raise ValueError(f"empty boundary interval [{self.lo}, {self.hi}]")

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return x
        lo, hi = self.lo, self.hi
        if self.kind == "reflect":
            x = np.where(x < lo, 2.0 * lo - x, x)
            x = np.where(x > hi, 2.0 * hi - x, x)
        # clamp, and the fallback for reflections that overshoot the far side
        return np.clip(x, lo, hi)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind != "none":
            d["lo"] = _encode_float(self.lo)
            d["hi"] = _encode_float(self.hi)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Boundary":
        return cls(d.get("kind", "none"), _decode_float(d.get("lo", "-inf")), _decode_float(d.get("hi", "inf")))


def _encode_float(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def _decode_float(v) -> float:
    return float(v)


@dataclass(frozen=True)
class ItoModel:
    """Itô SDE ``dξ = μ(ξ) dt + σ(ξ) dW``.

    ``x0`` is the model's reference state (the stationary mean for the
    presets); it is the default initial condition for path generation.
    """

    drift: PolynomialMap
    diffusion: PolynomialMap | RootVarianceMap
    boundary: tuple[Boundary, ...] = ()
    x0: tuple[float, ...] | None = None
    name: str = "custom"
    preset: DistributionPreset | None = field(default=None, compare=False)

    def __post_init__(self):
        m = self.drift.input_dim
        if self.drift.output_dims != (m, 1):
            raise ValueError(f"drift must map R^{m} -> R^{m}x1, got {self.drift.output_dims}")
        if self.diffusion.input_dim != m or self.diffusion.output_dims[0] != m:
            raise ValueError(
                f"diffusion must map R^{m} -> R^{m}xn, got input {self.diffusion.input_dim}, "
                f"output {self.diffusion.output_dims}"
            )
        boundary = tuple(self.boundary) or tuple(Boundary() for _ in range(m))
        if len(boundary) != m:
            raise ValueError(f"need {m} boundary policies, got {len(boundary)}")
        object.__setattr__(self, "boundary", boundary)
        x0 = tuple(float(v) for v in (self.x0 if self.x0 is not None else [0.0] * m))
        check_vector(x0, m, "x0")
        object.__setattr__(self, "x0", x0)

    @property
    def m(self) -> int:
        return self.drift.input_dim

    @property
    def n(self) -> int:
        return self.diffusion.output_dims[1]

    def drift_batch(self, X) -> np.ndarray:
        """Drift on a batch of states ``(..., m) -> (..., m)``."""
        return self.drift(X)[..., 0]

    def diffusion_batch(self, X) -> np.ndarray:
        """Diffusion on a batch of states ``(..., m) -> (..., m, n)``."""
        return self.diffusion(X)

    def ito_correction_batch(self, X) -> np.ndarray:
        return self.diffusion.ito_correction(X)

    def apply_boundary(self, X: np.ndarray) -> np.ndarray:
        if all(b.kind == "none" for b in self.boundary):
            return X
        out = np.array(X, dtype=float, copy=True)
        for k, b in enumerate(self.boundary):
            out[..., k] = b.apply(out[..., k])
        return out

    @property
    def has_boundary(self) -> bool:
        return any(b.kind != "none" for b in self.boundary)

    def to_dict(self) -> dict:
        d = {
            "format": MODEL_FORMAT,
            "version": 1,
            "name": self.name,
            "m": self.m,
            "n": self.n,
            "x0": list(self.x0),
            "boundary": [b.to_dict() for b in self.boundary],
        }
        if self.preset is not None:
            d["preset"] = {"kind": self.preset.kind.value, "a": self.preset.a, "b": self.preset.b}
        else:
            d["drift"] = self.drift.to_dict()["terms"]
            d["diffusion"] = self.diffusion.to_dict()["terms"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ItoModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a model file (format={d.get('format')!r})")
        if "preset" in d:
            p = d["preset"]
            model = make_preset(DistributionPreset(p["kind"], p["a"], p["b"]))
            if "x0" in d:
                model = model.with_x0(d["x0"])
            return model
        m, n = int(d["m"]), int(d["n"])
        drift = PolynomialMap.from_dict({"input_dim": m, "output_dims": [m, 1], "terms": d["drift"]})
        diffusion = PolynomialMap.from_dict({"input_dim": m, "output_dims": [m, n], "terms": d["diffusion"]})
        boundary = tuple(Boundary.from_dict(b) for b in d.get("boundary", []))
        return cls(drift, diffusion, boundary, d.get("x0"), d.get("name", "custom"))

    def with_x0(self, x0) -> "ItoModel":
        return ItoModel(self.drift, self.diffusion, self.boundary, tuple(x0), self.name, self.preset)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ItoModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def eval_drift(model: ItoModel, xi, t: float = 0.0) -> np.ndarray:
    """μ(ξ, t) at one state; ``t`` is accepted but unused (autonomous models)."""
    xi = check_vector(xi, model.m, "xi")
    return model.drift_batch(xi)


def eval_diffusion(model: ItoModel, xi, t: float = 0.0) -> np.ndarray:
    """σ(ξ, t) at one state as an ``(m, n)`` matrix."""
    xi = check_vector(xi, model.m, "xi")
    return model.diffusion_batch(xi)


def make_preset(preset: DistributionPreset) -> ItoModel:
    """Build the 1-D model whose stationary law is ``preset``."""
    a, b = preset.a, preset.b
    kind = preset.kind
    center = {
        PresetKind.GAUSSIAN: a,
        PresetKind.BETA: a / (a + b),
        PresetKind.GAMMA: a / b,
        PresetKind.LAPLACE: a,
    }[kind]
    drift = PolynomialMap.scalar([center, -1.0])
    if kind is PresetKind.BETA:
        boundary = (Boundary("reflect", 0.0, 1.0),)
    elif kind is PresetKind.GAMMA:
        boundary = (Boundary("clamp", GAMMA_FLOOR, math.inf),)
    else:
        boundary = (Boundary(),)
    return ItoModel(
        drift,
        RootVarianceMap(preset),
        boundary,
        (stationary_moments(preset)[0],),
        f"{kind.value}(a={a:g}, b={b:g})",
        preset,
    )


# Quadratic drift and diffusion polynomials identified for per-unit wind power.
WIND_DRIFT = (0.0535, -0.0899, 0.0349)
WIND_DIFFUSION = (-0.410, 0.919, -0.505)


def wind_model() -> ItoModel:
    """Per-unit wind-farm output model with quadratic drift and diffusion.

    The diffusion polynomial multiplies dW directly. The reference state is
    the stable root of the drift, where the farm sits at equilibrium.
    """
    c0, c1, c2 = WIND_DRIFT
    disc = math.sqrt(c1 * c1 - 4 * c2 * c0)
    roots = sorted(((-c1 - disc) / (2 * c2), (-c1 + disc) / (2 * c2)))
    # stable root: drift decreasing through zero
    stable = next(r for r in roots if c1 + 2 * c2 * r < 0)
    return ItoModel(
        PolynomialMap.scalar(WIND_DRIFT),
        PolynomialMap.scalar(WIND_DIFFUSION),
        (Boundary(),),
        (stable,),
        "wind",
    )


def stationary_moments(preset: DistributionPreset) -> tuple[float, float]:
    """Analytic stationary mean and variance."""
    a, b = preset.a, preset.b
    if preset.kind is PresetKind.GAUSSIAN:
        return a, b
    if preset.kind is PresetKind.BETA:
        s = a + b
        return a / s, a * b / (s * s * (s + 1.0))
    if preset.kind is PresetKind.GAMMA:
        return a / b, a / (b * b)
    return a, 2.0 * b * b


def stationary_pdf(preset: DistributionPreset, x: float) -> float:
    """Stationary density of the preset; zero outside the support."""
    a, b = preset.a, preset.b
    x = float(x)
    if preset.kind is PresetKind.GAUSSIAN:
        return math.exp(-((x - a) ** 2) / (2.0 * b)) / math.sqrt(2.0 * math.pi * b)
    if preset.kind is PresetKind.BETA:
        if not 0.0 < x < 1.0:
            return 0.0
        log_beta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
        log_p = -log_beta
        if a != 1.0:
            log_p += (a - 1.0) * math.log(x)
        if b != 1.0:
            log_p += (b - 1.0) * math.log1p(-x)
        return math.exp(log_p)
    if preset.kind is PresetKind.GAMMA:
        if x <= 0.0:
            return 0.0
        return math.exp(a * math.log(b) - math.lgamma(a) + (a - 1.0) * math.log(x) - b * x)
    return math.exp(-abs(x - a) / b) / (2.0 * b)


def support(preset: DistributionPreset) -> tuple[float, float]:
    if preset.kind is PresetKind.BETA:
        return 0.0, 1.0
    if preset.kind is PresetKind.GAMMA:
        return 0.0, math.inf
    return -math.inf, math.inf


PRESET_NAMES = tuple(k.value for k in PresetKind) + ("wind",)


def model_from_name(name: str, a: float | None = None, b: float | None = None) -> ItoModel:
    """Resolve a bundled model by name (``wind`` or a preset kind)."""
    key = name.strip().lower()
    if key == "wind":
        return wind_model()
    if key not in PRESET_NAMES:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    if a is None or b is None:
        raise ValueError(f"preset {key!r} needs parameters a and b")
    return make_preset(DistributionPreset(key, a, b))
