"""``fastmcs`` command line.

Exit codes: 0 success, 2 invalid input, 3 numerical non-convergence,
4 simulator failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from importlib import resources
from pathlib import Path

from .config import ExperimentConfig
from .engine import DEGREE_WINDOW, compare_methods, kle_design, run_fast_mcs, run_traditional_mcs
from .exceptions import ConfigError, IdentificationError, SamplerError, SimulationError
from .identify import BasisSpec, Dataset, fit, validate
from .ito import ItoModel
from .sde import simulate_em_paths
from .spectral import KleConfig, basis_matrix, spectral_paths

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NONCONVERGENCE = 3
EXIT_SIMULATOR = 4

BUNDLED = {"wind": "wind_frequency.toml"}


class NonConvergence(Exception):
    pass


def load_config(source: str) -> ExperimentConfig:
    """Config file path, or the name of a bundled config (``wind``)."""
    path = Path(source)
    if not path.exists() and source in BUNDLED:
        text = resources.files("fastmcs.configs").joinpath(BUNDLED[source]).read_text()
        return ExperimentConfig.loads(text, ".", f"bundled:{source}")
    return ExperimentConfig.load(path)


def _output_dir(cfg: ExperimentConfig, override) -> Path:
    out = Path(override) if override else cfg.resolve(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run(cfg: ExperimentConfig, method: str, N: int, workers: int):
    model = cfg.build_model()
    rrf = cfg.build_rrf()
    grid = cfg.grid()
    if method == "traditional":
        return run_traditional_mcs(model, rrf, grid, N, cfg.seed, mode=cfg.mode, substeps=cfg.substeps,
                                   workers=workers, batch_size=cfg.batch_size)
    return run_fast_mcs(model, rrf, grid, N, cfg.K, cfg.seed, cfg.decorrelate, mode=cfg.mode,
                        placement=cfg.placement, sampling=cfg.sampling, ito_correction=cfg.ito_correction,
                        workers=workers, batch_size=cfg.batch_size)


# ---------------------------------------------------------------------------
# subcommands


def cmd_identify(args) -> int:
    data = Dataset.from_csv(args.data)
    m = data.m
    basis = BasisSpec((args.drift_degree,) * m, tuple((args.diffusion_degree,) * m for _ in range(m)))
    result = fit(data, basis, max_iter=args.max_iter, grad_tol=args.grad_tol, diffusion_floor=args.floor)
    model = result.to_model()
    out = Path(args.output)
    doc = model.to_dict()
    doc["fit"] = {"converged": result.converged, "degenerate": result.degenerate}
    out.write_text(json.dumps(doc, indent=2) + "\n")
    report = Path(args.report) if args.report else out.with_suffix(".fit.json")
    result.to_json(report)
    print(f"objective {result.objective!r}  iterations {result.iterations}  gradient_norm {result.gradient_norm:.3e}")
    print(f"drift {[list(map(float, c)) for c in result.drift_coefficients]}")
    print(f"diffusion {[list(map(float, c)) for c in result.diffusion_coefficients]}")
    if result.degenerate:
        print("warning: diffusion pinned at the floor (degenerate, noise-free data)")
    if not result.converged:
        raise NonConvergence(f"no convergence after {result.iterations} iterations "
                             f"(gradient norm {result.gradient_norm:.3e}); model written to {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    model = ItoModel.load(args.model)
    data = Dataset.from_csv(args.data)
    report = validate(model, data, args.lags, seed=args.seed, diagnostic=args.diagnostic)
    text = json.dumps(report.to_dict(), indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_paths(args) -> int:
    cfg = load_config(args.config)
    model = cfg.build_model()
    grid = cfg.grid()
    if args.method == "em":
        paths = simulate_em_paths(model, grid, None, args.n_paths, cfg.seed, substeps=cfg.substeps)
    else:
        kle = KleConfig(cfg.K, grid.span, model.n)
        design = kle_design(kle, args.n_paths, cfg.seed, sampling=cfg.sampling, decorrelate=cfg.decorrelate,
                            placement=cfg.placement)
        paths = spectral_paths(model, design.columns, grid, kle, ito_correction=cfg.ito_correction)
    text = paths.to_csv()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    method = args.method or cfg.method
    N = args.N or cfg.N
    report = _run(cfg, method, N, args.workers)
    out = _output_dir(cfg, args.output_dir)
    report.to_json(out / f"{method}_report.json")
    report.to_csv(out / f"{method}_report.csv")
    print(f"method {method}  N {report.N}  mean {report.final_mean!r}  variance {report.final_variance!r}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    n_a, n_b = cfg.N_traditional, cfg.N_fast
    if min(n_a, n_b) < DEGREE_WINDOW:
        raise NonConvergence(f"budgets N_traditional={n_a}, N_fast={n_b}: the convergence degree "
                             f"needs at least {DEGREE_WINDOW} sizes")
    a = _run(cfg, "traditional", n_a, args.workers)
    b = _run(cfg, "fast", n_b, args.workers)
    out = _output_dir(cfg, args.output_dir)
    for report in (a, b):
        report.to_json(out / f"{report.method}_report.json")
        report.to_csv(out / f"{report.method}_report.csv")
    result = {
        "reference": "traditional", "candidate": "fast", "mode": cfg.mode, "seed": cfg.seed,
        "N_traditional": n_a, "N_fast": n_b,
        "statistics": {s: compare_methods(a, b, s).to_dict() for s in ("mean", "variance")},
    }
    text = json.dumps(result, indent=2) + "\n"
    (out / "comparison.json").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_basis(args) -> int:
    kle = KleConfig(args.K, args.T, 1)
    t = [args.T * k / (args.points - 1) for k in range(args.points)]
    values = basis_matrix(kle.K, t, kle.T)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"m_{j}" for j in range(1, kle.K + 1)])
    for i, ti in enumerate(t):
        w.writerow([repr(ti)] + [repr(float(v)) for v in values[:, i]])
    if args.output:
        Path(args.output).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fastmcs", description="Fast Monte Carlo sampling of Itô-process disturbances.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("identify", help="fit a polynomial Itô model to a sampled record (CSV: t, xi_1..)")
    s.add_argument("data", help="CSV with columns t, xi_1..xi_m at uniform spacing")
    s.add_argument("-o", "--output", required=True, help="model file to write (JSON)")
    s.add_argument("--report", help="fit report path (default: <output>.fit.json)")
    s.add_argument("--drift-degree", type=int, default=1)
    s.add_argument("--diffusion-degree", type=int, default=0)
    s.add_argument("--max-iter", type=int, default=10_000)
    s.add_argument("--grad-tol", type=float, default=1e-6)
    s.add_argument("--floor", type=float, default=1e-9, help="floor on the diagonal of sigma sigma^T")
    s.set_defaults(func=cmd_identify)

    s = sub.add_parser("validate", help="compare a model with a record (KS distance, ACF RMSE)")
    s.add_argument("model")
    s.add_argument("data")
    s.add_argument("--lags", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--diagnostic", action="store_true", help="compare the record with itself")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("paths", help="write disturbance paths as CSV")
    s.add_argument("config", help="config file or bundled name ('wind')")
    s.add_argument("--method", choices=("em", "spectral"), default="em")
    s.add_argument("-n", "--n-paths", type=int, default=10)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_paths)

    for name, func, text in (("run", cmd_run, "run one Monte Carlo method"),
                             ("compare", cmd_compare, "run both methods and compare convergence")):
        s = sub.add_parser(name, help=text)
        s.add_argument("config", help="config file or bundled name ('wind')")
        s.add_argument("--output-dir", help="override output_dir")
        s.add_argument("--workers", type=int, default=1, help="worker threads; results do not depend on it")
        if name == "run":
            s.add_argument("--method", choices=("fast", "traditional"))
            s.add_argument("-N", type=int, help="override N")
        s.set_defaults(func=func)

    s = sub.add_parser("basis", help="print KLE basis functions on a uniform grid (CSV)")
    s.add_argument("--K", type=int, default=6)
    s.add_argument("--T", type=float, default=60.0)
    s.add_argument("--points", type=int, default=201)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_basis)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        return _fail(EXIT_INPUT, "--workers must be >= 1")
    try:
        return args.func(args)
    except NonConvergence as exc:
        return _fail(EXIT_NONCONVERGENCE, str(exc))
    except (SamplerError, SimulationError) as exc:
        return _fail(EXIT_SIMULATOR, str(exc))
    except (ConfigError, IdentificationError, ValueError, TypeError, KeyError, OSError) as exc:
        return _fail(EXIT_INPUT, str(exc))


def _fail(code: int, message: str) -> int:
    print(f"fastmcs: error: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
