"""Command line interface: ``regenlab {exact|simulate|verify} ...``."""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from .errors import DomainError, PreconditionError, RegenlabError, UnsupportedFamilyError
from .exact import (
    dist_Kn,
    mean_Kn_exact,
    moments_diversity,
    moments_L,
    p1_series,
    write_distribution_csv,
    write_moments_csv,
)
from .experiments import DEFAULT_TOLERANCES, KINDS, ExperimentConfig, run_experiment, write_run_csv
from .levy import LevyModel, SlowlyVarying
from .pathsim import Diffeomorphism, FirstPassage, FixedTime, MultiplicativeRemainder, simulate_path, write_path_csv

__all__ = ["cli_main", "main", "build_parser", "read_config_file"]

EXACT_QUERIES = ("moments", "diversity", "mean-kn", "dist-kn", "p1")
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raise instead of exiting, so ``cli_main`` stays callable from tests."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


# -- value parsers ----------------------------------------------------------------------


def _ell(text: str) -> SlowlyVarying:
    kind, _, value = text.partition(":")
    try:
        if kind == "const":
            return SlowlyVarying.const(float(value or 1.0))
        if kind == "logpow":
            return SlowlyVarying.logpow(float(value))
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"expected const:c or logpow:r, got {text!r}")


def _phi(text: str) -> Diffeomorphism:
    if text == "exp":
        return Diffeomorphism.exponential()
    kind, _, value = text.partition(":")
    if kind == "power":
        try:
            return Diffeomorphism.power_tail(float(value))
        except (ValueError, DomainError):
            pass
    raise argparse.ArgumentTypeError(f"expected exp or power:beta, got {text!r}")


def _grid(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _atoms(text: str) -> tuple:
    """``x:w,x:w,...``"""
    try:
        return tuple((float(x), float(w)) for x, w in (item.split(":") for item in text.split(",")))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x:w pairs, got {text!r}") from None


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _tolerance(text: str):
    key, sep, value = text.partition("=")
    if not sep or key not in DEFAULT_TOLERANCES:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE with KEY in {', '.join(DEFAULT_TOLERANCES)}")
    try:
        return key, float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"tolerance {key} needs a number") from None


def _stop(text: str):
    kind, _, value = text.partition(":")
    rules = {"fixed": FixedTime, "remainder": MultiplicativeRemainder, "passage": FirstPassage}
    try:
        return rules[kind](float(value))
    except (KeyError, ValueError):
        raise argparse.ArgumentTypeError(f"expected fixed:T, remainder:delta or passage:level, got {text!r}") from None


# -- parser -------------------------------------------------------------------------------


def _common(p):
    g = p.add_argument_group("model")
    g.add_argument("--family", choices=("two-param", "stable", "atomic"), default="two-param")
    g.add_argument("--alpha", type=float, default=0.5)
    g.add_argument("--theta", type=float, default=0.0)
    g.add_argument("--ell", type=_ell, default=SlowlyVarying.const(1.0), help="const:c or logpow:r")
    g.add_argument("--atoms", type=_atoms, default=((0.5, 1.0),), help="atomic family, x:w,x:w,...")
    g.add_argument("--drift", type=float, default=0.0)
    g = p.add_argument_group("simulation")
    g.add_argument("--phi", type=_phi, default=Diffeomorphism.exponential(), help="exp or power:beta")
    g.add_argument("--eps", type=float, default=1e-6, help="additive jump truncation")
    g.add_argument("--delta", type=float, default=1e-8, help="multiplicative remainder")
    g.add_argument("--reps", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--grid", type=_grid, default=())
    g.add_argument("--out", default=None, help="output CSV (default: stdout)")
    g.add_argument("--config", default=None, help="key=value file; flags override it")
    g.add_argument("--k", type=int, default=3)
    g.add_argument("--n", type=int, default=10)
    g.add_argument("--rho", type=float, default=10.0)
    g.add_argument("--t", type=float, default=None)
    g.add_argument("--index", type=float, default=None,
                   help="exponent of the functional (default: the model alpha, 1 for atomic)")
    g.add_argument("--compensate", type=_bool, default=None)
    g.add_argument("--tol", type=_tolerance, action="append", default=[], metavar="KEY=VALUE")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="regenlab", description="Regenerative compositions: exact oracles and simulation checks.")
    parser.add_argument("--version", action="version", version=f"regenlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    exact = sub.add_parser("exact", help="exact oracle queries")
    exact.add_argument("query", choices=EXACT_QUERIES)
    _common(exact)
    simulate = sub.add_parser("simulate", help="simulate and dump a path")
    simulate.add_argument("what", choices=("path",))
    _common(simulate)
    simulate.add_argument("--stop", type=_stop, default=None, help="fixed:T, remainder:delta or passage:level")
    verify = sub.add_parser("verify", help="replicated verification experiments")
    verify.add_argument("kind", choices=KINDS)
    _common(verify)
    return parser


# -- config file --------------------------------------------------------------------------


def read_config_file(path: str) -> list:
    """Translate ``key = value`` lines into flag tokens (``#`` starts a comment)."""
    tokens = []
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise _UsageError(f"regenlab: error: cannot read config file {path!r}: {exc.strerror}") from None
    for num, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise _UsageError(f"{path}:{num}: expected key=value, got {raw.strip()!r}")
        key = key.strip().replace("_", "-")
        if key == "config":
            raise _UsageError(f"{path}:{num}: nested config files are not supported")
        tokens += [f"--{key}", value.strip()]
    return tokens


def _splice_config(argv):
    """Insert config-file flags right after the subcommand words so that command line flags win."""
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    if path is None or len(argv) < 2:
        return argv
    return argv[:2] + read_config_file(path) + argv[2:]


# -- dispatch -------------------------------------------------------------------------------


def _model(args) -> LevyModel:
    if args.family == "two-param":
        return LevyModel.two_parameter(args.alpha, args.theta, args.drift)
    if args.family == "stable":
        return LevyModel.stable_like(args.alpha, args.ell, args.drift)
    return LevyModel.finite_atomic(args.atoms, args.drift)


def _open_out(path):
    if path is None:
        return sys.stdout, False
    try:
        return open(path, "w", newline=""), True
    except OSError as exc:
        raise _UsageError(f"regenlab: error: cannot write {path!r}: {exc.strerror}") from None


def _index(args, model):
    if args.index is not None:
        return args.index
    return 1.0 if model.is_atomic else model.alpha


def _run_exact(args, model, out) -> int:
    q = args.query
    if q == "moments":
        write_moments_csv([moments_L(model, _index(args, model), k) for k in range(args.k + 1)], out)
    elif q == "diversity":
        write_moments_csv([moments_diversity(model, k) for k in range(args.k + 1)], out)
    elif q == "mean-kn":
        out.write("n,value\n")
        for n in (args.grid or (args.n,)):
            out.write(f"{int(n)},{mean_Kn_exact(model, int(n)):.17g}\n")
    elif q == "dist-kn":
        write_distribution_csv(dist_Kn(model, args.n), out)
    else:
        out.write("rho,value\n")
        for rho in (args.grid or (args.rho,)):
            out.write(f"{rho:.17g},{p1_series(model, rho):.17g}\n")
    return EXIT_OK


def _run_simulate(args, model, out) -> int:
    stop = args.stop
    if stop is None:
        stop = FixedTime(args.t) if args.t is not None else MultiplicativeRemainder(args.delta)
    eps = 0.0 if model.is_atomic and args.eps == 0 else args.eps
    path = simulate_path(model, eps, stop, args.seed, compensate=bool(args.compensate))
    write_path_csv(path, out, args.phi)
    return EXIT_OK


def _run_verify(args, model, out, environ) -> int:
    config = ExperimentConfig(
        kind=args.kind, model=model, phi=args.phi, alpha=args.index, grid=args.grid, reps=args.reps,
        seed=args.seed, eps=args.eps, delta=args.delta, t=args.t, rho=args.rho, k_max=args.k,
        compensate=args.compensate, out=None, tolerances=dict(args.tol))
    run = run_experiment(config, environ)
    write_run_csv(run, out)
    failed = run.failures()
    for cell in failed:
        print(f"FAIL {cell.name}: estimate {cell.estimate:.6g}, target {cell.target:.6g}, z {cell.zscore:.3g}",
              file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


def cli_main(argv=None, environ=None) -> int:
    """Run the CLI; returns 0 when every assertion passes, 1 on a failed assertion, 2 on usage errors."""
    argv = list(sys.argv[1:] if argv is None else argv)
    environ = os.environ if environ is None else environ
    try:
        args = build_parser().parse_args(_splice_config(argv))
        if "REGENLAB_SEED" in environ:
            try:
                args.seed = int(environ["REGENLAB_SEED"])
            except ValueError:
                raise _UsageError("REGENLAB_SEED must be an integer") from None
        model = _model(args)
        out, own = _open_out(args.out)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, UnsupportedFamilyError) as exc:
        print(f"regenlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    try:
        if args.command == "exact":
            return _run_exact(args, model, out)
        if args.command == "simulate":
            return _run_simulate(args, model, out)
        return _run_verify(args, model, out, environ)
    except (DomainError, PreconditionError, UnsupportedFamilyError) as exc:
        print(f"regenlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RegenlabError as exc:
        print(f"regenlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    finally:
        if own:
            out.close()
        elif out is sys.stdout:
            out.flush()


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":  # pragma: no cover
    main()
