"""Command-line entry point: ``heatadapt <command> [flags]``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from . import experiments as ex
from .errors import InvalidArgumentError, NumericalFailureError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

# flag name -> RunConfig field
_FLAGS = {
    "n": "n",
    "theta": "theta",
    "G": "G",
    "g0": "g0",
    "M": "M",
    "R": "R",
    "alpha": "alpha",
    "d": "d",
    "tol": "tol",
    "max_iter": "max_iter",
    "out": "out",
    "dump_mesh": "dump_mesh",
    "scheme": "scheme",
    "u0": "u0",
    "ladder": "ladder",
}


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    data = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise InvalidArgumentError(f"cannot read config file: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise InvalidArgumentError(f"{path}:{lineno}: empty key")
        data[key] = value
    return data


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n", type=str, help="spatial grid cells per side")
    common.add_argument("--theta", type=str, help="Doerfler bulk parameter in (0, 1]")
    common.add_argument("--G", type=str, help="grading parameter (integer >= 1)")
    common.add_argument("--g0", type=str, help="grading factor; overrides --G via G = ceil(log 3 / log(1/g0))")
    common.add_argument("--M", type=str, help="sinc sample count (2M+1 points)")
    common.add_argument("--R", type=str, help="reduced dimensions, comma separated")
    common.add_argument("--alpha", type=str, help="Laplace contour abscissa (>= 1)")
    common.add_argument("--d", type=str, help="sinc strip half-width in (0, pi/2)")
    common.add_argument("--tol", type=str, help="stop when eta <= tol")
    common.add_argument("--max-iter", dest="max_iter", type=str, help="adaptive iterations")
    common.add_argument("--scheme", type=str, choices=("hybrid", "cn"))
    common.add_argument("--u0", type=str, choices=("l2", "h1", "zero"), help="projection of u0 = 1, or u0 = 0")
    common.add_argument("--ladder", type=str, help="grid sizes for compare-schemes, comma separated")
    common.add_argument("--out", type=str, help="output directory")
    common.add_argument("--dump-mesh", dest="dump_mesh", action="store_true", default=None,
                        help="write the final time mesh to mesh.txt")
    common.add_argument("--config", type=str, help="key=value file; its entries override flags")

    parser = argparse.ArgumentParser(prog="heatadapt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("convergence", "adaptive vs uniform convergence (convergence.csv, steps.csv)"),
        ("compare-schemes", "hybrid vs Crank-Nicolson over a spatial ladder (schemes.csv)"),
        ("infsup", "inf-sup constants over lambda and mesh size (infsup.csv)"),
        ("mor", "reduced adaptive runs over R (mor.csv)"),
        ("svd-decay", "snapshot singular values over M (svd.csv)"),
        ("oracle-check", "quick closed-form and dual-route checks"),
    ):
        sub.add_parser(name, parents=[common], help=text)
    return parser


def config_from_args(args):
    data = {}
    for flag, key in _FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            data[key] = value if not isinstance(value, bool) else str(value)
    if args.config:
        data.update(read_config_file(args.config))
    return ex.RunConfig.from_mapping(data)


def _run(command, config):
    if command == "convergence":
        res = ex.run_convergence(config)
        print(f"adaptive rate (last 6): {res['rate_adaptive']:.3f}")
        print(f"uniform rate: {res['rate_uniform']:.3f}")
        return res["files"], True
    if command == "compare-schemes":
        res = ex.run_scheme_comparison(config)
        for (n, scheme), rows in sorted(res["curves"].items()):
            print(f"n={n} {scheme}: final err_X {rows[-1]['err']:.3e} with {rows[-1]['n_elems']} elements")
        return res["files"], True
    if command == "infsup":
        res = ex.run_infsup_sweep(config)
        print(f"hybrid c0 in [{res['hybrid_min']:.4f}, {res['hybrid_max']:.4f}], ratio {res['hybrid_ratio']:.3f}")
        for n, r in res["cn_ratio"].items():
            print(f"cn c0(lambda tau=100) / c0(lambda tau=1) at n={n}: {r:.4f}")
        return res["files"], True
    if command == "mor":
        res = ex.run_mor(config)
        for R, info in res["runs"].items():
            run = info["run"]
            print(f"R={R}: final err_X {run.err_full_dual[-1]:.3e}, floor {info['floor']:.3e}, "
                  f"eta rate {info['eta_rate']:.3f}")
        return res["files"], True
    if command == "svd-decay":
        res = ex.run_svd_decay(config)
        for M, sv in res["series"].items():
            k = min(20, sv.size) - 1
            print(f"M={M}: sigma_{k + 1}/sigma_1 = {sv[k] / sv[0]:.3e}")
        return res["files"], True
    if command == "oracle-check":
        ok = True
        for name, passed, detail in ex.oracle_check(config):
            print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
            ok &= passed
        return [], ok
    raise InvalidArgumentError(f"unknown command {command!r}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = config_from_args(args)
        files, ok = _run(args.command, config)
        if files:
            ex.write_manifest(config, args.command, files)
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK if ok else EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
