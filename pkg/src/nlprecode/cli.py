"""Command-line entry point; numpy is imported only after flags are parsed."""

import argparse
import json
import logging
import os
import sys

SUBCOMMANDS = ("fit-pa", "generate-data", "train", "eval", "sweep-snr", "sweep-ibo", "cdf")
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "BLIS_NUM_THREADS")


def _common(p):
    p.add_argument("--config", help="JSON experiment config (fields of ExperimentSpec)")
    p.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--deterministic", action="store_true", help="single-threaded BLAS for bit-reproducible output")
    p.add_argument("-M", type=int, dest="M", help="antennas")
    p.add_argument("-K", type=int, dest="K", help="users")
    p.add_argument("--snr-db", type=float, dest="snr_db")
    p.add_argument("--ibo-db", type=float, dest="ibo_db")
    p.add_argument("--pa", choices=("table", "fit"))
    p.add_argument("--precoders", help="comma-separated, e.g. zf,nn,zf-dpd")
    p.add_argument("--n-channels", type=int, dest="n_channels")
    p.add_argument("--checkpoint", help="trained network manifest (model.json)")
    p.add_argument("--data", help="dataset directory holding train/val/test .ch files")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="nlprecode", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        _common(sub.add_parser(name, help=f"run the {name} protocol"))
    run = sub.add_parser("run", help="run a config file whose 'kind' picks the protocol")
    _common(run)
    return parser


def _overrides(args):
    keys = ("seed", "out", "M", "K", "snr_db", "ibo_db", "pa", "n_channels", "checkpoint", "data")
    d = {k: getattr(args, k) for k in keys if getattr(args, k) is not None}
    if args.precoders:
        d["precoders"] = [p.strip() for p in args.precoders.split(",") if p.strip()]
    return d


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.deterministic:
        for var in _THREAD_VARS:
            os.environ[var] = "1"
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")

    from . import experiments
    from .errors import ConfigurationError, FormatError

    try:
        d = {}
        if args.config:
            with open(args.config) as fh:
                d = json.load(fh)
            if not isinstance(d, dict):
                raise ConfigurationError("experiment config must be a JSON object")
        d.update(_overrides(args))
        if args.command != "run":
            d["kind"] = args.command
        spec = experiments.spec_from_dict(d)
        manifest = experiments.run(spec)
    except (ConfigurationError, FormatError, OSError, json.JSONDecodeError) as exc:
        print(f"nlprecode: error: {exc}", file=sys.stderr)
        return 2
    print(manifest["output"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
