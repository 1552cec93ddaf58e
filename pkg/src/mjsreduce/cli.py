"""Command-line front end.

Subcommands: generate | reduce | evaluate | stability | lqr | experiment.
Shared flags (--seed, --out, --threads, --full) are accepted by every
subcommand; MJS_REDUCE_THREADS is the environment fallback for
--threads.  Exit codes: 0 success, 2 input problem (unreadable or
malformed files, bad flag values), 3 computation failure; the
stability subcommand additionally returns 1 when the model is not
mean-square stable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .clustering import misclustering_rate, reduce_model
from .errors import InputError, MjsError
from .experiments import ExperimentSpec, run_experiment
from .lqr import reduced_lqr_suboptimality
from .model import Partition, load_model, save_model
from .perturbation import mr_bound
from .stability import stability_report
from .synth import SynthConfig, generate


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _dump(payload: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=_json_default)
        fh.write("\n")


def _print(payload: dict) -> None:
    print(json.dumps(payload, indent=2, default=_json_default))


def _resolve_threads(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("MJS_REDUCE_THREADS")
    return int(env) if env else 1


def _load_model_checked(path: str):
    try:
        return load_model(path)
    except OSError as e:
        raise InputError(f"cannot read model file {path}: {e}") from e


def _truth_sidecar(model_path: str) -> str:
    stem, _ = os.path.splitext(model_path)
    return stem + ".truth.json"


def _load_partition(path: str, s: int) -> Partition:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as e:
        raise InputError(f"cannot read partition file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise InputError(
            f"malformed JSON in {path} at line {e.lineno} column {e.colno}: {e.msg}"
        ) from e
    if isinstance(payload, dict):
        payload = payload.get("partition")
    if not isinstance(payload, list):
        raise InputError(f"{path}: expected a list of 1-based clusters")
    return Partition.from_lists_1based(payload, s=s)


def cmd_generate(args) -> int:
    config = SynthConfig(
        s=args.s,
        r=args.r,
        n=args.n,
        p=args.p,
        eps_A=args.eps_a,
        eps_B=args.eps_b,
        eps_T=args.eps_t,
        branch=args.branch,
        seed=args.seed,
    )
    model, truth, _ = generate(config)
    os.makedirs(args.out, exist_ok=True)
    model_path = os.path.join(args.out, "model.json")
    truth_path = os.path.join(args.out, "model.truth.json")
    save_model(model, model_path)
    _dump({"partition": truth.to_lists_1based()}, truth_path)
    _print({"model": model_path, "truth": truth_path, "s": args.s, "r": args.r})
    return 0


def cmd_reduce(args) -> int:
    model = _load_model_checked(args.model)
    weights = tuple(args.weights) if args.weights else None
    result = reduce_model(
        model,
        args.r,
        branch=args.branch,
        weights=weights,
        restarts=args.restarts,
        seed=args.seed,
        pi_weighted=args.pi_weighted,
    )
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "reduction.json")
    _dump(result.to_dict(), out_path)
    sidecar = _truth_sidecar(args.model)
    if os.path.exists(sidecar):
        truth = _load_partition(sidecar, model.s)
        mr = misclustering_rate(result.partition, truth)
        print(f"MR: {mr:.12g}")
    print(out_path)
    return 0


def cmd_evaluate(args) -> int:
    model = _load_model_checked(args.model)
    if args.partition:
        partition = _load_partition(args.partition, model.s)
    elif args.r:
        partition = reduce_model(
            model, args.r, branch=args.branch, seed=args.seed
        ).partition
    else:
        raise InputError("evaluate needs --partition or --r")
    weights = tuple(args.weights) if args.weights else None
    report = mr_bound(
        model,
        partition,
        args.branch,
        kmeans_eps=args.kmeans_eps,
        weights=weights,
    )
    os.makedirs(args.out, exist_ok=True)
    _dump(report.to_dict(), os.path.join(args.out, "evaluate.json"))
    _print(report.to_dict())
    return 0


def cmd_stability(args) -> int:
    model = _load_model_checked(args.model)
    report = stability_report(model, rho=args.rho, xi=args.xi)
    os.makedirs(args.out, exist_ok=True)
    _dump(report.to_dict(), os.path.join(args.out, "stability.json"))
    _print(report.to_dict())
    return 0 if report.is_mss else 1


def cmd_lqr(args) -> int:
    model = _load_model_checked(args.model)
    result = reduced_lqr_suboptimality(
        model,
        args.r,
        np.eye(model.n),
        np.eye(model.p),
        sigma_w=args.sigma_w,
        branch=args.branch,
        seed=args.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    _dump(result.to_dict(), os.path.join(args.out, "lqr.json"))
    _print(result.to_dict())
    return 0


def cmd_experiment(args) -> int:
    spec = ExperimentSpec(
        name=args.name,
        seed=args.seed,
        trials=args.trials,
        grid=tuple(args.grid) if args.grid else None,
        out_dir=args.out,
        full=args.full,
        threads=_resolve_threads(args.threads),
    )
    print(run_experiment(spec))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root RNG seed")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker threads (fallback: MJS_REDUCE_THREADS, then 1)",
    )
    common.add_argument(
        "--full",
        action="store_true",
        help="run experiments at their large-scale settings",
    )

    parser = argparse.ArgumentParser(
        prog="mjsreduce",
        description="Mode reduction, analysis, and control of Markov jump linear systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="draw a clustered instance")
    g.add_argument("--s", type=int, required=True, help="number of modes")
    g.add_argument("--r", type=int, required=True, help="number of clusters (must divide s)")
    g.add_argument("--n", type=int, default=5, help="state dimension")
    g.add_argument("--p", type=int, default=3, help="input dimension (0 = autonomous)")
    g.add_argument("--eps-a", type=float, default=0.0)
    g.add_argument("--eps-b", type=float, default=0.0)
    g.add_argument("--eps-t", type=float, default=0.0)
    g.add_argument("--branch", choices=("aggregatable", "lumpable"), default="aggregatable")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("reduce", parents=[common], help="cluster modes and average")
    r.add_argument("model", help="model JSON file")
    r.add_argument("--r", type=int, required=True, help="target number of clusters")
    r.add_argument("--branch", choices=("aggregatable", "lumpable"), default=None)
    r.add_argument("--weights", type=float, nargs=3, metavar=("WA", "WB", "WT"))
    r.add_argument("--restarts", type=int, default=50)
    r.add_argument("--pi-weighted", action="store_true", help="stationary-weighted averaging")
    r.set_defaults(func=cmd_reduce)

    e = sub.add_parser("evaluate", parents=[common], help="perturbations and clustering bound")
    e.add_argument("model", help="model JSON file")
    e.add_argument("--partition", help="partition JSON file (1-based clusters)")
    e.add_argument("--r", type=int, help="cluster first when no partition is given")
    e.add_argument("--branch", choices=("aggregatable", "lumpable"), default="aggregatable")
    e.add_argument("--kmeans-eps", type=float, default=1.0)
    e.add_argument("--weights", type=float, nargs=3, metavar=("WA", "WB", "WT"))
    e.set_defaults(func=cmd_evaluate)

    st = sub.add_parser("stability", parents=[common], help="stability certificates")
    st.add_argument("model", help="model JSON file")
    st.add_argument("--rho", type=float, default=None, help="mean-square decay level")
    st.add_argument("--xi", type=float, default=None, help="uniform decay level")
    st.set_defaults(func=cmd_stability)

    lq = sub.add_parser("lqr", parents=[common], help="reduced-order regulator suboptimality")
    lq.add_argument("model", help="model JSON file")
    lq.add_argument("--r", type=int, required=True)
    lq.add_argument("--sigma-w", type=float, default=0.1)
    lq.add_argument("--branch", choices=("aggregatable", "lumpable"), default=None)
    lq.set_defaults(func=cmd_lqr)

    ex = sub.add_parser("experiment", parents=[common], help="run a canned protocol")
    ex.add_argument("name", choices=("fig2", "fig3a", "fig3b", "fig4", "table2"))
    ex.add_argument("--trials", type=int, default=None)
    ex.add_argument("--grid", type=float, nargs="+", default=None)
    ex.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except InputError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except MjsError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
