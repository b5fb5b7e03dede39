"""Command line entry point: ``space-erase {solve,sweep,compare,analyze}``.

Exit status is 0 on success, 1 for invalid input or malformed files and 2
for numerical failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import InvalidInputError, NumericalError, SpaceEraseError
from .harness.runner import (
    SWEEP_METRICS,
    ConceptSpec,
    LayerFailures,
    RunConfig,
    SweepSpec,
    compare_uce_vs_space,
    run_erasure,
    sweep,
    sweep_to_csv,
)
from .harness.synthetic import SyntheticSpec
from .storage import DEFAULT_BLOCKS, block_sparsity_report, read_bundle, read_manifest

log = logging.getLogger("space_erase")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _add_run_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="SPMX/SPCR weight bundle")
    src.add_argument("--synthetic", action="store_true", help="generate a seeded synthetic bundle")
    p.add_argument("--concepts", help=".npz with 'erase', 'guide' and optional 'preserve' arrays")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0, help="L1 weight")
    p.add_argument("--lambda1", type=float, default=1.0, help="preserve-term weight")
    p.add_argument("--lambda2", type=float, default=1.0, help="anchor-term weight")
    p.add_argument("--erase-scale", type=float, default=1.0)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--algo", choices=["fista", "ista"], default="fista")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=0.2,
                   help="width factor for the synthetic SD-style layout")
    p.add_argument("--n-erase", type=int, default=1, help="synthetic erase/guide concepts")
    p.add_argument("--n-preserve", type=int, default=2, help="synthetic preserve concepts")
    p.add_argument("--no-unit-normalize", action="store_true")
    p.add_argument("--report", help="write the JSON report here")


def _run_config(args, **extra) -> RunConfig:
    unit = not args.no_unit_normalize
    if args.synthetic:
        weights = SyntheticSpec.scaled(args.scale, seed=args.seed, n_erase=args.n_erase,
                                       n_preserve=args.n_preserve, unit_normalize=unit)
        m = weights.m
    else:
        weights = args.input
        cols = {e.cols for e in read_manifest(args.input).entries}
        if len(cols) > 1:
            raise InvalidInputError(f"bundle mixes input dimensions {sorted(cols)}")
        m = cols.pop() if cols else 1
    if args.concepts:
        concepts = args.concepts
    else:
        concepts = ConceptSpec(args.seed, m, args.n_erase, args.n_preserve, unit)
    return RunConfig(weights, concepts, args.lam, args.lambda1, args.lambda2, args.erase_scale,
                     args.iters, args.algo, parallelism=args.parallelism, **extra)


def cmd_solve(args) -> dict:
    cfg = _run_config(args, out=args.out, out_format=args.format, report=args.report)
    rep = run_erasure(cfg)
    st = rep.storage
    return {"layers": len(rep.layers), "global_sparsity": st.global_sparsity,
            "deployment_bytes": st.deployment_bytes, "dense_bytes": st.dense_bytes,
            "zip_bytes": st.zip_bytes, "wall_time": rep.wall_time, "output": rep.output_path}


def cmd_sweep(args) -> dict:
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    spec = SweepSpec(tuple(_floats(args.lambda_grid)), tuple(_ints(args.iter_grid)), metrics)
    rows = sweep(_run_config(args), spec)
    text = sweep_to_csv(rows, spec, args.out)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump({"header": spec.header, "rows": rows}, fh, indent=2)
    if args.out is None:
        sys.stdout.write(text)
    return {"rows": len(rows), "csv": args.out}


def cmd_compare(args) -> dict:
    result = compare_uce_vs_space(_run_config(args))
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2)
    return {k: v for k, v in result.items() if k != "layers"}


def cmd_analyze(args) -> dict:
    blocks = tuple(args.blocks.split(",")) if args.blocks else DEFAULT_BLOCKS
    rep = block_sparsity_report(read_bundle(args.bundle), blocks, path=args.bundle)
    if args.report:
        rep.to_json(args.report)
    if args.csv:
        rep.to_csv(args.csv)
    return {"global_sparsity": rep.global_sparsity, "block_sparsity": rep.block_sparsity,
            "dense_bytes": rep.dense_bytes, "deployment_bytes": rep.deployment_bytes,
            "file_bytes": rep.file_bytes, "file_zip_bytes": rep.file_zip_bytes}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="space-erase", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="erase concepts from every K/V matrix of a bundle")
    _add_run_args(p)
    p.add_argument("--out", help="edited bundle path")
    p.add_argument("--format", choices=["auto", "dense", "csr"], default="auto")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="lambda x iterations grid")
    _add_run_args(p)
    p.add_argument("--lambda-grid", required=True, help="comma-separated, increasing")
    p.add_argument("--iter-grid", default="1000", help="comma-separated, increasing")
    p.add_argument("--metrics", default=",".join(SWEEP_METRICS))
    p.add_argument("--out", help="CSV table path (stdout if omitted)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="UCE closed form vs SPACE")
    _add_run_args(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("analyze", help="storage and sparsity report of an existing bundle")
    p.add_argument("bundle")
    p.add_argument("--blocks", help="comma-separated block labels (default down,mid,up)")
    p.add_argument("--report")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = args.func(args)
    except LayerFailures as exc:
        log.error("%s", exc)
        return 2 if exc.numerical else 1
    except NumericalError as exc:
        log.error("numerical error: %s", exc)
        return 2
    except (SpaceEraseError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 1
    if args.command != "sweep" or args.out is not None:
        print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
