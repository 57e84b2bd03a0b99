"""Command-line entry point.

Subcommands:

* ``barycenter`` - aggregate a prior-set JSON into its barycenter model;
* ``optimize``   - solve the surplus portfolio for a market model or a
  prior set (aggregated first), writing the solution JSON;
* ``experiment`` - run the full replication study from a config file and
  write ``table2.csv``, ``table3.csv`` and ``run_meta.json``;
* ``validate``   - parse a config of any known schema and check every
  invariant, exiting nonzero on the first violation.

Exit codes: 0 ok, 1 parse/validation error, 2 barycenter non-convergence
(best iterate still written), 3 infeasible mean floor, 4 experiment cell
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .barycenter import PriorSet, barycenter
from .errors import AlmbaryError, ExperimentError, InfeasibleError, ValidationError
from .experiment import ExperimentConfig, config_hash, emit_tables, run_experiment
from .market import AssetLawConfig, MarketParams, build_asset_law
from .portfolio import ProblemSpec, moments_analytic, moments_mc, solve_portfolio
from .priors import PerturbationSpec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_NO_CONVERGENCE = 2
EXIT_INFEASIBLE = 3
EXIT_EXPERIMENT = 4


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")


def _write_json(path: str, payload: dict) -> None:
    out = Path(path)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _seed_from(args) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("ALM_SEED")
    return int(env) if env else None


def cmd_barycenter(args) -> int:
    data = _load_json(args.config)
    priors = PriorSet.from_dict(data)
    result = barycenter(priors)
    _write_json(args.out, result.to_dict())
    if not result.converged:
        print(f"warning: fixed point not converged after {result.iterations} iterations", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_optimize(args) -> int:
    data = _load_json(args.config)
    if "problem" not in data:
        raise ValidationError("optimize config needs a 'problem' section (zeta, x0)")
    problem = ProblemSpec.from_dict(data["problem"])
    law_config = AssetLawConfig.from_dict(data.get("asset_law", {}))

    bary_report = None
    if "market" in data:
        model = build_asset_law(MarketParams.from_dict(data["market"]), law_config)
    elif "priors" in data:
        result = barycenter(PriorSet.from_dict(data["priors"]))
        model = result.model
        bary_report = {
            "frechet_variance": result.frechet_variance,
            "iterations": result.iterations,
            "converged": result.converged,
        }
    else:
        raise ValidationError("optimize config needs either 'market' or 'priors'")

    moments_cfg = data.get("moments", {})
    method = moments_cfg.get("method", "analytic")
    if method == "analytic":
        bundle = moments_analytic(model)
    elif method == "mc":
        seed = _seed_from(args)
        if seed is None:
            seed = int(moments_cfg.get("seed", 0))
        bundle = moments_mc(model, int(moments_cfg.get("count", 100_000)), seed)
    else:
        raise ValidationError(f"moments method must be 'analytic' or 'mc', got {method!r}")

    try:
        solution = solve_portfolio(bundle, problem)
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    payload = solution.to_dict()
    payload["moments_method"] = method
    payload["sample_count"] = bundle.sample_count
    if bary_report is not None:
        payload["barycenter"] = bary_report
    _write_json(args.out, payload)
    return EXIT_OK


def cmd_experiment(args) -> int:
    data = _load_json(args.config)
    config = ExperimentConfig.from_dict(data)
    seed = _seed_from(args)
    if seed is not None:
        data = dict(data)
        data["rng_seed"] = seed
        config = ExperimentConfig.from_dict(data)
    start = time.perf_counter()
    try:
        summaries = run_experiment(config, threads=args.threads)
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXPERIMENT
    digest = config_hash(config)
    out_dir = Path(args.out)
    emit_tables(summaries, out_dir, config_hash=digest, seed=config.rng_seed)
    _write_json(
        str(out_dir / "run_meta.json"),
        {
            "seed": config.rng_seed,
            "config_hash": digest,
            "failures": {f"{s.homogeneity}/N={s.n_priors}": s.failures for s in summaries},
            "wall_time_s": time.perf_counter() - start,
        },
    )
    return EXIT_OK


_SCHEMAS = ("prior_set", "market_params", "experiment", "optimize", "perturbation")


def _detect_schema(data: dict) -> str:
    if "true_params" in data:
        return "experiment"
    if "problem" in data:
        return "optimize"
    if "models" in data and "weights" in data:
        return "prior_set"
    if "rate" in data and "stocks" in data:
        return "market_params"
    if "homogeneity_preset" in data:
        return "perturbation"
    raise ValidationError(
        "cannot infer schema from keys; pass --schema "
        f"(one of {', '.join(_SCHEMAS)})"
    )


def cmd_validate(args) -> int:
    data = _load_json(args.config)
    schema = args.schema or _detect_schema(data)
    if schema == "prior_set":
        PriorSet.from_dict(data)
    elif schema == "market_params":
        MarketParams.from_dict(data)
    elif schema == "experiment":
        ExperimentConfig.from_dict(data)
    elif schema == "perturbation":
        PerturbationSpec.from_dict(data)
    elif schema == "optimize":
        ProblemSpec.from_dict(data["problem"])
        if "market" in data:
            MarketParams.from_dict(data["market"])
        elif "priors" in data:
            PriorSet.from_dict(data["priors"])
        else:
            raise ValidationError("optimize config needs either 'market' or 'priors'")
        AssetLawConfig.from_dict(data.get("asset_law", {}))
    else:
        raise ValidationError(f"unknown schema {schema!r}")
    print(f"ok: {args.config} is a valid {schema} config")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="almbary",
        description="Robust asset-liability portfolios via Gaussian model aggregation",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", required=True, help="input JSON config path")
        if needs_out:
            p.add_argument("--out", required=True, help="output path")
        p.add_argument("--seed", type=int, default=None, help="seed override (or env ALM_SEED)")

    p = sub.add_parser("barycenter", help="aggregate a prior set JSON")
    common(p)
    p.set_defaults(func=cmd_barycenter)

    p = sub.add_parser("optimize", help="solve the surplus portfolio")
    common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("experiment", help="run the replication study")
    common(p)
    p.add_argument("--threads", type=int, default=os.cpu_count(), help="replication threads")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("validate", help="check a config file's invariants")
    common(p, needs_out=False)
    p.add_argument("--schema", choices=_SCHEMAS, default=None, help="force schema type")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXPERIMENT
    except AlmbaryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
