"""Replication harness for the prior-aggregation study.

One cell = (homogeneity preset, prior count N).  Each of K replications
draws a fresh prior set, aggregates it to its barycenter, estimates
moments from M Monte Carlo samples of the aggregate, solves the portfolio
and scores it.  Two measures coexist in the scoring:

* performance columns (expected surplus, surplus std) are evaluated under
  the *true* model's exact moments - what the allocation actually earns;
* the variance ratio compares the decision maker's *estimated* surplus
  variance (under the aggregate model) to the true surplus variance of the
  true-optimal portfolio.

Everything is deterministic in the root seed: replication r of cell c
derives its streams from SeedSequence((seed, cell, N, r, stream)), so
results do not depend on scheduling or thread count.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .barycenter import barycenter
from .errors import AlmbaryError, ExperimentError, ValidationError
from .market import AssetLawConfig, MarketParams, build_asset_law
from .portfolio import ProblemSpec, evaluate_portfolio, moments_analytic, moments_mc, solve_portfolio
from .priors import PerturbationSpec, perturb, to_prior_set

__all__ = [
    "ExperimentConfig",
    "CellSummary",
    "run_cell",
    "run_true_model",
    "run_experiment",
    "emit_tables",
    "config_hash",
]

logger = logging.getLogger(__name__)

# Stable stream indices for seed derivation; order must never change.
_PRESET_STREAM = {"true_model": 0, "high": 1, "medium": 2, "low": 3, "custom": 4}
_STAGE_PERTURB = 0
_STAGE_MOMENTS = 1

DEFAULT_PRIOR_COUNTS = (1, 2, 3, 5, 10, 30)
DEFAULT_PRESETS = ("high", "medium", "low")
MAX_FAILURE_FRACTION = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    """Inputs of a full replication study.

    Desk-scale defaults (K=200, M=20000) keep a full run in the minutes
    range; raise them in the config for production-scale statistics.
    """

    true_params: MarketParams
    problem: ProblemSpec
    perturbation: PerturbationSpec
    rng_seed: int
    prior_counts: tuple = DEFAULT_PRIOR_COUNTS
    presets: tuple = DEFAULT_PRESETS
    replications: int = 200
    mc_samples: int = 20000
    weights_rule: str = "equal"
    asset_law: AssetLawConfig = field(default_factory=AssetLawConfig)

    def __post_init__(self):
        if self.replications < 1:
            raise ValidationError(f"replications must be >= 1, got {self.replications}")
        if self.mc_samples < 1000:
            raise ValidationError(f"mc_samples must be >= 1000, got {self.mc_samples}")
        prior_counts = tuple(int(n) for n in self.prior_counts)
        if not prior_counts:
            raise ValidationError("prior_counts must be nonempty")
        if any(n < 1 for n in prior_counts):
            raise ValidationError("prior_counts must be positive")
        if self.weights_rule != "equal":
            raise ValidationError(f"unsupported weights_rule {self.weights_rule!r}")
        presets = tuple(self.presets)
        for p in presets:
            if p not in _PRESET_STREAM or p == "true_model":
                raise ValidationError(f"unknown homogeneity preset {p!r}")
        object.__setattr__(self, "prior_counts", prior_counts)
        object.__setattr__(self, "presets", presets)

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "true_params": self.true_params.to_dict(),
            "problem": self.problem.to_dict(),
            "perturbation": self.perturbation.to_dict(),
            "prior_counts": list(self.prior_counts),
            "presets": list(self.presets),
            "replications": self.replications,
            "mc_samples": self.mc_samples,
            "rng_seed": self.rng_seed,
            "weights_rule": self.weights_rule,
            "asset_law": self.asset_law.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if d.get("schema", 1) != 1:
            raise ValidationError(f"unsupported config schema {d.get('schema')!r}")
        try:
            return cls(
                true_params=MarketParams.from_dict(d["true_params"]),
                problem=ProblemSpec.from_dict(d["problem"]),
                perturbation=PerturbationSpec.from_dict(d["perturbation"]),
                rng_seed=int(d["rng_seed"]),
                prior_counts=tuple(d.get("prior_counts", DEFAULT_PRIOR_COUNTS)),
                presets=tuple(d.get("presets", DEFAULT_PRESETS)),
                replications=int(d.get("replications", 200)),
                mc_samples=int(d.get("mc_samples", 20000)),
                weights_rule=d.get("weights_rule", "equal"),
                asset_law=AssetLawConfig.from_dict(d.get("asset_law", {})),
            )
        except KeyError as exc:
            raise ValidationError(f"experiment config JSON missing field {exc}") from exc


@dataclass(frozen=True)
class CellSummary:
    """Aggregates of one (homogeneity, N) cell over its replications.

    ``se_*`` are sample standard errors of the replication mean;
    ``rmsd_*`` are RMS deviations from the exact true-model solution (the
    alternative reading of an 'error versus the truth').
    """

    n_priors: int
    homogeneity: str
    mean_allocation_pct: np.ndarray
    mean_expected_surplus: float
    mean_surplus_std: float
    se_expected_surplus: float
    se_surplus_std: float
    surplus_ci: tuple
    variance_ratio_ci: tuple
    rmsd_expected_surplus: float
    rmsd_surplus_std: float
    mean_estimated_surplus_std: float
    replications: int
    failures: int

    def __post_init__(self):
        alloc = np.asarray(self.mean_allocation_pct, dtype=float)
        if abs(float(alloc.sum()) - 100.0) > 1e-6:
            raise ValidationError(
                f"allocation percentages must sum to 100, got {alloc.sum()!r}"
            )
        for name, (lo, hi) in (("surplus_ci", self.surplus_ci), ("variance_ratio_ci", self.variance_ratio_ci)):
            if lo > hi:
                raise ValidationError(f"{name} bounds out of order: ({lo}, {hi})")
        alloc.setflags(write=False)
        object.__setattr__(self, "mean_allocation_pct", alloc)
        object.__setattr__(self, "surplus_ci", (float(self.surplus_ci[0]), float(self.surplus_ci[1])))
        object.__setattr__(
            self, "variance_ratio_ci", (float(self.variance_ratio_ci[0]), float(self.variance_ratio_ci[1]))
        )


def _derive_seed(root: int, preset: str, n_priors: int, rep: int, stage: int) -> np.random.SeedSequence:
    return np.random.SeedSequence((root, _PRESET_STREAM[preset], n_priors, rep, stage))


def _true_context(config: ExperimentConfig):
    """Exact true-model moments, solution, and the 'actual' surplus variance."""
    true_model = build_asset_law(config.true_params, config.asset_law)
    true_bundle = moments_analytic(true_model)
    true_sol = solve_portfolio(true_bundle, config.problem)
    return true_model, true_bundle, true_sol


def _replicate(config: ExperimentConfig, true_bundle, true_sol, preset: str, n_priors: int, rep: int):
    if preset == "true_model":
        aggregate = build_asset_law(config.true_params, config.asset_law)
    else:
        pspec = (
            config.perturbation
            if preset == "custom"
            else PerturbationSpec.preset(preset)
        )
        replicas = perturb(
            config.true_params, pspec, n_priors,
            _derive_seed(config.rng_seed, preset, n_priors, rep, _STAGE_PERTURB),
        )
        prior_set = to_prior_set(replicas, None, config.asset_law)
        aggregate = barycenter(prior_set).model
    bundle = moments_mc(
        aggregate, config.mc_samples,
        _derive_seed(config.rng_seed, preset, n_priors, rep, _STAGE_MOMENTS),
    )
    sol = solve_portfolio(bundle, config.problem)
    es_true, std_true, _ = evaluate_portfolio(sol.theta, true_bundle, config.problem)
    ratio = sol.surplus_std**2 / true_sol.surplus_std**2
    alloc_pct = 100.0 * sol.theta / config.problem.x0
    return alloc_pct, es_true, std_true, sol.surplus_std, ratio


def _aggregate_cell(preset: str, n_priors: int, results, failures: int, true_sol) -> CellSummary:
    k = len(results)
    if k == 0:
        raise ExperimentError(f"cell ({preset}, N={n_priors}): every replication failed")
    alloc = np.stack([r[0] for r in results])
    es = np.array([r[1] for r in results])
    std_true = np.array([r[2] for r in results])
    est_std = np.array([r[3] for r in results])
    ratio = np.array([r[4] for r in results])

    def se(x):
        return float(x.std(ddof=1) / np.sqrt(k)) if k > 1 else 0.0

    s_lo, s_hi = np.percentile(es, [2.5, 97.5])
    r_lo, r_hi = np.percentile(ratio, [2.5, 97.5])
    return CellSummary(
        n_priors=n_priors,
        homogeneity=preset,
        mean_allocation_pct=alloc.mean(axis=0),
        mean_expected_surplus=float(es.mean()),
        mean_surplus_std=float(std_true.mean()),
        se_expected_surplus=se(es),
        se_surplus_std=se(std_true),
        surplus_ci=(float(s_lo), float(s_hi)),
        variance_ratio_ci=(float(r_lo), float(r_hi)),
        rmsd_expected_surplus=float(np.sqrt(np.mean((es - true_sol.expected_surplus) ** 2))),
        rmsd_surplus_std=float(np.sqrt(np.mean((std_true - true_sol.surplus_std) ** 2))),
        mean_estimated_surplus_std=float(est_std.mean()),
        replications=k,
        failures=failures,
    )


def _run_reps(config: ExperimentConfig, preset: str, n_priors: int, threads: int | None) -> CellSummary:
    _, true_bundle, true_sol = _true_context(config)
    k = config.replications

    def one(rep: int):
        try:
            return _replicate(config, true_bundle, true_sol, preset, n_priors, rep)
        except AlmbaryError as exc:
            logger.warning("cell (%s, N=%d) replication %d failed: %s", preset, n_priors, rep, exc)
            return None

    if threads is None or threads <= 1:
        raw = [one(rep) for rep in range(k)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            raw = list(pool.map(one, range(k)))

    results = [r for r in raw if r is not None]
    failures = k - len(results)
    if failures > MAX_FAILURE_FRACTION * k:
        raise ExperimentError(
            f"cell ({preset}, N={n_priors}): {failures}/{k} replications failed"
        )
    return _aggregate_cell(preset, n_priors, results, failures, true_sol)


def run_cell(
    config: ExperimentConfig, n_priors: int, preset: str, threads: int | None = None
) -> CellSummary:
    """K replications of {perturb -> barycenter -> MC moments -> solve} for
    one (homogeneity, N) cell."""
    if preset not in _PRESET_STREAM or preset == "true_model":
        raise ValidationError(f"unknown homogeneity preset {preset!r}")
    return _run_reps(config, preset, n_priors, threads)


def run_true_model(config: ExperimentConfig, threads: int | None = None) -> CellSummary:
    """Ground-truth row: the same pipeline with no perturbation and no
    aggregation, establishing the reference the cells are scored against."""
    return _run_reps(config, "true_model", 0, threads)


def run_experiment(config: ExperimentConfig, threads: int | None = None) -> list[CellSummary]:
    """True-model row plus every (preset, N) cell, in a fixed order."""
    summaries = [run_true_model(config, threads)]
    logger.info("true model row done")
    for preset in config.presets:
        for n_priors in config.prior_counts:
            start = time.perf_counter()
            summaries.append(run_cell(config, n_priors, preset, threads))
            logger.info(
                "cell (%s, N=%d) done in %.1fs", preset, n_priors, time.perf_counter() - start
            )
    return summaries


def config_hash(config: ExperimentConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fmt(x) -> str:
    return repr(float(x))


def emit_tables(summaries, out_path, config_hash: str = "", seed: int | None = None):
    """Write ``table2.csv`` (allocations and surplus statistics) and
    ``table3.csv`` (percentile bounds) under ``out_path``.

    Floats are written with full round-trip precision, so identical
    summaries give byte-identical files.
    """
    summaries = list(summaries)
    if not summaries:
        raise ValidationError("no summaries to emit")
    out_dir = Path(out_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_assets = summaries[0].mean_allocation_pct.shape[0]
    alloc_names = ["alloc_pct_bond"] + [f"alloc_pct_stock_{i}" for i in range(1, n_assets)]
    meta = f"# config_hash={config_hash} seed={seed}"

    t2 = out_dir / "table2.csv"
    with t2.open("w", newline="") as fh:
        fh.write(meta + "\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["n_priors", "homogeneity", *alloc_names,
             "mean_expected_surplus", "se_expected_surplus",
             "mean_surplus_std", "se_surplus_std",
             "rmsd_expected_surplus", "rmsd_surplus_std",
             "mean_estimated_surplus_std", "replications", "failures"]
        )
        for s in summaries:
            writer.writerow(
                [s.n_priors, s.homogeneity, *(_fmt(a) for a in s.mean_allocation_pct),
                 _fmt(s.mean_expected_surplus), _fmt(s.se_expected_surplus),
                 _fmt(s.mean_surplus_std), _fmt(s.se_surplus_std),
                 _fmt(s.rmsd_expected_surplus), _fmt(s.rmsd_surplus_std),
                 _fmt(s.mean_estimated_surplus_std), s.replications, s.failures]
            )

    t3 = out_dir / "table3.csv"
    with t3.open("w", newline="") as fh:
        fh.write(meta + "\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["n_priors", "homogeneity",
             "surplus_lower_2_5", "surplus_upper_97_5",
             "variance_ratio_lower_2_5", "variance_ratio_upper_97_5"]
        )
        for s in summaries:
            writer.writerow(
                [s.n_priors, s.homogeneity,
                 _fmt(s.surplus_ci[0]), _fmt(s.surplus_ci[1]),
                 _fmt(s.variance_ratio_ci[0]), _fmt(s.variance_ratio_ci[1])]
            )
    return t2, t3
