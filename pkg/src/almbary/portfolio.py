"""Moment estimation and the closed-form mean-variance surplus portfolio.

The problem: allocate wealth x0 over the n+1 assets (bond first) to
minimize E[(theta'S - L - zeta)^2] subject to the budget 1'theta = x0 and
the mean floor E[theta'S - L] >= zeta.  With second moments

    m_S = E[S],  C_S = E[S S'],  C_SL = E[S L],  m_L = E[L]

the optimizer is

    theta(lam) = Ct (C_SL + (zeta + lam) m_S) + C_S^{-1} 1 x0 / (1' C_S^{-1} 1)

with Ct = C_S^{-1} - C_S^{-1} 1 1' C_S^{-1} / (1' C_S^{-1} 1), and lam = 0
when the floor is slack.  When it binds, lam solves the affine equation
theta(lam)'m_S - m_L = zeta.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, NumericalError, SolverError, ValidationError
from .gaussian import GaussianModel, sample

__all__ = [
    "MomentBundle",
    "ProblemSpec",
    "PortfolioSolution",
    "moments_mc",
    "moments_analytic",
    "solve_portfolio",
    "evaluate_portfolio",
]

COND_LIMIT = 1e12
LOG_OVERFLOW = 700.0


def _mirror_upper(c: np.ndarray) -> np.ndarray:
    return np.triu(c) + np.triu(c, 1).T


@dataclass(frozen=True)
class MomentBundle:
    """First and second moments of (asset values, liability) at the horizon.

    ``m_s[i]`` is E[S_i], ``c_s[i, j]`` is E[S_i S_j] (a raw second-moment
    matrix, not a covariance), ``c_sl[i]`` is E[S_i L], and ``m_l``/``m_l2``
    are E[L] and E[L^2].  ``sample_count`` is 0 for analytic bundles.
    """

    m_s: np.ndarray
    c_s: np.ndarray
    c_sl: np.ndarray
    m_l: float
    m_l2: float
    sample_count: int = 0

    def __post_init__(self):
        m_s = np.atleast_1d(np.asarray(self.m_s, dtype=float))
        c_s = np.asarray(self.c_s, dtype=float)
        c_sl = np.atleast_1d(np.asarray(self.c_sl, dtype=float))
        k = m_s.shape[0]
        if c_s.shape != (k, k) or c_sl.shape != (k,):
            raise ValidationError(
                f"moment shapes disagree: m_s {m_s.shape}, c_s {c_s.shape}, c_sl {c_sl.shape}"
            )
        if not (
            np.all(np.isfinite(m_s))
            and np.all(np.isfinite(c_s))
            and np.all(np.isfinite(c_sl))
            and np.isfinite(self.m_l)
            and np.isfinite(self.m_l2)
        ):
            raise ValidationError("moment bundle contains non-finite entries")
        c_s = _mirror_upper(c_s)
        floor = -1e-10 * max(float(np.trace(c_s)), 0.0) / k
        if float(np.linalg.eigvalsh(c_s)[0]) < floor:
            raise ValidationError("c_s is not positive semidefinite")
        centered = c_s - np.outer(m_s, m_s)
        if float(np.linalg.eigvalsh(centered)[0]) < floor - 1e-8 * max(
            float(np.trace(np.abs(centered))), 1.0
        ) / k:
            raise ValidationError("c_s - m_s m_s' is not a covariance")
        m_s.setflags(write=False)
        c_s.setflags(write=False)
        c_sl.setflags(write=False)
        object.__setattr__(self, "m_s", m_s)
        object.__setattr__(self, "c_s", c_s)
        object.__setattr__(self, "c_sl", c_sl)

    @property
    def n_assets(self) -> int:
        return self.m_s.shape[0]


@dataclass(frozen=True)
class ProblemSpec:
    """Target surplus level, initial wealth and optional per-asset bounds."""

    zeta: float
    x0: float
    theta_bounds: tuple | None = None

    def __post_init__(self):
        if not np.isfinite(self.x0) or not np.isfinite(self.zeta):
            raise ValidationError("zeta and x0 must be finite")
        if self.theta_bounds is not None:
            bounds = tuple(
                (None if lo is None else float(lo), None if hi is None else float(hi))
                for lo, hi in self.theta_bounds
            )
            for lo, hi in bounds:
                if lo is not None and hi is not None and lo > hi:
                    raise ValidationError(f"inconsistent bound ({lo}, {hi})")
            object.__setattr__(self, "theta_bounds", bounds)

    def to_dict(self) -> dict:
        return {
            "zeta": self.zeta,
            "x0": self.x0,
            "theta_bounds": None
            if self.theta_bounds is None
            else [list(b) for b in self.theta_bounds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        try:
            bounds = d.get("theta_bounds")
            return cls(
                zeta=float(d["zeta"]),
                x0=float(d["x0"]),
                theta_bounds=None if bounds is None else tuple(tuple(b) for b in bounds),
            )
        except KeyError as exc:
            raise ValidationError(f"problem spec JSON missing field {exc}") from exc


@dataclass(frozen=True)
class PortfolioSolution:
    """Optimal allocation with multiplier and optimality diagnostics.

    ``lam`` is the multiplier actually used (solved from the binding mean
    constraint); ``lam_direct`` is the value of the one-shot substitution
    formula, kept as a diagnostic because it disagrees with the
    constraint-consistent value on general moment data.
    """

    theta: np.ndarray
    lam: float
    constraint_active: bool
    expected_surplus: float
    surplus_std: float
    kkt_residual: float
    lam_direct: float
    objective: float
    x0: float

    def to_dict(self) -> dict:
        pct = 100.0 * self.theta / self.x0 if self.x0 != 0 else np.full_like(self.theta, np.nan)
        return {
            "theta": self.theta.tolist(),
            "allocation_pct": pct.tolist(),
            "lambda": self.lam,
            "lambda_direct_formula": self.lam_direct,
            "constraint_active": self.constraint_active,
            "expected_surplus": self.expected_surplus,
            "surplus_std": self.surplus_std,
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "x0": self.x0,
        }


def moments_mc(model: GaussianModel, count: int, rng_seed) -> MomentBundle:
    """Sample moments from ``count`` draws of an asset law (L, log G_0, ...).

    The log-return coordinates are exponentiated before moments are taken;
    draws with log values beyond +/-700 would overflow and raise.
    """
    if model.dim < 2:
        raise ValidationError("asset-law model needs at least (L, log G_0)")
    if count < 1000:
        raise ValidationError(f"count must be >= 1000, got {count}")
    draws = sample(model, count, rng_seed)
    logs = draws[:, 1:]
    if float(np.abs(logs).max()) > LOG_OVERFLOW:
        raise NumericalError("log gross returns exceed exp() range")
    liab = draws[:, 0]
    gross = np.exp(logs)
    m_s = gross.mean(axis=0)
    c_s = _mirror_upper(gross.T @ gross / count)
    c_sl = gross.T @ liab / count
    return MomentBundle(
        m_s=m_s,
        c_s=c_s,
        c_sl=c_sl,
        m_l=float(liab.mean()),
        m_l2=float(liab @ liab / count),
        sample_count=int(count),
    )


def moments_analytic(model: GaussianModel) -> MomentBundle:
    """Exact moments of an asset law (L, log G_0, ...) via the lognormal
    moment formulas for the jointly Gaussian (L, log G)."""
    if model.dim < 2:
        raise ValidationError("asset-law model needs at least (L, log G_0)")
    mu = model.mean[1:]
    sig = model.cov[1:, 1:]
    cov_gl = model.cov[1:, 0]
    m_l = float(model.mean[0])
    var_l = float(model.cov[0, 0])
    half_diag = 0.5 * np.diag(sig)
    if float((mu + half_diag).max()) > LOG_OVERFLOW:
        raise NumericalError("log gross return moments exceed exp() range")
    m_s = np.exp(mu + half_diag)
    c_s = _mirror_upper(np.outer(m_s, m_s) * np.exp(sig))
    c_sl = (m_l + cov_gl) * m_s
    return MomentBundle(
        m_s=m_s, c_s=c_s, c_sl=c_sl, m_l=m_l, m_l2=var_l + m_l * m_l, sample_count=0
    )


def evaluate_portfolio(
    theta, moments: MomentBundle, spec: ProblemSpec
) -> tuple[float, float, float]:
    """(expected surplus, surplus standard deviation, objective value) of a
    fixed allocation under the given moments."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (moments.n_assets,):
        raise ValidationError(
            f"theta must have length {moments.n_assets}, got shape {theta.shape}"
        )
    e_surplus = float(theta @ moments.m_s - moments.m_l)
    second = float(theta @ moments.c_s @ theta - 2.0 * theta @ moments.c_sl + moments.m_l2)
    objective = second - 2.0 * spec.zeta * e_surplus + spec.zeta**2
    surplus_var = second - e_surplus * e_surplus
    return e_surplus, float(np.sqrt(max(surplus_var, 0.0))), objective


def _kkt_residual(theta, lam, moments: MomentBundle, spec: ProblemSpec, e_surplus) -> float:
    grad = moments.c_s @ theta - moments.c_sl - (spec.zeta + lam) * moments.m_s
    nu = float(grad.mean())
    scale_g = max(
        float(np.linalg.norm(moments.c_s @ theta)),
        float(np.linalg.norm(moments.c_sl)),
        abs(spec.zeta + lam) * float(np.linalg.norm(moments.m_s)),
        1e-300,
    )
    r_stat = float(np.linalg.norm(grad - nu)) / scale_g
    r_budget = abs(float(theta.sum()) - spec.x0) / max(abs(spec.x0), 1.0)
    scale_s = max(abs(spec.zeta), abs(moments.m_l), 1.0)
    r_feas = max(0.0, spec.zeta - e_surplus) / scale_s
    r_comp = abs(lam) * abs(e_surplus - spec.zeta) / ((1.0 + abs(lam)) * scale_s)
    r_dual = max(0.0, -lam) / (1.0 + abs(lam))
    return max(r_stat, r_budget, r_feas, r_comp, r_dual)


def _solve_closed_form(moments: MomentBundle, spec: ProblemSpec) -> tuple[np.ndarray, float, bool, float]:
    c_s = moments.c_s
    m_s = moments.m_s
    ones = np.ones(moments.n_assets)

    if np.linalg.cond(c_s) > COND_LIMIT:
        raise SolverError(
            f"asset second-moment matrix is ill-conditioned (cond > {COND_LIMIT:.0e})"
        )
    inv_1 = np.linalg.solve(c_s, ones)
    denom = float(ones @ inv_1)
    if denom <= 0:
        raise SolverError("1' C_S^{-1} 1 is not positive; moments are not usable")

    def ct(v: np.ndarray) -> np.ndarray:
        a = np.linalg.solve(c_s, v)
        return a - inv_1 * (float(ones @ a) / denom)

    base = ct(moments.c_sl + spec.zeta * m_s) + inv_1 * (spec.x0 / denom)
    ct_m = ct(m_s)
    slope = float(m_s @ ct_m)

    # Diagnostic: the one-shot substitution formula for the binding-case
    # multiplier, evaluated verbatim.
    ms_sq = float(m_s @ m_s)
    lam_direct = (
        moments.m_l
        + spec.zeta * (1.0 - ms_sq)
        - float(m_s @ (ct(moments.c_sl) + inv_1 * spec.x0))
    ) / ms_sq

    e0 = float(base @ m_s) - moments.m_l
    slack_tol = 1e-12 * max(abs(spec.zeta), abs(moments.m_l), 1.0)
    if e0 >= spec.zeta - slack_tol:
        return base, 0.0, False, lam_direct

    if slope <= 1e-12 * abs(float(m_s @ np.linalg.solve(c_s, m_s))) + 1e-300:
        raise InfeasibleError(
            f"mean floor {spec.zeta} unreachable; best attainable expected surplus {e0}",
            best_surplus=e0,
        )
    lam = (spec.zeta - e0) / slope
    return base + lam * ct_m, lam, True, lam_direct


def _solve_bounded(moments: MomentBundle, spec: ProblemSpec) -> tuple[np.ndarray, float, bool, float]:
    """QP path used when per-asset bounds are present."""
    from scipy.optimize import minimize

    k = moments.n_assets
    scale = max(abs(spec.x0), 1.0)
    c_s, m_s = moments.c_s, moments.m_s
    lin = moments.c_sl + spec.zeta * m_s

    def f(y):
        th = y * scale
        return float(th @ c_s @ th - 2.0 * th @ lin) / scale**2

    def grad(y):
        th = y * scale
        return (2.0 * c_s @ th - 2.0 * lin) / scale

    bounds = [
        (None if lo is None else lo / scale, None if hi is None else hi / scale)
        for lo, hi in spec.theta_bounds
    ]
    cons = [
        {"type": "eq", "fun": lambda y: y.sum() - spec.x0 / scale, "jac": lambda y: np.ones(k)},
        {
            "type": "ineq",
            "fun": lambda y: (float(m_s @ y) * scale - moments.m_l - spec.zeta) / scale,
            "jac": lambda y: m_s,
        },
    ]
    y0 = np.full(k, spec.x0 / scale / k)
    res = minimize(
        f, y0, jac=grad, bounds=bounds, constraints=cons, method="SLSQP",
        options={"maxiter": 500, "ftol": 1e-14},
    )
    if not res.success:
        raise SolverError(f"bounded portfolio solve failed: {res.message}")
    theta = res.x * scale
    e_s = float(theta @ m_s) - moments.m_l
    active = e_s <= spec.zeta + 1e-6 * max(abs(spec.zeta), 1.0)
    # Recover the mean-floor multiplier from stationarity on coordinates
    # strictly inside their bounds.
    g = c_s @ theta - lin
    free = np.ones(k, dtype=bool)
    for i, (lo, hi) in enumerate(spec.theta_bounds):
        span = 1e-8 * scale
        if lo is not None and theta[i] <= lo + span:
            free[i] = False
        if hi is not None and theta[i] >= hi - span:
            free[i] = False
    lam = 0.0
    if active and free.sum() >= 2:
        a = np.stack([m_s[free], np.ones(int(free.sum()))], axis=1)
        sol, *_ = np.linalg.lstsq(a, g[free], rcond=None)
        lam = max(float(sol[0]), 0.0)
    return theta, lam, active, lam


def solve_portfolio(moments: MomentBundle, spec: ProblemSpec) -> PortfolioSolution:
    """Optimal allocation for the mean-variance surplus problem.

    Uses the closed form with the two multiplier branches; when
    ``spec.theta_bounds`` is set the closed form does not apply and a
    numerical QP is solved instead.
    """
    if spec.theta_bounds is not None:
        if len(spec.theta_bounds) != moments.n_assets:
            raise ValidationError(
                f"theta_bounds must have {moments.n_assets} entries"
            )
        theta, lam, active, lam_direct = _solve_bounded(moments, spec)
    else:
        theta, lam, active, lam_direct = _solve_closed_form(moments, spec)

    e_surplus, surplus_std, objective = evaluate_portfolio(theta, moments, spec)
    return PortfolioSolution(
        theta=theta,
        lam=lam,
        constraint_active=active,
        expected_surplus=e_surplus,
        surplus_std=surplus_std,
        kkt_residual=_kkt_residual(theta, lam, moments, spec, e_surplus),
        lam_direct=lam_direct,
        objective=objective,
        x0=spec.x0,
    )
