"""Market parameter blocks and the terminal joint Gaussian laws they induce.

The market has a bond driven by a mean-reverting short rate, ``n`` stocks
with lognormal dynamics on the same n market factors, and an aggregate
liability driven by both the market factors and ``m`` further insurance
factors.  Two laws are built here:

* ``build_joint_law`` — the law of (L_T, r_T, log S_1, ..., log S_n);
* ``build_asset_law`` — the law of (L_T, log G_0, ..., log G_n) where G_i
  are gross returns, which is what the portfolio problem consumes.  The
  bond return needs the law of the integrated short rate, available either
  exactly (``integrated_ou_exact``) or through the cruder terminal-rate
  proxy ``r_T * T`` (``short_rate_proxy``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError, ValidationError
from .gaussian import GaussianModel, _as_matrix, _check_symmetric

__all__ = [
    "RateParams",
    "StockParams",
    "LiabilityParams",
    "Correlations",
    "MarketParams",
    "AssetLawConfig",
    "BOND_MODES",
    "time_factors",
    "build_joint_law",
    "build_asset_law",
]

BOND_MODES = ("integrated_ou_exact", "short_rate_proxy")


def _vec(x, name: str) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise ValidationError(f"{name} must be a vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} contains NaN or Inf entries")
    return v


def _check_correlation(rho: np.ndarray, name: str) -> None:
    _check_symmetric(rho, name)
    if float(np.abs(np.diag(rho) - 1.0).max()) > 1e-10:
        raise ValidationError(f"{name} must have unit diagonal")
    if float(np.linalg.eigvalsh(rho)[0]) < -1e-10:
        raise ValidationError(f"{name} is not positive semidefinite")


@dataclass(frozen=True)
class RateParams:
    """Short-rate block: initial rate, long-run level, mean reversion speed
    and the volatility loading on the n market factors (all rates per year)."""

    r0: float
    R0: float
    kappa: float
    sigma_r: np.ndarray

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValidationError(f"kappa must be positive, got {self.kappa}")
        object.__setattr__(self, "sigma_r", _vec(self.sigma_r, "sigma_r"))


@dataclass(frozen=True)
class StockParams:
    """Stock block: initial prices, drifts and the n x n volatility matrix
    whose row i is the loading of stock i on the market factors."""

    s0: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        s0 = _vec(self.s0, "s0")
        if np.any(s0 <= 0):
            raise ValidationError("s0 must be positive componentwise")
        mu = _vec(self.mu, "mu")
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim != 2:
            raise ValidationError(f"sigma must be a matrix, got shape {sigma.shape}")
        n = s0.shape[0]
        if mu.shape != (n,) or sigma.shape != (n, n):
            raise ValidationError(
                f"stock block dimensions disagree: s0 {s0.shape}, mu {mu.shape}, sigma {sigma.shape}"
            )
        if not np.all(np.isfinite(sigma)):
            raise ValidationError("sigma contains NaN or Inf entries")
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)


@dataclass(frozen=True)
class LiabilityParams:
    """Liability block: drifted Brownian aggregate claim process with
    loadings beta on the market factors and gamma on the insurance factors."""

    l0: float
    alpha: float
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", _vec(self.beta, "beta"))
        object.__setattr__(self, "gamma", _vec(self.gamma, "gamma"))


@dataclass(frozen=True)
class Correlations:
    """Correlation matrices of the market factor block (n x n) and the
    insurance factor block (m x m); the two blocks are independent."""

    rho_W: np.ndarray
    rho_B: np.ndarray

    def __post_init__(self):
        rho_W = _as_matrix(self.rho_W, "rho_W")
        rho_B = _as_matrix(self.rho_B, "rho_B")
        _check_correlation(rho_W, "rho_W")
        _check_correlation(rho_B, "rho_B")
        object.__setattr__(self, "rho_W", rho_W)
        object.__setattr__(self, "rho_B", rho_B)


@dataclass(frozen=True)
class MarketParams:
    """Full parameter set for one market model plus initial states and
    horizon.  ``correlations=None`` means both blocks are uncorrelated."""

    rate: RateParams
    stocks: StockParams
    liability: LiabilityParams
    horizon_T: float
    correlations: Correlations | None = None
    n: int = field(init=False)
    m: int = field(init=False)

    def __post_init__(self):
        if not self.horizon_T > 0:
            raise ValidationError(f"horizon_T must be positive, got {self.horizon_T}")
        n = self.stocks.s0.shape[0]
        m = self.liability.gamma.shape[0]
        if self.rate.sigma_r.shape != (n,):
            raise ValidationError(
                f"sigma_r must have length n={n}, got {self.rate.sigma_r.shape}"
            )
        if self.liability.beta.shape != (n,):
            raise ValidationError(
                f"beta must have length n={n}, got {self.liability.beta.shape}"
            )
        corr = self.correlations
        if corr is None:
            corr = Correlations(rho_W=np.eye(n), rho_B=np.eye(m))
            object.__setattr__(self, "correlations", corr)
        if corr.rho_W.shape != (n, n):
            raise ValidationError(f"rho_W must be {n}x{n}, got {corr.rho_W.shape}")
        if corr.rho_B.shape != (m, m):
            raise ValidationError(f"rho_B must be {m}x{m}, got {corr.rho_B.shape}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", m)

    def to_dict(self) -> dict:
        return {
            "rate": {
                "r0": self.rate.r0,
                "R0": self.rate.R0,
                "kappa": self.rate.kappa,
                "sigma_r": self.rate.sigma_r.tolist(),
            },
            "stocks": {
                "s0": self.stocks.s0.tolist(),
                "mu": self.stocks.mu.tolist(),
                "sigma": self.stocks.sigma.tolist(),
            },
            "liability": {
                "l0": self.liability.l0,
                "alpha": self.liability.alpha,
                "beta": self.liability.beta.tolist(),
                "gamma": self.liability.gamma.tolist(),
            },
            "correlations": {
                "rho_W": self.correlations.rho_W.tolist(),
                "rho_B": self.correlations.rho_B.tolist(),
            },
            "horizon_T": self.horizon_T,
            "n": self.n,
            "m": self.m,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarketParams":
        try:
            rate = RateParams(
                r0=float(d["rate"]["r0"]),
                R0=float(d["rate"]["R0"]),
                kappa=float(d["rate"]["kappa"]),
                sigma_r=d["rate"]["sigma_r"],
            )
            stocks = StockParams(
                s0=d["stocks"]["s0"], mu=d["stocks"]["mu"], sigma=d["stocks"]["sigma"]
            )
            liability = LiabilityParams(
                l0=float(d["liability"]["l0"]),
                alpha=float(d["liability"]["alpha"]),
                beta=d["liability"]["beta"],
                gamma=d["liability"]["gamma"],
            )
            corr = d.get("correlations")
            correlations = (
                Correlations(rho_W=corr["rho_W"], rho_B=corr["rho_B"])
                if corr is not None
                else None
            )
            params = cls(
                rate=rate,
                stocks=stocks,
                liability=liability,
                horizon_T=float(d["horizon_T"]),
                correlations=correlations,
            )
        except KeyError as exc:
            raise ValidationError(f"market params JSON missing field {exc}") from exc
        for key in ("n", "m"):
            if key in d and int(d[key]) != getattr(params, key):
                raise ValidationError(
                    f"declared {key}={d[key]} disagrees with array dimensions ({getattr(params, key)})"
                )
        return params


@dataclass(frozen=True)
class AssetLawConfig:
    """Choices the asset-return law leaves open.

    bond_mode
        ``integrated_ou_exact`` uses the exact Gaussian law of the
        integrated short rate; ``short_rate_proxy`` approximates the bond
        log return by ``r_T * T``.
    normalize_to_gross_returns
        When true (default) the stock coordinates are log gross returns,
        independent of initial prices, so portfolio entries are currency
        amounts and the budget constraint uses the all-ones vector.
    ito_correction
        The model's stock log return has mean ``mu_i * T``; setting this
        flag subtracts the usual ``sigma' rho sigma * T / 2`` so that the
        drift matches the standard lognormal price convention instead.
    """

    bond_mode: str = "integrated_ou_exact"
    normalize_to_gross_returns: bool = True
    ito_correction: bool = False

    def __post_init__(self):
        if self.bond_mode not in BOND_MODES:
            raise ValidationError(
                f"bond_mode must be one of {BOND_MODES}, got {self.bond_mode!r}"
            )

    def to_dict(self) -> dict:
        return {
            "bond_mode": self.bond_mode,
            "normalize_to_gross_returns": self.normalize_to_gross_returns,
            "ito_correction": self.ito_correction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AssetLawConfig":
        return cls(
            bond_mode=d.get("bond_mode", "integrated_ou_exact"),
            normalize_to_gross_returns=bool(d.get("normalize_to_gross_returns", True)),
            ito_correction=bool(d.get("ito_correction", False)),
        )


def time_factors(kappa: float, t: float) -> tuple[float, float]:
    """Scalars c(t) = sqrt(t (1 - e^{-2 kappa t}) / (2 kappa)) and
    c_tilde(t) = c(t)^2 / t coupling the terminal rate to the factor block."""
    if not kappa > 0:
        raise ValidationError(f"kappa must be positive, got {kappa}")
    if not t > 0:
        raise ValidationError(f"t must be positive, got {t}")
    c_tilde = (1.0 - math.exp(-2.0 * kappa * t)) / (2.0 * kappa)
    return math.sqrt(t * c_tilde), c_tilde


def _mirror_upper(c: np.ndarray) -> np.ndarray:
    return np.triu(c) + np.triu(c, 1).T


def _validate_psd(c: np.ndarray, label: str) -> np.ndarray:
    """Clamp round-off negative eigenvalues; reject genuinely indefinite."""
    dim = c.shape[0]
    eigval, eigvec = np.linalg.eigh(c)
    floor = -1e-10 * max(float(np.trace(c)), 0.0) / dim
    if eigval[0] < floor:
        raise ModelError(
            f"assembled covariance ({label}) is indefinite: min eigenvalue {eigval[0]:.3e}"
        )
    if eigval[0] >= 0.0:
        return c
    out = (eigvec * np.clip(eigval, 0.0, None)) @ eigvec.T
    return _mirror_upper(out)


def _blocks(params: MarketParams):
    """Zero-padded loading vectors and the factor covariance C_Z."""
    n, m = params.n, params.m
    corr = params.correlations
    c_z = np.zeros((n + m, n + m))
    c_z[:n, :n] = corr.rho_W
    c_z[n:, n:] = corr.rho_B
    b = np.concatenate([params.liability.beta, params.liability.gamma])
    sig_r = np.concatenate([params.rate.sigma_r, np.zeros(m)])
    sig_stocks = [
        np.concatenate([params.stocks.sigma[i], np.zeros(m)]) for i in range(n)
    ]
    return c_z, b, sig_r, sig_stocks


def build_joint_law(params: MarketParams) -> GaussianModel:
    """Joint Gaussian law of (L_T, r_T, log S_1, ..., log S_n)."""
    n = params.n
    t = params.horizon_T
    rate, stocks, liab = params.rate, params.stocks, params.liability
    c_t, c_tilde = time_factors(rate.kappa, t)
    c_z, b, sig_r, sig_stocks = _blocks(params)

    mean = np.empty(n + 2)
    mean[0] = liab.l0 + liab.alpha * t
    mean[1] = rate.R0 + math.exp(-rate.kappa * t) * (rate.r0 - rate.R0)
    mean[2:] = np.log(stocks.s0) + stocks.mu * t

    zb = c_z @ b
    zr = c_z @ sig_r
    cov = np.empty((n + 2, n + 2))
    cov[0, 0] = t * float(b @ zb)
    cov[0, 1] = c_t * float(sig_r @ zb)
    cov[1, 1] = c_tilde * float(sig_r @ zr)
    for i, si in enumerate(sig_stocks):
        cov[0, 2 + i] = t * float(si @ zb)
        cov[1, 2 + i] = c_t * float(si @ zr)
        zi = c_z @ si
        for j in range(i, n):
            cov[2 + i, 2 + j] = t * float(sig_stocks[j] @ zi)
    cov = _mirror_upper(cov)
    cov = _validate_psd(cov, "terminal joint law")
    return GaussianModel(mean=mean, cov=cov)


def _integrated_ou_factors(kappa: float, t: float) -> tuple[float, float]:
    """(variance kernel, cross kernel) of the integrated short-rate noise.

    With f(s) = (1 - e^{-kappa (t-s)}) / kappa, returns
    (int_0^t f^2 ds, int_0^t f ds); the former scales the variance of the
    integrated rate, the latter its covariance with terminal factor levels.
    """
    em = math.exp(-kappa * t)
    em2 = math.exp(-2.0 * kappa * t)
    i1 = (t - (1.0 - em) / kappa) / kappa
    v = (t - 2.0 * (1.0 - em) / kappa + (1.0 - em2) / (2.0 * kappa)) / kappa**2
    return v, i1


def build_asset_law(
    params: MarketParams, config: AssetLawConfig | None = None
) -> GaussianModel:
    """Joint Gaussian law of (L_T, log G_0, log G_1, ..., log G_n).

    G_0 is the bond gross return exp(integral of r); G_i = S_i(T)/S_i(0)
    the stock gross returns.  With ``normalize_to_gross_returns=False`` the
    stock coordinates carry ``log s_i`` offsets instead (the bond's initial
    price is taken as 1).
    """
    if config is None:
        config = AssetLawConfig()
    n = params.n
    t = params.horizon_T
    rate, stocks, liab = params.rate, params.stocks, params.liability
    c_z, b, sig_r, sig_stocks = _blocks(params)
    zb = c_z @ b
    zr = c_z @ sig_r

    mean = np.empty(n + 2)
    mean[0] = liab.l0 + liab.alpha * t
    mean[2:] = stocks.mu * t
    if config.ito_correction:
        for i, si in enumerate(sig_stocks):
            mean[2 + i] -= 0.5 * t * float(si @ (c_z @ si))
    if not config.normalize_to_gross_returns:
        mean[2:] += np.log(stocks.s0)

    cov = np.empty((n + 2, n + 2))
    cov[0, 0] = t * float(b @ zb)
    for i, si in enumerate(sig_stocks):
        cov[0, 2 + i] = t * float(si @ zb)
        zi = c_z @ si
        for j in range(i, n):
            cov[2 + i, 2 + j] = t * float(sig_stocks[j] @ zi)

    if config.bond_mode == "integrated_ou_exact":
        v_int, i1 = _integrated_ou_factors(rate.kappa, t)
        mean[1] = rate.R0 * t + (rate.r0 - rate.R0) * (1.0 - math.exp(-rate.kappa * t)) / rate.kappa
        cov[1, 1] = v_int * float(sig_r @ zr)
        cov[0, 1] = i1 * float(sig_r @ zb)
        for i, si in enumerate(sig_stocks):
            cov[1, 2 + i] = i1 * float(si @ zr)
    else:
        c_t, c_tilde = time_factors(rate.kappa, t)
        mean[1] = t * (rate.R0 + math.exp(-rate.kappa * t) * (rate.r0 - rate.R0))
        cov[1, 1] = t * t * c_tilde * float(sig_r @ zr)
        cov[0, 1] = t * c_t * float(sig_r @ zb)
        for i, si in enumerate(sig_stocks):
            cov[1, 2 + i] = t * c_t * float(si @ zr)

    cov = _mirror_upper(cov)
    cov = _validate_psd(cov, f"asset law ({config.bond_mode})")
    return GaussianModel(mean=mean, cov=cov)
