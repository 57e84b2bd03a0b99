"""Weighted Wasserstein barycenter of a set of Gaussian models.

The barycenter mean is the weighted average of the input means.  The
covariance solves the matrix equation

    C = sum_i w_i (C^{1/2} C_i C^{1/2})^{1/2}

obtained here with the classical fixed-point iteration

    C_{k+1} = C_k^{-1/2} (sum_i w_i (C_k^{1/2} C_i C_k^{1/2})^{1/2})^2 C_k^{-1/2}

started from the linear mixture covariance, which is strictly positive
definite whenever any input covariance is.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .gaussian import GaussianModel, psd_sqrt, w2_distance_sq

__all__ = ["PriorSet", "BarycenterResult", "frechet_variance", "barycenter"]

SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class PriorSet:
    """N Gaussian models of equal dimension with simplex weights."""

    models: tuple
    weights: np.ndarray

    def __post_init__(self):
        models = tuple(self.models)
        if len(models) == 0:
            raise ValidationError("prior set must contain at least one model")
        for i, m in enumerate(models):
            if not isinstance(m, GaussianModel):
                raise ValidationError(f"model {i} is not a GaussianModel")
        dim = models[0].dim
        if any(m.dim != dim for m in models):
            raise ValidationError("all prior models must share one dimension")
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if w.shape != (len(models),):
            raise ValidationError(
                f"weights must have length {len(models)}, got shape {w.shape}"
            )
        if np.any(w < -SIMPLEX_TOL):
            raise ValidationError("weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > SIMPLEX_TOL * max(len(models), 1):
            raise ValidationError(f"weights must sum to 1, got {w.sum()!r}")
        w = np.clip(w, 0.0, None)
        w.setflags(write=False)
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "weights", w)

    @classmethod
    def equal_weights(cls, models) -> "PriorSet":
        models = tuple(models)
        n = len(models)
        if n == 0:
            raise ValidationError("prior set must contain at least one model")
        return cls(models=models, weights=np.full(n, 1.0 / n))

    @property
    def dim(self) -> int:
        return self.models[0].dim

    def __len__(self) -> int:
        return len(self.models)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "models": [m.to_dict() for m in self.models],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSet":
        try:
            models = tuple(GaussianModel.from_dict(m) for m in d["models"])
            return cls(models=models, weights=d["weights"])
        except KeyError as exc:
            raise ValidationError(f"prior set JSON missing field {exc}") from exc


@dataclass(frozen=True)
class BarycenterResult:
    model: GaussianModel
    frechet_variance: float
    iterations: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "frechet_variance": self.frechet_variance,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def frechet_variance(candidate: GaussianModel, priors: PriorSet) -> float:
    """Weighted sum of squared W2 distances from ``candidate`` to the set.

    This is also the membership functional of the ambiguity ball around the
    prior set: the barycenter attains its minimal value.
    """
    if candidate.dim != priors.dim:
        raise ValidationError(
            f"candidate dimension {candidate.dim} does not match prior set {priors.dim}"
        )
    return float(
        sum(w * w2_distance_sq(candidate, m) for w, m in zip(priors.weights, priors.models))
    )


def _pinv_from_sqrt(s: np.ndarray) -> np.ndarray:
    """Pseudo-inverse of a symmetric PSD matrix given directly."""
    eigval, eigvec = np.linalg.eigh(s)
    cutoff = max(eigval[-1], 0.0) * s.shape[0] * np.finfo(float).eps
    inv = np.where(eigval > cutoff, 1.0 / np.where(eigval > cutoff, eigval, 1.0), 0.0)
    out = (eigvec * inv) @ eigvec.T
    return 0.5 * (out + out.T)


def _finish(priors: PriorSet, mean, cov, iterations, converged) -> BarycenterResult:
    model = GaussianModel(mean=mean, cov=cov)
    return BarycenterResult(
        model=model,
        frechet_variance=frechet_variance(model, priors),
        iterations=iterations,
        converged=converged,
    )


def barycenter(priors: PriorSet, tol: float = 1e-10, max_iter: int = 500) -> BarycenterResult:
    """Wasserstein barycenter of ``priors`` for the set's weight vector.

    Stops when successive covariance iterates differ by less than ``tol``
    in relative Frobenius norm.  If ``max_iter`` is exhausted the best
    iterate is returned with ``converged=False``.  A relative change that
    grows over three consecutive iterations aborts with a numerical error.
    """
    if tol <= 0:
        raise ValidationError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ValidationError(f"max_iter must be >= 1, got {max_iter}")

    w = priors.weights
    mean = sum(wi * m.mean for wi, m in zip(w, priors.models))

    active = [i for i in range(len(priors)) if w[i] > 0.0]
    if len(active) == 1:
        # Degenerate weighting: the barycenter is that model itself.
        only = priors.models[active[0]]
        return _finish(priors, mean, only.cov, iterations=1, converged=True)

    covs = [priors.models[i].cov for i in active]
    wts = w[active]

    cov = sum(wi * ci for wi, ci in zip(wts, covs))
    if not np.any(cov):
        # Every active prior is a point mass; so is the barycenter.
        return _finish(priors, mean, cov, iterations=1, converged=True)

    scale = float(np.linalg.norm(cov))
    prev_change = np.inf
    growth_streak = 0
    for k in range(1, max_iter + 1):
        root = psd_sqrt(cov)
        inv_root = _pinv_from_sqrt(root)
        inner = np.zeros_like(cov)
        for wi, ci in zip(wts, covs):
            inner += wi * psd_sqrt(root @ ci @ root)
        nxt = inv_root @ (inner @ inner) @ inv_root
        nxt = 0.5 * (nxt + nxt.T)
        if not np.all(np.isfinite(nxt)):
            raise NumericalError(f"barycenter iterate {k} is not finite")
        change = float(np.linalg.norm(nxt - cov)) / max(scale, np.finfo(float).tiny)
        cov = nxt
        if change < tol:
            return _finish(priors, mean, cov, iterations=k, converged=True)
        if change > prev_change:
            growth_streak += 1
            if growth_streak >= 3:
                raise NumericalError(
                    f"barycenter iteration diverging at step {k} (change {change:.3e})"
                )
        else:
            growth_streak = 0
        prev_change = change

    return _finish(priors, mean, cov, iterations=max_iter, converged=False)
