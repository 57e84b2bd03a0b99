"""Gaussian model type, symmetric-matrix utilities and the quadratic
optimal-transport distance in its Gaussian closed form.

Everything here is pure: models are immutable after construction and all
operations are functions of their inputs, so values can be shared freely
across threads.  Sampling takes an explicit 64-bit seed and is bit-stable
for a fixed seed (PCG64 streams via ``numpy.random.default_rng``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

__all__ = ["GaussianModel", "psd_sqrt", "w2_distance_sq", "sample"]

# Relative tolerance for symmetry checks and eigenvalue clamping.  Perturbed
# prior covariances can come out marginally indefinite; eigenvalues above
# -EIG_CLAMP_RTOL * trace/dim are treated as zero.
SYM_RTOL = 1e-12
EIG_CLAMP_RTOL = 1e-10


def _as_matrix(c, name: str = "cov") -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValidationError(f"{name} must be a square matrix, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValidationError(f"{name} contains NaN or Inf entries")
    return c


def _check_symmetric(c: np.ndarray, name: str = "cov") -> None:
    scale = max(float(np.abs(c).max()), 1.0)
    if float(np.abs(c - c.T).max()) > SYM_RTOL * scale:
        raise ValidationError(f"{name} is not symmetric within {SYM_RTOL} relative tolerance")


@dataclass(frozen=True)
class GaussianModel:
    """A probability model given by its mean vector and covariance matrix.

    Parameters
    ----------
    mean : array of shape (dim,)
    cov : array of shape (dim, dim)
        Symmetric positive semidefinite.  Marginally negative eigenvalues
        (down to ``-1e-10 * trace/dim``) are tolerated as round-off.
    """

    mean: np.ndarray
    cov: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if mean.ndim != 1:
            raise ValidationError(f"mean must be a vector, got shape {mean.shape}")
        if not np.all(np.isfinite(mean)):
            raise ValidationError("mean contains NaN or Inf entries")
        cov = _as_matrix(self.cov)
        if cov.shape[0] != mean.shape[0]:
            raise ValidationError(
                f"mean has length {mean.shape[0]} but cov is {cov.shape[0]}x{cov.shape[1]}"
            )
        _check_symmetric(cov)
        dim = mean.shape[0]
        floor = -EIG_CLAMP_RTOL * max(np.trace(cov), 0.0) / dim
        min_eig = float(np.linalg.eigvalsh(cov)[0])
        if min_eig < floor - 1e-300:
            raise ValidationError(
                f"cov is not positive semidefinite (min eigenvalue {min_eig:.3e})"
            )
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "dim", dim)

    def to_dict(self) -> dict:
        """JSON-ready representation: ``{"mean": [...], "cov": [[...], ...]}``."""
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianModel":
        try:
            return cls(mean=d["mean"], cov=d["cov"])
        except KeyError as exc:
            raise ValidationError(f"Gaussian model JSON missing field {exc}") from exc


def psd_sqrt(c) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Negative eigenvalues (round-off from marginally indefinite inputs) are
    clamped to zero, so the result S satisfies S @ S = clamp(c).
    """
    c = _as_matrix(c)
    _check_symmetric(c)
    eigval, eigvec = np.linalg.eigh(c)
    eigval = np.clip(eigval, 0.0, None)
    root = (eigvec * np.sqrt(eigval)) @ eigvec.T
    return 0.5 * (root + root.T)


def w2_distance_sq(a: GaussianModel, b: GaussianModel) -> float:
    """Squared quadratic Wasserstein distance between two Gaussian models.

    Closed form:

        ||m_a - m_b||^2 + tr(C_a + C_b - 2 (C_a^{1/2} C_b C_a^{1/2})^{1/2})

    The trace term is clipped at zero to absorb round-off on near-identical
    inputs.
    """
    if a.dim != b.dim:
        raise ValidationError(f"dimension mismatch: {a.dim} vs {b.dim}")
    ra = psd_sqrt(a.cov)
    cross = psd_sqrt(ra @ b.cov @ ra)
    loc = float(np.sum((a.mean - b.mean) ** 2))
    disp = float(np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross))
    return loc + max(disp, 0.0)


def _factor(cov: np.ndarray) -> np.ndarray:
    """Sampling factor F with F @ F.T = cov.

    Lower-triangular Cholesky when possible; a diagonal jitter of
    ``1e-12 * trace/dim`` is tried once, and truly singular matrices fall
    back to the symmetric PSD root.
    """
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-12 * np.trace(cov) / cov.shape[0]
    try:
        return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError:
        return psd_sqrt(cov)


def sample(model: GaussianModel, count: int, rng_seed) -> np.ndarray:
    """Draw ``count`` i.i.d. rows from the model.

    Identical ``rng_seed`` gives bit-identical output.  ``rng_seed`` may be
    an integer or a ``numpy.random.SeedSequence`` for callers that manage
    their own stream splits.
    """
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(rng_seed)
    z = rng.standard_normal((int(count), model.dim))
    return model.mean + z @ _factor(model.cov).T
