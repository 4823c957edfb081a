"""Proximal and orthogonal-projection operators behind the ADMM solvers.

Every function here is pure, total on its documented domain, and operates on
float64 numpy arrays. SVD-backed operators share one deterministic wrapper
(`deterministic_svd`) that fixes the sign indeterminacy of singular vectors,
so repeated runs and serialized models are bitwise reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMatrixError, NumericalError, ValidationError


def _check_matrix(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValidationError(f"{name} must be a 2-D array, got ndim={m.ndim}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ValidationError(f"{name} must have at least one row and column")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} contains non-finite entries")
    return m


def shrink_scalar(sigma: float, tau: float) -> float:
    """Soft-threshold a scalar: sgn(sigma) * max(|sigma| - tau, 0).

    Parameters
    ----------
    sigma : float
        Value to shrink. Must be finite.
    tau : float
        Threshold, tau >= 0.

    Returns
    -------
    float
        The shrunk value. |result| equals max(|sigma| - tau, 0) exactly and
        the result never flips sign.
    """
    sigma = float(sigma)
    tau = float(tau)
    if not np.isfinite(sigma) or not np.isfinite(tau):
        raise ValidationError("shrink_scalar requires finite inputs")
    if tau < 0:
        raise ValidationError(f"shrink threshold must be >= 0, got {tau}")
    return float(np.sign(sigma) * max(abs(sigma) - tau, 0.0))


def shrink_matrix(m: np.ndarray, tau: float) -> np.ndarray:
    """Entrywise soft threshold of a matrix (see `shrink_scalar`)."""
    m = _check_matrix(m, "shrink_matrix input")
    tau = float(tau)
    if not np.isfinite(tau) or tau < 0:
        raise ValidationError(f"shrink threshold must be finite and >= 0, got {tau}")
    return np.sign(m) * np.maximum(np.abs(m) - tau, 0.0)


def deterministic_svd(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD with a fixed sign convention.

    The largest-magnitude entry of each left-singular vector is forced
    positive (the matching row of vh is flipped along with it), which removes
    the per-pair sign indeterminacy and makes downstream factors reproducible
    across runs.
    """
    try:
        u, s, vh = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed to converge: {exc}") from exc
    pivot = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivot, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, s, vh * signs[:, None]


def svt(m: np.ndarray, tau: float) -> np.ndarray:
    """Singular value thresholding: shrink the spectrum, keep the factors.

    Parameters
    ----------
    m : ndarray
        Matrix to threshold.
    tau : float
        Spectral threshold, tau >= 0.

    Returns
    -------
    ndarray
        U * max(S - tau, 0) * Vh, same shape as `m`. Singular values below
        tau are removed entirely, so the rank never increases.
    """
    m = _check_matrix(m, "svt input")
    tau = float(tau)
    if not np.isfinite(tau) or tau < 0:
        raise ValidationError(f"svt threshold must be finite and >= 0, got {tau}")
    u, s, vh = deterministic_svd(m)
    shrunk = np.maximum(s - tau, 0.0)
    keep = int(np.count_nonzero(shrunk))
    if keep == 0:
        return np.zeros_like(m)
    return (u[:, :keep] * shrunk[:keep]) @ vh[:keep]


def procrustes(m: np.ndarray) -> np.ndarray:
    """Nearest matrix with orthonormal columns, U @ Vh from the thin SVD.

    This is the minimizer of ||Omega - m||_F over Omega with orthonormal
    columns, and equivalently solves min ||Omega A - B||_F when called on
    m = B @ A.T. For rank-deficient input the returned factor is still
    orthonormal but no longer unique; we return the deterministic choice
    produced by `deterministic_svd`.
    """
    m = _check_matrix(m, "procrustes input")
    u, _, vh = deterministic_svd(m)
    return u @ vh


@dataclass(frozen=True)
class RankRule:
    """How to pick the width of a truncated span.

    Exactly one of the two fields is set: `explicit` keeps that many leading
    directions; `energy` keeps the smallest count whose squared singular
    values reach that fraction of the total squared spectrum.
    """

    explicit: int | None = None
    energy: float | None = None

    def __post_init__(self) -> None:
        if (self.explicit is None) == (self.energy is None):
            raise ValidationError("RankRule needs exactly one of explicit/energy")
        if self.explicit is not None and self.explicit < 1:
            raise ValidationError(f"explicit rank must be >= 1, got {self.explicit}")
        if self.energy is not None and not 0.0 < self.energy <= 1.0:
            raise ValidationError(f"energy fraction must be in (0, 1], got {self.energy}")

    @classmethod
    def fixed(cls, r: int) -> "RankRule":
        return cls(explicit=int(r))

    @classmethod
    def energy_fraction(cls, fraction: float) -> "RankRule":
        return cls(energy=float(fraction))


def rank_r_span(m: np.ndarray, rule: RankRule) -> np.ndarray:
    """Orthonormal basis of the leading left-singular subspace of `m`.

    The width comes from `rule`: an explicit count (must not exceed
    min(rows, cols)) or an energy fraction. With energy 1.0 the full
    numerical-rank span is returned. An all-zero matrix has no meaningful
    span and is rejected.
    """
    m = _check_matrix(m, "rank_r_span input")
    if not isinstance(rule, RankRule):
        raise ValidationError(f"rule must be a RankRule, got {type(rule).__name__}")
    u, s, _ = deterministic_svd(m)
    if s[0] == 0.0:
        raise DegenerateMatrixError("rank_r_span of an all-zero matrix is undefined")
    if rule.explicit is not None:
        r = rule.explicit
        if r > min(m.shape):
            raise ValidationError(
                f"explicit rank {r} exceeds min(rows, cols) = {min(m.shape)}"
            )
    else:
        tol = max(m.shape) * np.finfo(np.float64).eps * s[0]
        nrank = int(np.count_nonzero(s > tol))
        energies = np.cumsum(s[:nrank] ** 2)
        r = int(np.searchsorted(energies, rule.energy * energies[-1], side="left")) + 1
    return u[:, :r].copy()


def random_orthonormal(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed matrix with orthonormal columns, rows >= cols."""
    if cols > rows:
        raise ValidationError(f"cannot fit {cols} orthonormal columns in {rows} rows")
    a = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(a)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs
