"""ADMM reconstruction of single vectors against a trained model.

A test vector y (with binary visibility mask w_y) is decomposed as

    y = sum_i F_i h_i + K w + e

where the F_i are the trained bases, K is an orthonormal basis of the
trained individual component, and e is sparse on visible entries while
absorbing hidden entries exactly. Completion solves every selector h_i
freely; transfer pins chosen attributes to trained selectors and re-solves
the remaining variables jointly around them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .dataset import AttributeSchema
from .errors import DegenerateMatrixError, NumericalError, ValidationError
from .proxops import RankRule, rank_r_span, shrink_matrix
from .trainer import ModelBundle


@dataclass(frozen=True)
class ReconConfig:
    """Reconstruction hyperparameters. lam = None selects 1/sqrt(dim).

    rank_rule picks the width of the individual span K; use_individual=False
    drops K entirely (for models whose individual part is degenerate or
    unwanted)."""

    lam: float | None = None
    eps: float = 1e-7
    t_max: int = 1000
    rho: float = 1.2
    mu_max: float = 1e7
    mu0_scale: float = 25.0
    rank_rule: RankRule = field(default_factory=lambda: RankRule.energy_fraction(0.99))
    use_individual: bool = True

    def validate(self) -> None:
        if self.lam is not None and not (np.isfinite(self.lam) and self.lam > 0):
            raise ValidationError(f"lam must be positive, got {self.lam}")
        if not (np.isfinite(self.eps) and self.eps > 0):
            raise ValidationError(f"eps must be positive, got {self.eps}")
        if self.t_max < 1:
            raise ValidationError(f"t_max must be >= 1, got {self.t_max}")
        if not (np.isfinite(self.rho) and self.rho > 1):
            raise ValidationError(f"rho must be > 1, got {self.rho}")
        if not (np.isfinite(self.mu_max) and self.mu_max > 0):
            raise ValidationError(f"mu_max must be positive, got {self.mu_max}")
        if not (np.isfinite(self.mu0_scale) and self.mu0_scale > 0):
            raise ValidationError(f"mu0_scale must be positive, got {self.mu0_scale}")


@dataclass(frozen=True)
class TransferSpec:
    """Per-attribute mode: None solves the selector freely, an instantiation
    index pins it to the trained selector for that instantiation."""

    pinned: tuple[int | None, ...]

    @classmethod
    def all_free(cls, schema: AttributeSchema) -> "TransferSpec":
        return cls(tuple(None for _ in range(schema.count)))

    @classmethod
    def targets(cls, schema: AttributeSchema, by_name: Mapping[str, str]) -> "TransferSpec":
        """Pin the named attributes to the named instantiations; the rest
        stay free. Unknown names raise ValidationError."""
        modes: list[int | None] = [None] * schema.count
        for name, label in by_name.items():
            i = schema.attr_index(name)
            modes[i] = schema.inst_index(i, label)
        return cls(tuple(modes))


@dataclass
class ReconDiagnostics:
    iterations: int
    converged: bool
    final_residual: float
    residual_history: list[float]
    mu_history: list[float]


@dataclass
class ReconResult:
    """Solved components: per-attribute selectors, coefficients on the
    individual span, the sparse error, and the synthesized reconstruction
    (selectors and span coefficients only; the error is excluded)."""

    selectors: list[np.ndarray]
    indiv_coeffs: np.ndarray
    sparse_error: np.ndarray
    reconstruction: np.ndarray
    diagnostics: ReconDiagnostics


@dataclass
class ReconState:
    """Mutable reconstruction state, exposed to observers per iteration."""

    selectors: list[np.ndarray]
    indiv_coeffs: np.ndarray
    sparse_error: np.ndarray
    dual: np.ndarray
    mu: float
    t: int = 0


ReconObserver = Callable[[ReconState, int], None]


def build_span(bundle: ModelBundle, rule: RankRule | None = None) -> np.ndarray:
    """Orthonormal basis of the trained individual component, cached on the
    bundle. An identically zero individual part has no span; either pass an
    explicit rank against a nonzero component or reconstruct with
    use_individual=False."""
    if rule is None:
        rule = RankRule.energy_fraction(0.99)
    if not np.any(bundle.individual):
        raise DegenerateMatrixError(
            "the trained individual component is identically zero; "
            "pass an explicit rank or set use_individual=False"
        )
    span = rank_r_span(bundle.individual, rule)
    bundle.span = span
    return span


def _check_vector(y: np.ndarray, dim: int, name: str) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size != dim:
        raise ValidationError(f"{name} has length {y.size}, expected {dim}")
    return y


def reconstruct(
    y: np.ndarray,
    w_y: np.ndarray | None,
    bundle: ModelBundle,
    spec: TransferSpec | None = None,
    config: ReconConfig = ReconConfig(),
    observer: ReconObserver | None = None,
) -> ReconResult:
    """Solve the per-vector decomposition by ADMM.

    Pinned selectors are copied from the trained bank before the loop and
    never touched, so they come back bitwise identical. Non-convergence is
    flagged in diagnostics, not raised.
    """
    config.validate()
    dim = bundle.dim
    y = _check_vector(y, dim, "input vector")
    if not np.all(np.isfinite(y)):
        raise ValidationError("input vector contains non-finite entries")
    if w_y is None:
        w_y = np.ones(dim)
    w_y = _check_vector(w_y, dim, "input mask")
    if not np.all((w_y == 0.0) | (w_y == 1.0)):
        raise ValidationError("input mask must be strictly binary (0/1 entries)")
    if spec is None:
        spec = TransferSpec.all_free(bundle.schema)
    if len(spec.pinned) != bundle.schema.count:
        raise ValidationError("transfer spec does not cover the schema")
    for i, mode in enumerate(spec.pinned):
        if mode is not None and not 0 <= mode < bundle.schema.size(i):
            raise ValidationError(
                f"pinned instantiation {mode} out of range for attribute "
                f"'{bundle.schema.name(i)}'"
            )

    if config.use_individual:
        if bundle.span is not None:
            span = bundle.span
        else:
            span = build_span(bundle, config.rank_rule)
    else:
        span = np.zeros((dim, 0))

    bases = bundle.bases
    j_count = bundle.schema.count
    selectors = [
        bundle.bank.selectors[i][:, mode].copy() if mode is not None
        else np.zeros(bundle.schema.size(i))
        for i, mode in enumerate(spec.pinned)
    ]
    free = [i for i, mode in enumerate(spec.pinned) if mode is None]

    y_norm = float(np.linalg.norm(y))
    if y_norm == 0.0:
        synthesis = np.zeros(dim)
        for i in range(j_count):
            synthesis += bases[i] @ selectors[i]
        diag = ReconDiagnostics(0, True, 0.0, [], [])
        return ReconResult(
            selectors=selectors,
            indiv_coeffs=np.zeros(span.shape[1]),
            sparse_error=np.zeros(dim),
            reconstruction=synthesis,
            diagnostics=diag,
        )

    lam = config.lam if config.lam is not None else 1.0 / math.sqrt(dim)
    state = ReconState(
        selectors=selectors,
        indiv_coeffs=np.zeros(span.shape[1]),
        sparse_error=np.zeros(dim),
        dual=np.zeros(dim),
        mu=config.mu0_scale / y_norm,
    )
    visible = w_y != 0.0

    def synth(exclude: int | None = None) -> np.ndarray:
        total = np.zeros(dim)
        for k in range(j_count):
            if k == exclude:
                continue
            total += bases[k] @ state.selectors[k]
        return total

    residual_history: list[float] = []
    mu_history: list[float] = []
    converged = False
    res = float("inf")
    for t in range(config.t_max):
        mu_history.append(state.mu)
        for i in free:
            target = y - synth(exclude=i) - span @ state.indiv_coeffs \
                - state.sparse_error + state.dual / state.mu
            state.selectors[i] = bases[i].T @ target
        shared = synth()
        if span.shape[1]:
            state.indiv_coeffs = span.T @ (
                y - shared - state.sparse_error + state.dual / state.mu
            )
        indiv = span @ state.indiv_coeffs
        residual = y - shared - indiv + state.dual / state.mu
        shrunk = shrink_matrix(residual[:, None], lam / state.mu)[:, 0]
        state.sparse_error = np.where(visible, shrunk, residual)
        gap = y - shared - indiv - state.sparse_error
        res = float(np.linalg.norm(gap)) / y_norm
        if not np.isfinite(res):
            raise NumericalError(f"reconstruction diverged at iteration {t}: non-finite residual")
        residual_history.append(res)
        if observer is not None:
            observer(state, t)
        state.dual = state.dual + state.mu * gap
        state.mu = min(config.rho * state.mu, config.mu_max)
        state.t = t + 1
        if res <= config.eps:
            converged = True
            break

    diag = ReconDiagnostics(
        iterations=state.t,
        converged=converged,
        final_residual=res,
        residual_history=residual_history,
        mu_history=mu_history,
    )
    return ReconResult(
        selectors=state.selectors,
        indiv_coeffs=state.indiv_coeffs,
        sparse_error=state.sparse_error,
        reconstruction=shared + indiv,
        diagnostics=diag,
    )


def complete(
    y: np.ndarray,
    w_y: np.ndarray | None,
    bundle: ModelBundle,
    config: ReconConfig = ReconConfig(),
) -> np.ndarray:
    """Fill in a partially observed vector: solve every selector freely and
    return the synthesized reconstruction."""
    spec = TransferSpec.all_free(bundle.schema)
    return reconstruct(y, w_y, bundle, spec, config).reconstruction


def transfer(
    y: np.ndarray,
    w_y: np.ndarray | None,
    bundle: ModelBundle,
    targets: Mapping[str, str],
    config: ReconConfig = ReconConfig(),
    post_hoc: bool = False,
) -> np.ndarray:
    """Reconstruct `y` with the target attributes pinned to trained
    instantiations.

    Default: joint re-solve around the pinned selectors. With post_hoc=True
    the vector is first completed freely, then the pinned selectors are
    substituted into the synthesis; exposed for comparing the two routes.
    """
    spec = TransferSpec.targets(bundle.schema, targets)
    if not post_hoc:
        return reconstruct(y, w_y, bundle, spec, config).reconstruction
    result = reconstruct(y, w_y, bundle, TransferSpec.all_free(bundle.schema), config)
    synthesis = np.zeros(bundle.dim)
    for i, mode in enumerate(spec.pinned):
        sel = bundle.bank.selectors[i][:, mode] if mode is not None else result.selectors[i]
        synthesis += bundle.bases[i] @ sel
    if result.indiv_coeffs.size:
        span = bundle.span if bundle.span is not None else build_span(bundle, config.rank_rule)
        synthesis += span @ result.indiv_coeffs
    return synthesis
