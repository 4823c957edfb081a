"""ADMM training of the shared / individual / sparse decomposition.

The model for a training matrix X (dim x count) with visibility mask W is

    X = sum_i F_i H_i + G + E

where each basis F_i has orthonormal columns, the columns of H_i are drawn
from a small per-attribute selector bank (columns sharing an instantiation
share a selector), G is low rank, and E is sparse on the visible support
while absorbing the residual exactly on hidden entries.

The solver is a scaled-dual augmented-Lagrangian loop: per attribute a
selector step and an orthonormal basis step (Gauss-Seidel, always using the
latest values), then a singular-value-threshold step for G, a masked
soft-threshold step for E, a dual ascent step, and a geometric penalty
increase capped at mu_max.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import AttributeSchema, SelectorBank, TrainingSet, columns_of, materialize_h
from .errors import NumericalError, ValidationError
from .proxops import procrustes, random_orthonormal, shrink_matrix, svt


@dataclass(frozen=True)
class SolverConfig:
    """Training hyperparameters.

    lam is the sparsity weight; None selects 1/sqrt(max(dim, count)) at
    train time. mu0_norm chooses the norm of X used to scale the initial
    penalty: "spectral" (default) or "frobenius".
    """

    lam: float | None = None
    eps: float = 1e-7
    t_max: int = 1000
    rho: float = 1.2
    mu_max: float = 1e7
    mu0_scale: float = 25.0
    mu0_norm: str = "spectral"
    seed: int = 0

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
        if self.mu0_norm not in ("spectral", "frobenius"):
            raise ValidationError(
                f"mu0_norm must be 'spectral' or 'frobenius', got '{self.mu0_norm}'"
            )

    def effective_lam(self, dim: int, count: int) -> float:
        if self.lam is not None:
            return float(self.lam)
        return 1.0 / math.sqrt(max(dim, count))


@dataclass
class TrainDiagnostics:
    """Per-run convergence record. Histories have one entry per iteration."""

    iterations: int
    converged: bool
    final_residual: float
    final_residual_unmasked: float
    lam_effective: float
    residual_history: list[float]
    residual_history_unmasked: list[float]
    mu_history: list[float]


@dataclass
class TrainState:
    """Mutable solver state; updated in place by the step functions."""

    config: SolverConfig
    bases: list[np.ndarray]
    bank: SelectorBank
    individual: np.ndarray
    sparse_error: np.ndarray
    dual: np.ndarray
    mu: float
    lam: float
    t: int = 0
    residual_history: list[float] = field(default_factory=list)
    residual_history_unmasked: list[float] = field(default_factory=list)
    mu_history: list[float] = field(default_factory=list)


@dataclass
class ModelBundle:
    """Trained model: schema, bases, selector bank, individual and sparse
    parts of the training matrix, diagnostics, and the config that made it.

    `span` is an optional cached orthonormal basis of the individual
    component, filled in lazily by the reconstructor.
    """

    schema: AttributeSchema
    bases: list[np.ndarray]
    bank: SelectorBank
    individual: np.ndarray
    sparse_error: np.ndarray
    diagnostics: TrainDiagnostics
    config: SolverConfig
    span: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.individual.shape[0]


def shared_component(state: TrainState, ts: TrainingSet, exclude: int | None = None) -> np.ndarray:
    """sum_k F_k H_k over attributes, optionally skipping one.

    Terms are added in schema order; callers that need bitwise-identical
    recomputation (tests, invariant checks) get it by calling this again on
    an unchanged state.
    """
    total = np.zeros_like(ts.X)
    for k in range(ts.schema.count):
        if k == exclude:
            continue
        total += state.bases[k] @ materialize_h(state.bank, ts, k)
    return total


def attribute_residual(state: TrainState, ts: TrainingSet, attr: int) -> np.ndarray:
    """What attribute `attr` must explain: X minus every other component,
    plus the scaled dual."""
    return ts.X - shared_component(state, ts, exclude=attr) \
        - state.individual - state.sparse_error + state.dual / state.mu


def error_residual(state: TrainState, ts: TrainingSet) -> np.ndarray:
    """Residual handed to the sparse step: X - sum F_k H_k - G + dual/mu."""
    return ts.X - shared_component(state, ts) - state.individual + state.dual / state.mu


def update_h(
    state: TrainState,
    ts: TrainingSet,
    attr: int,
    inst: int,
    residual: np.ndarray | None = None,
) -> np.ndarray:
    """Selector step: project the mean residual of the instantiation's
    columns onto the attribute's current basis.

    The precomputed `residual` must be attribute_residual(state, ts, attr);
    it is shared across an attribute's instantiations because the excluded
    sum drops all of attribute `attr`.
    """
    if residual is None:
        residual = attribute_residual(state, ts, attr)
    cols = columns_of(ts, attr, inst)
    selector = state.bases[attr].T @ residual[:, cols].mean(axis=1)
    state.bank.selectors[attr][:, inst] = selector
    return selector


def update_f(
    state: TrainState,
    ts: TrainingSet,
    attr: int,
    residual: np.ndarray | None = None,
) -> np.ndarray:
    """Basis step: orthonormal factor closest to the residual in the
    selector directions, via the Procrustes projection of residual @ H.T."""
    if residual is None:
        residual = attribute_residual(state, ts, attr)
    h = materialize_h(state.bank, ts, attr)
    state.bases[attr] = procrustes(residual @ h.T)
    return state.bases[attr]


def update_g(state: TrainState, ts: TrainingSet) -> np.ndarray:
    """Individual step: singular-value threshold at 1/mu of what the shared
    and sparse parts leave unexplained."""
    residual = ts.X - shared_component(state, ts) - state.sparse_error + state.dual / state.mu
    state.individual = svt(residual, 1.0 / state.mu)
    return state.individual


def update_e(state: TrainState, ts: TrainingSet) -> np.ndarray:
    """Sparse step: soft threshold on visible entries; hidden entries take
    the residual unchanged, which zeroes the augmented residual there."""
    residual = error_residual(state, ts)
    state.sparse_error = np.where(
        ts.visible, shrink_matrix(residual, state.lam / state.mu), residual
    )
    return state.sparse_error


def update_duals(state: TrainState, ts: TrainingSet) -> None:
    """Dual ascent on the coupling constraint, then the capped geometric
    penalty increase. mu never decreases."""
    gap = ts.X - shared_component(state, ts) - state.individual - state.sparse_error
    state.dual = state.dual + state.mu * gap
    state.mu = min(state.config.rho * state.mu, state.config.mu_max)


def normalized_residual(state: TrainState, ts: TrainingSet) -> float:
    """Masked convergence measure:
    ||X - sum F_k H_k - G - W.*E||_F / ||X||_F (0 for an all-zero X)."""
    denom = float(np.linalg.norm(ts.X))
    if denom == 0.0:
        return 0.0
    gap = ts.X - shared_component(state, ts) - state.individual - ts.W * state.sparse_error
    return float(np.linalg.norm(gap)) / denom


def constraint_residual(state: TrainState, ts: TrainingSet) -> float:
    """Unmasked counterpart of `normalized_residual` (E enters everywhere)."""
    denom = float(np.linalg.norm(ts.X))
    if denom == 0.0:
        return 0.0
    gap = ts.X - shared_component(state, ts) - state.individual - state.sparse_error
    return float(np.linalg.norm(gap)) / denom


Observer = Callable[[TrainState, int], None]


def _zero_bundle(ts: TrainingSet, config: SolverConfig, lam: float) -> ModelBundle:
    mu0 = config.mu0_scale / 1.0  # norm of the zero matrix taken as 1
    diag = TrainDiagnostics(
        iterations=0,
        converged=True,
        final_residual=0.0,
        final_residual_unmasked=0.0,
        lam_effective=lam,
        residual_history=[],
        residual_history_unmasked=[],
        mu_history=[mu0],
    )
    bases = [np.zeros((ts.dim, ts.schema.size(i))) for i in range(ts.schema.count)]
    return ModelBundle(
        schema=ts.schema,
        bases=bases,
        bank=SelectorBank.zeros(ts.schema),
        individual=np.zeros_like(ts.X),
        sparse_error=np.zeros_like(ts.X),
        diagnostics=diag,
        config=config,
    )


def train(
    ts: TrainingSet,
    config: SolverConfig = SolverConfig(),
    observer: Observer | None = None,
) -> ModelBundle:
    """Run the training loop until the masked residual drops below eps or
    t_max iterations elapse.

    `observer`, if given, is called once per iteration after the sparse step
    (duals and penalty still at their current values) with (state, t).
    Non-convergence is reported in diagnostics, not raised; a non-finite
    residual raises NumericalError with the iteration index.
    """
    config.validate()
    lam = config.effective_lam(ts.dim, ts.count)
    if float(np.linalg.norm(ts.X)) == 0.0:
        return _zero_bundle(ts, config, lam)

    if config.mu0_norm == "spectral":
        mu0 = config.mu0_scale / float(np.linalg.norm(ts.X, 2))
    else:
        mu0 = config.mu0_scale / float(np.linalg.norm(ts.X))

    rng = np.random.default_rng(config.seed)
    state = TrainState(
        config=config,
        bases=[random_orthonormal(ts.dim, ts.schema.size(i), rng) for i in range(ts.schema.count)],
        bank=SelectorBank.zeros(ts.schema),
        individual=np.zeros_like(ts.X),
        sparse_error=np.zeros_like(ts.X),
        dual=np.zeros_like(ts.X),
        mu=mu0,
        lam=lam,
    )

    converged = False
    res_masked = res_unmasked = float("inf")
    for t in range(config.t_max):
        state.mu_history.append(state.mu)
        for i in range(ts.schema.count):
            residual = attribute_residual(state, ts, i)
            for j in range(ts.schema.size(i)):
                update_h(state, ts, i, j, residual=residual)
            update_f(state, ts, i, residual=residual)
        update_g(state, ts)
        update_e(state, ts)
        res_masked = normalized_residual(state, ts)
        res_unmasked = constraint_residual(state, ts)
        if not (np.isfinite(res_masked) and np.isfinite(res_unmasked)):
            raise NumericalError(f"training diverged at iteration {t}: non-finite residual")
        state.residual_history.append(res_masked)
        state.residual_history_unmasked.append(res_unmasked)
        if observer is not None:
            observer(state, t)
        update_duals(state, ts)
        state.t = t + 1
        if res_masked <= config.eps:
            converged = True
            break

    diag = TrainDiagnostics(
        iterations=state.t,
        converged=converged,
        final_residual=res_masked,
        final_residual_unmasked=res_unmasked,
        lam_effective=lam,
        residual_history=state.residual_history,
        residual_history_unmasked=state.residual_history_unmasked,
        mu_history=state.mu_history,
    )
    return ModelBundle(
        schema=ts.schema,
        bases=state.bases,
        bank=state.bank,
        individual=state.individual,
        sparse_error=state.sparse_error,
        diagnostics=diag,
        config=config,
    )
