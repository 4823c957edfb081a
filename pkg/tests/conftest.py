"""Shared fixtures: small schemas and planted instances sized for fast tests."""
import math

import numpy as np
import pytest

from marc.dataset import AttributeSchema, Sample, assemble
from marc.synthbench import GroundTruth, SynthSpec, default_spec, generate
from marc.trainer import ModelBundle, SolverConfig, TrainDiagnostics


def bundle_from_truth(truth: GroundTruth) -> ModelBundle:
    """Package planted factors as a model bundle, as if training had
    recovered them exactly. Lets reconstruction tests run against a known
    correct model."""
    f, n = truth.data.shape
    diag = TrainDiagnostics(
        iterations=0,
        converged=True,
        final_residual=0.0,
        final_residual_unmasked=0.0,
        lam_effective=1.0 / math.sqrt(max(f, n)),
        residual_history=[],
        residual_history_unmasked=[],
        mu_history=[],
    )
    return ModelBundle(
        schema=truth.schema,
        bases=[b.copy() for b in truth.bases],
        bank=truth.bank.copy(),
        individual=truth.individual.copy(),
        sparse_error=truth.sparse_error.copy(),
        diagnostics=diag,
        config=SolverConfig(),
    )


@pytest.fixture(scope="session")
def default_instance():
    """The stock two-attribute planted instance (expensive pieces of the
    suite share this one generation)."""
    return generate(default_spec())


@pytest.fixture(scope="session")
def small_instance():
    """A cut-down planted instance that trains in well under a second."""
    schema = AttributeSchema.of([("shape", ["round", "square"]),
                                 ("tint", ["warm", "cool", "none"])])
    spec = SynthSpec(schema=schema, dim=30, count=18, rank_g=2,
                     sparsity=0.04, missing_frac=0.1, noise_amp=5.0, seed=3)
    return generate(spec)


@pytest.fixture()
def tiny_training_set():
    """Four labeled vectors over one attribute, fully observed."""
    schema = AttributeSchema.of([("kind", ["a", "b"])])
    rng = np.random.default_rng(0)
    samples = [
        Sample(data=rng.standard_normal(6), labels={"kind": "a"}),
        Sample(data=rng.standard_normal(6), labels={"kind": "b"}),
        Sample(data=rng.standard_normal(6), labels={"kind": "a"}),
        Sample(data=rng.standard_normal(6), labels={"kind": "b"}),
    ]
    return assemble(schema, samples)
