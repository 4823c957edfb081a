"""Schema, sample, and training-set containers.

A dataset is a collection of column vectors, each labeled with exactly one
instantiation per attribute, plus a binary visibility mask. Assembly stacks
the columns into dense matrices and records, per attribute, which
instantiation every column carries.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered attributes, each with an ordered list of instantiation labels.

    An empty schema (no attributes) is legal and degenerates the model to a
    plain low-rank-plus-sparse decomposition.
    """

    attributes: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self) -> None:
        names = [name for name, _ in self.attributes]
        if len(set(names)) != len(names):
            raise ValidationError("attribute names must be unique")
        for name, labels in self.attributes:
            if not name:
                raise ValidationError("attribute names must be non-empty")
            if len(labels) < 1:
                raise ValidationError(f"attribute '{name}' has no instantiations")
            if len(set(labels)) != len(labels):
                raise ValidationError(f"attribute '{name}' has duplicate instantiation labels")

    @classmethod
    def of(cls, pairs: Sequence[tuple[str, Sequence[str]]]) -> "AttributeSchema":
        return cls(tuple((name, tuple(labels)) for name, labels in pairs))

    @property
    def count(self) -> int:
        """Number of attributes."""
        return len(self.attributes)

    def name(self, attr: int) -> str:
        return self.attributes[attr][0]

    def labels(self, attr: int) -> tuple[str, ...]:
        return self.attributes[attr][1]

    def size(self, attr: int) -> int:
        """Number of instantiations of one attribute."""
        return len(self.attributes[attr][1])

    def attr_index(self, name: str) -> int:
        for i, (n, _) in enumerate(self.attributes):
            if n == name:
                return i
        raise ValidationError(f"unknown attribute '{name}'")

    def inst_index(self, attr: int, label: str) -> int:
        labels = self.labels(attr)
        try:
            return labels.index(label)
        except ValueError:
            raise ValidationError(
                f"unknown instantiation '{label}' for attribute '{self.name(attr)}'"
            ) from None

    def to_dict(self) -> dict:
        return {
            "attributes": [
                {"name": name, "instantiations": list(labels)}
                for name, labels in self.attributes
            ]
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AttributeSchema":
        try:
            pairs = [(a["name"], tuple(a["instantiations"])) for a in d["attributes"]]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed schema mapping: {exc}") from exc
        return cls(tuple(pairs))


@dataclass(frozen=True)
class Sample:
    """One data vector with its visibility mask and attribute labels.

    `mask` may be None for a fully observed sample. `labels` maps attribute
    name to instantiation label and must cover the schema exactly.
    """

    data: np.ndarray
    labels: Mapping[str, str]
    mask: np.ndarray | None = None


def _as_binary(arr: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValidationError(f"{what} must be strictly binary (0/1 entries)")
    return arr


@dataclass(frozen=True)
class TrainingSet:
    """Assembled training data.

    X and W are dense float64 matrices of shape (dim, count). For each
    attribute, `label_index` holds a length-`count` int array giving the
    (0-based) instantiation carried by every column.
    """

    schema: AttributeSchema
    X: np.ndarray
    W: np.ndarray
    label_index: tuple[np.ndarray, ...]
    visible: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValidationError("X must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(X)):
            raise ValidationError("X contains non-finite entries")
        W = _as_binary(self.W, "mask matrix W")
        if W.shape != X.shape:
            raise ValidationError(f"W shape {W.shape} does not match X shape {X.shape}")
        if len(self.label_index) != self.schema.count:
            raise ValidationError("label_index must have one entry per schema attribute")
        idx = []
        for i, li in enumerate(self.label_index):
            li = np.asarray(li, dtype=np.int64)
            if li.shape != (X.shape[1],):
                raise ValidationError(
                    f"label_index for attribute '{self.schema.name(i)}' must have "
                    f"length {X.shape[1]}"
                )
            m = self.schema.size(i)
            if li.size and (li.min() < 0 or li.max() >= m):
                raise ValidationError(
                    f"label_index for attribute '{self.schema.name(i)}' out of range"
                )
            counts = np.bincount(li, minlength=m)
            if np.any(counts == 0):
                j = int(np.flatnonzero(counts == 0)[0])
                raise ValidationError(
                    f"instantiation '{self.schema.labels(i)[j]}' of attribute "
                    f"'{self.schema.name(i)}' has no samples"
                )
            idx.append(li)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "W", np.ascontiguousarray(W))
        object.__setattr__(self, "label_index", tuple(idx))
        object.__setattr__(self, "visible", self.W != 0.0)

    @property
    def dim(self) -> int:
        return self.X.shape[0]

    @property
    def count(self) -> int:
        return self.X.shape[1]


def assemble(schema: AttributeSchema, samples: Sequence[Sample]) -> TrainingSet:
    """Stack labeled samples into a TrainingSet.

    Raises ValidationError naming the offending sample on any mismatch:
    inconsistent dimension, non-binary mask, missing/unknown labels, or an
    instantiation that ends up with zero columns.
    """
    if not samples:
        raise ValidationError("cannot assemble an empty sample list")
    dim = None
    cols, mask_cols = [], []
    label_cols: list[list[int]] = [[] for _ in range(schema.count)]
    for n, sample in enumerate(samples):
        where = f"sample {n}"
        x = np.asarray(sample.data, dtype=np.float64).reshape(-1)
        if dim is None:
            dim = x.size
        elif x.size != dim:
            raise ValidationError(f"{where}: dimension {x.size} does not match {dim}")
        if x.size < 1:
            raise ValidationError(f"{where}: empty data vector")
        if not np.all(np.isfinite(x)):
            raise ValidationError(f"{where}: non-finite entries")
        if sample.mask is None:
            w = np.ones(dim)
        else:
            w = _as_binary(np.asarray(sample.mask).reshape(-1), f"{where}: mask")
            if w.size != dim:
                raise ValidationError(f"{where}: mask length {w.size} does not match {dim}")
        extra = set(sample.labels) - {name for name, _ in schema.attributes}
        if extra:
            raise ValidationError(f"{where}: unknown attribute '{sorted(extra)[0]}'")
        for i in range(schema.count):
            name = schema.name(i)
            if name not in sample.labels:
                raise ValidationError(f"{where}: missing label for attribute '{name}'")
            try:
                label_cols[i].append(schema.inst_index(i, sample.labels[name]))
            except ValidationError as exc:
                raise ValidationError(f"{where}: {exc}") from None
        cols.append(x)
        mask_cols.append(w)
    X = np.column_stack(cols)
    W = np.column_stack(mask_cols)
    return TrainingSet(schema, X, W, tuple(np.asarray(c, dtype=np.int64) for c in label_cols))


def columns_of(ts: TrainingSet, attr: int, inst: int) -> np.ndarray:
    """Ascending column indices carrying instantiation `inst` of `attr`."""
    if not 0 <= attr < ts.schema.count:
        raise ValidationError(f"attribute index {attr} out of range")
    if not 0 <= inst < ts.schema.size(attr):
        raise ValidationError(
            f"instantiation index {inst} out of range for attribute '{ts.schema.name(attr)}'"
        )
    return np.flatnonzero(ts.label_index[attr] == inst)


@dataclass
class SelectorBank:
    """Per-attribute selector columns.

    For attribute i the entry is an (M_i, M_i) matrix whose column j is the
    selector shared by every column carrying instantiation j.
    """

    selectors: list[np.ndarray]

    @classmethod
    def zeros(cls, schema: AttributeSchema) -> "SelectorBank":
        return cls([np.zeros((schema.size(i), schema.size(i))) for i in range(schema.count)])

    def copy(self) -> "SelectorBank":
        return SelectorBank([s.copy() for s in self.selectors])


def materialize_h(bank: SelectorBank, ts: TrainingSet, attr: int) -> np.ndarray:
    """Expand attribute `attr`'s selectors to one column per training sample.

    Column n of the result is bank column `label_index[attr][n]`, copied
    bitwise, so columns sharing an instantiation are identical.
    """
    if len(bank.selectors) != ts.schema.count:
        raise ValidationError("selector bank does not match the schema")
    if not 0 <= attr < ts.schema.count:
        raise ValidationError(f"attribute index {attr} out of range")
    sel = bank.selectors[attr]
    m = ts.schema.size(attr)
    if sel.shape != (m, m):
        raise ValidationError(
            f"selector matrix for attribute '{ts.schema.name(attr)}' must be {(m, m)}, "
            f"got {sel.shape}"
        )
    return sel[:, ts.label_index[attr]]
