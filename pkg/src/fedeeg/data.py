"""Containers for per-hospital segment collections and their splits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ClientDataset:
    """One client's labeled segments: an (n, d) matrix plus {0,1} labels."""

    name: str
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2:
            raise ValueError(f"inputs must be 2-d, got shape {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match {self.inputs.shape[0]} rows"
            )
        if self.n < 1:
            raise ValueError(f"dataset {self.name!r} is empty")
        if not np.isin(np.asarray(self.labels), (0, 1)).all():
            raise ValueError(f"dataset {self.name!r} has labels outside {{0,1}}")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def take(self, index: np.ndarray | slice) -> "ClientDataset":
        return ClientDataset(self.name, self.inputs[index], self.labels[index])

    def with_inputs(self, inputs: np.ndarray) -> "ClientDataset":
        return ClientDataset(self.name, inputs, self.labels)


@dataclass(frozen=True)
class ClientSplit:
    """Train/validation/test partition of one client's data."""

    name: str
    train: ClientDataset
    val: ClientDataset
    test: ClientDataset

    def map_inputs(self, fn) -> "ClientSplit":
        """Apply the same input transform to every partition."""
        return ClientSplit(
            self.name,
            self.train.with_inputs(fn(self.train.inputs)),
            self.val.with_inputs(fn(self.val.inputs)),
            self.test.with_inputs(fn(self.test.inputs)),
        )


def split_dataset(ds: ClientDataset, n_val: int, n_test: int) -> ClientSplit:
    """Contiguous train/val/test split; rows are assumed already shuffled."""
    if n_val < 1 or n_test < 1:
        raise ValueError("val and test partitions must be non-empty")
    n_train = ds.n - n_val - n_test
    if n_train < 1:
        raise ValueError(
            f"dataset {ds.name!r} has {ds.n} rows, too few for "
            f"val={n_val} and test={n_test}"
        )
    return ClientSplit(
        ds.name,
        ds.take(slice(0, n_train)),
        ds.take(slice(n_train, n_train + n_val)),
        ds.take(slice(n_train + n_val, ds.n)),
    )
