"""Class folds with disjoint train and test classes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .shapes import CLASSES


class FoldPlanError(ValueError):
    pass


@dataclass(frozen=True)
class Fold:
    train: tuple[str, ...]
    test: tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[Fold, ...]

    def fold(self, number: int) -> Fold:
        """Folds are numbered from 1."""
        if not 1 <= number <= len(self.folds):
            raise FoldPlanError(f"fold {number} outside 1..{len(self.folds)}")
        return self.folds[number - 1]

    def classes(self, number: int, split: str) -> tuple[str, ...]:
        fold = self.fold(number)
        if split == "train":
            return fold.train
        if split == "test":
            return fold.test
        raise FoldPlanError(f"split must be 'train' or 'test', got {split!r}")


def plan_folds(classes=CLASSES, n_folds: int = 4, seed: int | None = 0) -> FoldPlan:
    """Round-robin partition: every class is a test class in exactly one fold."""
    classes = list(classes)
    if n_folds < 2 or len(classes) % n_folds:
        raise FoldPlanError(f"{len(classes)} classes cannot be split evenly into {n_folds} folds")
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(classes))
        classes = [classes[i] for i in order]
    folds = []
    for f in range(n_folds):
        test = tuple(c for i, c in enumerate(classes) if i % n_folds == f)
        train = tuple(c for c in classes if c not in test)
        folds.append(Fold(train=train, test=test))
    return FoldPlan(tuple(folds))
