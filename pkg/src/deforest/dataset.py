"""Supervised samples from feature stacks and label grids."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .features import FeatureStack
from .raster import Grid, assert_aligned, format_number


class Sample(NamedTuple):
    pixel_index: tuple[int, int]
    x: np.ndarray
    y: int


@dataclass(frozen=True)
class NormParams:
    """Per-feature min/max fitted on training data."""

    names: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mins", np.asarray(self.mins, dtype=np.float64))
        object.__setattr__(self, "maxs", np.asarray(self.maxs, dtype=np.float64))
        for name, lo, hi in zip(self.names, self.mins, self.maxs):
            if not hi > lo:
                raise ValueError(f"feature {name!r} is constant on the training data (min == max == {lo})")

    @classmethod
    def fit(cls, x: np.ndarray, names: Sequence[str]) -> "NormParams":
        return cls(tuple(names), x.min(axis=0), x.max(axis=0))

    def apply(self, x: np.ndarray, clip: bool = True) -> np.ndarray:
        z = (np.asarray(x, dtype=np.float64) - self.mins) / (self.maxs - self.mins)
        return np.clip(z, 0.0, 1.0) if clip else z

    def invert(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * (self.maxs - self.mins) + self.mins

    def to_text(self) -> str:
        lines = ["feature min max"]
        for name, lo, hi in zip(self.names, self.mins, self.maxs):
            lines.append(f"{name} {format_number(lo)} {format_number(hi)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NormParams":
        rows = [ln.split() for ln in text.splitlines()[1:] if ln.strip()]
        return cls(tuple(r[0] for r in rows), [float(r[1]) for r in rows], [float(r[2]) for r in rows])


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Row-aligned arrays: ``pixels`` (n, 2) row/col, ``x`` (n, d), ``y`` (n,)."""

    feature_names: tuple[str, ...]
    pixels: np.ndarray
    x: np.ndarray
    y: np.ndarray
    norm: NormParams | None = field(default=None)

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if x.shape != (len(pixels), len(self.feature_names)):
            raise ValueError(
                f"x has shape {x.shape}, expected ({len(pixels)}, {len(self.feature_names)})"
            )
        if len(y) != len(pixels):
            raise ValueError("pixels, x and y must have the same number of rows")
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, i: int) -> Sample:
        r, c = self.pixels[i]
        return Sample((int(r), int(c)), self.x[i], int(self.y[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def take(self, index: np.ndarray) -> "SampleSet":
        return replace(self, pixels=self.pixels[index], x=self.x[index], y=self.y[index])

    @property
    def class_counts(self) -> tuple[int, int]:
        n1 = int(self.y.sum())
        return len(self.y) - n1, n1


def build_samples(stack: FeatureStack, labels: Grid) -> SampleSet:
    """One raw sample per pixel with a 0/1 label and data in every layer, row-major."""
    assert_aligned([*stack.layers, labels])
    labelled = labels.valid & np.isin(labels.cells, (0.0, 1.0))
    eligible = labelled & stack.valid
    if not eligible.any():
        raise ValueError("no eligible pixels: every pixel lacks a 0/1 label or has NoData features")
    rows, cols = np.nonzero(eligible)
    x = stack.values()[rows, cols]
    y = labels.cells[rows, cols].astype(np.int64)
    return SampleSet(stack.names, np.column_stack([rows, cols]), x, y)


def normalize(
    train: SampleSet, others: Sequence[SampleSet] = ()
) -> tuple[SampleSet, list[SampleSet], NormParams]:
    """Min-max scale to [0, 1] with parameters fitted on ``train`` only.

    Values in ``others`` outside the training range are clamped.
    """
    if len(train) == 0:
        raise ValueError("cannot fit normalization on an empty training set")
    norm = NormParams.fit(train.x, train.feature_names)
    scaled = [replace(s, x=norm.apply(s.x), norm=norm) for s in (train, *others)]
    return scaled[0], scaled[1:], norm


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def split(
    samples: SampleSet, test_fraction: float = 0.3, seed: int = 0, stratify: bool = False
) -> tuple[SampleSet, SampleSet]:
    """Seeded random train/test partition with ``round(test_fraction * n)`` test samples.

    With ``stratify`` each class is split separately so both sides keep the
    class ratio to within one sample.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(samples)
    if n < 2:
        raise ValueError(f"need at least 2 samples to split, got {n}")
    if min(samples.class_counts) == 0:
        raise ValueError("both classes must be present to split")
    rng = np.random.default_rng(seed)

    if stratify:
        test_parts, train_parts = [], []
        for cls in (0, 1):
            idx = np.flatnonzero(samples.y == cls)
            idx = idx[rng.permutation(len(idx))]
            k = _round_half_up(test_fraction * len(idx))
            if k == 0 or k == len(idx):
                raise ValueError(
                    f"class {cls} has {len(idx)} samples, too few to appear on both sides of the split"
                )
            test_parts.append(idx[:k])
            train_parts.append(idx[k:])
        test_idx = np.sort(np.concatenate(test_parts))
        train_idx = np.sort(np.concatenate(train_parts))
    else:
        k = _round_half_up(test_fraction * n)
        if k == 0 or k == n:
            raise ValueError(f"test_fraction {test_fraction} leaves one side empty for {n} samples")
        perm = rng.permutation(n)
        test_idx, train_idx = np.sort(perm[:k]), np.sort(perm[k:])
        for name, idx in (("train", train_idx), ("test", test_idx)):
            if len(np.unique(samples.y[idx])) < 2:
                raise ValueError(
                    f"{name} split contains a single class; retry with stratify=True (--stratify)"
                )
    return samples.take(train_idx), samples.take(test_idx)


def samples_to_text(samples: SampleSet) -> str:
    lines = [" ".join(["row", "col", *samples.feature_names, "label"])]
    for (r, c), xs, y in zip(samples.pixels.tolist(), samples.x.tolist(), samples.y.tolist()):
        lines.append(" ".join([str(r), str(c), *(format_number(v) for v in xs), str(y)]))
    return "\n".join(lines) + "\n"


def samples_from_text(text: str) -> SampleSet:
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    head, rows = lines[0], lines[1:]
    if head[:2] != ["row", "col"] or head[-1] != "label":
        raise ValueError("sample table header must be 'row col <features...> label'")
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(head))
    return SampleSet(tuple(head[2:-1]), data[:, :2], data[:, 2:-1], data[:, -1])


def save_samples(samples: SampleSet, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(samples_to_text(samples))


def load_samples(path: str | os.PathLike) -> SampleSet:
    with open(path, encoding="ascii") as fh:
        return samples_from_text(fh.read())
