"""Dense value types shared across modules.

Grids are float64 numpy arrays indexed ``[row, column]`` with pixel centres at
integer coordinates, origin top-left, x right and y down.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ArgumentError, DegenerateConfigurationError


def normalize_homography(H: np.ndarray) -> np.ndarray:
    """Scale so the bottom-right entry is 1 when it is nonzero."""
    matrix = np.asarray(H, dtype=np.float64)
    corner = matrix[..., 2, 2]
    scale = np.where(np.abs(corner) > 1e-15, corner, 1.0)
    return matrix / np.asarray(scale)[..., None, None]


def check_homography(H: np.ndarray) -> np.ndarray:
    matrix = np.asarray(H, dtype=np.float64)
    if matrix.shape != (3, 3) or not np.all(np.isfinite(matrix)):
        raise ArgumentError("homography must be a finite 3x3 matrix")
    det = float(np.linalg.det(matrix))
    if abs(det) <= 1e-12:
        raise DegenerateConfigurationError("homography is not invertible", determinant=det)
    return matrix


@dataclass(frozen=True)
class FlowField:
    """Dense displacement (u, v) in pixels from frame a toward frame b.

    ``valid`` is an optional boolean grid; pixels outside it carry no label
    (e.g. unknown-flow sentinels in a ground-truth file).
    """

    u: np.ndarray
    v: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise ArgumentError("u and v must be 2-D grids of identical shape", u_shape=u.shape, v_shape=v.shape)
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            bad = np.argwhere(~(np.isfinite(u) & np.isfinite(v)))
            row, col = (int(i) for i in bad[0])
            raise ArgumentError("flow values must be finite", pixel=(col, row), count=len(bad))
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        if self.valid is not None:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != u.shape:
                raise ArgumentError("valid mask shape does not match the field", mask_shape=valid.shape)
            object.__setattr__(self, "valid", valid)

    @classmethod
    def zeros(cls, width: int, height: int) -> "FlowField":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @classmethod
    def from_stack(cls, uv: np.ndarray, valid: Optional[np.ndarray] = None) -> "FlowField":
        array = np.asarray(uv, dtype=np.float64)
        return cls(array[..., 0], array[..., 1], valid)

    @property
    def width(self) -> int:
        return int(self.u.shape[1])

    @property
    def height(self) -> int:
        return int(self.u.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def stack(self) -> np.ndarray:
        return np.stack([self.u, self.v], axis=-1)

    def validity(self) -> np.ndarray:
        if self.valid is None:
            return np.ones(self.shape, dtype=bool)
        return self.valid

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v)))


@dataclass(frozen=True)
class FusionMap:
    """Per-pixel residual-flow weight for one pyramid level, bounded by [lower, upper]."""

    values: np.ndarray
    level: int
    lower: float
    upper: float

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ArgumentError("fusion map must be a 2-D grid", shape=values.shape)
        if not self.lower <= self.upper:
            raise ArgumentError("fusion map bounds are inverted", lower=self.lower, upper=self.upper)
        if values.size and (values.min() < self.lower or values.max() > self.upper):
            raise ArgumentError(
                "fusion map values fall outside their bounds",
                level=self.level,
                lower=self.lower,
                upper=self.upper,
                observed_min=float(values.min()),
                observed_max=float(values.max()),
            )
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(self.values.shape[0]), int(self.values.shape[1]))


@dataclass(frozen=True)
class HomographyArray:
    """Per-row-patch homographies for one frame pair, top patch first."""

    homographies: np.ndarray
    width: int
    height: int

    def __post_init__(self) -> None:
        stack = np.asarray(self.homographies, dtype=np.float64)
        if stack.ndim == 2:
            stack = stack[None]
        if stack.ndim != 3 or stack.shape[1:] != (3, 3) or stack.shape[0] < 1:
            raise ArgumentError("homography array must be a non-empty stack of 3x3 matrices", shape=stack.shape)
        if self.width <= 0 or self.height <= 0:
            raise ArgumentError("image size must be positive", width=self.width, height=self.height)
        if stack.shape[0] > self.height:
            raise ArgumentError("more patches than image rows", patches=stack.shape[0], height=self.height)
        for index, matrix in enumerate(stack):
            try:
                check_homography(matrix)
            except (ArgumentError, DegenerateConfigurationError) as exc:
                exc.context["patch"] = index
                raise
        object.__setattr__(self, "homographies", normalize_homography(stack))

    @classmethod
    def single(cls, H: np.ndarray, width: int, height: int) -> "HomographyArray":
        return cls(np.asarray(H, dtype=np.float64)[None], width, height)

    @property
    def patch_count(self) -> int:
        return int(self.homographies.shape[0])

    def __len__(self) -> int:
        return self.patch_count

    def __getitem__(self, index: int) -> np.ndarray:
        return self.homographies[index]

    def patch_bounds(self) -> List[Tuple[int, int]]:
        """Row ranges [start, stop) of each patch."""
        edges = np.ceil(np.arange(self.patch_count + 1) * self.height / self.patch_count).astype(int)
        return [(int(edges[n]), int(edges[n + 1])) for n in range(self.patch_count)]

    def patch_centers(self) -> np.ndarray:
        """Centre row of each patch in pixel-centre coordinates."""
        n = np.arange(self.patch_count, dtype=np.float64)
        return (n + 0.5) * self.height / self.patch_count - 0.5

    def patch_of_rows(self, rows: np.ndarray) -> np.ndarray:
        """Patch index of each (possibly fractional) row, clamped to the array."""
        index = np.floor(np.asarray(rows, dtype=np.float64) * self.patch_count / self.height)
        return np.clip(index, 0, self.patch_count - 1).astype(int)


@dataclass(frozen=True)
class Correspondence:
    """Point p in frame a matched to q in frame b with a non-negative weight."""

    p: Tuple[float, float]
    q: Tuple[float, float]
    weight: float = 1.0

    def __post_init__(self) -> None:
        values = (*self.p, *self.q, self.weight)
        if len(self.p) != 2 or len(self.q) != 2:
            raise ArgumentError("correspondence points must be 2-D")
        if not np.all(np.isfinite(np.asarray(values, dtype=np.float64))):
            raise ArgumentError("correspondence values must be finite", p=self.p, q=self.q)
        if self.weight < 0:
            raise ArgumentError("correspondence weight must be non-negative", weight=self.weight)


def correspondence_arrays(pairs: Iterable[Correspondence]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    items: Sequence[Correspondence] = list(pairs)
    if not items:
        empty = np.zeros((0, 2), dtype=np.float64)
        return empty, empty.copy(), np.zeros(0, dtype=np.float64)
    p = np.array([c.p for c in items], dtype=np.float64)
    q = np.array([c.q for c in items], dtype=np.float64)
    w = np.array([c.weight for c in items], dtype=np.float64)
    return p, q, w



__all__ = [
    "normalize_homography",
    "check_homography",
    "FlowField",
    "FusionMap",
    "HomographyArray",
    "Correspondence",
    "correspondence_arrays",
]
