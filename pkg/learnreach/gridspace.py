"""Discretization of the joint space, off-grid interpolation and occupancy maps."""

from __future__ import annotations

import itertools
import json
import logging
import math
import re
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, Any, NamedTuple

import numpy as np

from learnreach import constants, utils
from learnreach.exceptions import InconsistentSpecError, MapParseError, OutOfBoundsError
from learnreach.models import JointState

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import ArrayLike, NDArray

logger = logging.getLogger(__name__)

_MAP_LINE = re.compile(r"^[01\s]*$")
_SNAP = 1e-9


class OccupancyMap(NamedTuple):
    mask: NDArray[np.bool_]
    """True = occupied. Row 0 is the row at the origin (lowest y), column 0 at the lowest x."""
    meters_per_cell: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __repr__(self) -> str:
        rows, cols = self.mask.shape
        return f"OccupancyMap({rows}x{cols} @ {self.meters_per_cell} m/cell, origin={self.origin})"

    @classmethod
    def from_rows(
        cls, rows: Sequence[Sequence[int]], meters_per_cell: float, origin: tuple[float, float] = (0.0, 0.0)
    ) -> OccupancyMap:
        return cls(np.asarray(rows, dtype=bool), float(meters_per_cell), (float(origin[0]), float(origin[1])))

    @property
    def shape(self) -> tuple[int, int]:
        rows, cols = self.mask.shape
        return rows, cols

    @property
    def x_extent(self) -> tuple[float, float]:
        return self.origin[0], self.origin[0] + self.mask.shape[1] * self.meters_per_cell

    @property
    def y_extent(self) -> tuple[float, float]:
        return self.origin[1], self.origin[1] + self.mask.shape[0] * self.meters_per_cell

    @property
    def occupied_fraction(self) -> float:
        return float(self.mask.mean())

    def cells_of(self, points: ArrayLike) -> tuple[NDArray[np.intp], NDArray[np.intp], NDArray[np.bool_]]:
        """
        Row/column of the cell containing each planar point, plus a flag for points inside the map.

        >>> occ = OccupancyMap.from_rows([[0, 0], [0, 1]], 1.0)
        >>> rows, cols, inside = occ.cells_of([[1.5, 1.5], [2.5, 0.5]])
        >>> rows.tolist(), cols.tolist(), inside.tolist()
        ([1, 0], [1, 1], [True, False])
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        col = np.floor((pts[:, 0] - self.origin[0]) / self.meters_per_cell + _SNAP).astype(np.intp)
        row = np.floor((pts[:, 1] - self.origin[1]) / self.meters_per_cell + _SNAP).astype(np.intp)
        rows, cols = self.mask.shape
        # points on the far edge belong to the last cell
        col = np.where((col == cols) & (pts[:, 0] <= self.x_extent[1] + _SNAP), cols - 1, col)
        row = np.where((row == rows) & (pts[:, 1] <= self.y_extent[1] + _SNAP), rows - 1, row)
        inside = (row >= 0) & (row < rows) & (col >= 0) & (col < cols)
        return np.clip(row, 0, rows - 1), np.clip(col, 0, cols - 1), inside

    def occupied(self, points: ArrayLike) -> NDArray[np.bool_]:
        """Occupancy of each planar point; points off the map count as occupied."""
        row, col, inside = self.cells_of(points)
        return np.where(inside, self.mask[row, col], True)

    def is_occupied(self, x: float, y: float) -> bool:
        return bool(self.occupied([[x, y]])[0])

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        m = self.meters_per_cell
        return self.origin[0] + (col + 0.5) * m, self.origin[1] + (row + 0.5) * m

    def digest(self) -> str:
        return utils.digest(self.mask.astype(np.uint8).tobytes(), self.mask.shape, self.meters_per_cell, self.origin)

    def to_dict(self) -> dict[str, Any]:
        rows, cols = self.mask.shape
        return {"rows": rows, "cols": cols, "meters_per_cell": self.meters_per_cell, "origin": list(self.origin)}


def load_occupancy(path: str | Path, meters_per_cell: float | None = None) -> OccupancyMap:
    """
    Loads a text occupancy grid (rows of space separated ``0``/``1``).

    The sidecar ``<map>.json`` supplies ``meters_per_cell`` and ``origin``; an explicit
    ``meters_per_cell`` takes precedence over the sidecar.
    """
    path = Path(path)
    rows: list[list[int]] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if not _MAP_LINE.match(line):
            msg = f"{path}:{lineno}: unexpected character in occupancy row"
            raise MapParseError(msg)
        tokens = line.split()
        if any(len(t) != 1 for t in tokens):
            msg = f"{path}:{lineno}: cells must be single 0/1 characters separated by spaces"
            raise MapParseError(msg)
        row = [int(t) for t in tokens]
        if rows and len(row) != len(rows[0]):
            msg = f"{path}:{lineno}: ragged row ({len(row)} cells, expected {len(rows[0])})"
            raise MapParseError(msg)
        rows.append(row)

    if not rows:
        msg = f"{path}: empty occupancy map"
        raise MapParseError(msg)

    origin = (0.0, 0.0)
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        if meters_per_cell is None:
            meters_per_cell = meta.get("meters_per_cell")
        if "origin" in meta:
            origin = (float(meta["origin"][0]), float(meta["origin"][1]))
    if meters_per_cell is None or meters_per_cell <= 0.0:
        msg = f"{path}: meters_per_cell missing or non-positive"
        raise MapParseError(msg)

    occupancy = OccupancyMap.from_rows(rows, meters_per_cell, origin)
    logger.debug("Loaded %r from %s (occupied fraction %.4f)", occupancy, path, occupancy.occupied_fraction)
    return occupancy


class GridSpace:
    """
    Rectangular node grid over the joint space.

    Non-periodic dims hold ``cells`` nodes from ``lower`` to ``upper`` inclusive; periodic dims
    hold ``cells`` nodes on ``[lower, upper)``. When an occupancy map is attached, dims 0 and 1
    are the planar position.
    """

    def __init__(
        self,
        lower: Sequence[float],
        upper: Sequence[float],
        cells: Sequence[int],
        periodic: Sequence[bool] | None = None,
        occupancy: OccupancyMap | None = None,
    ) -> None:
        self.lower = tuple(float(v) for v in lower)
        self.upper = tuple(float(v) for v in upper)
        self.cells = tuple(int(c) for c in cells)
        self.periodic = tuple(bool(p) for p in periodic) if periodic is not None else (False,) * len(self.cells)
        self.occupancy = occupancy

        if not len(self.lower) == len(self.upper) == len(self.cells) == len(self.periodic):
            msg = "lower, upper, cells and periodic must have one entry per dim"
            raise InconsistentSpecError(msg)
        for dim, (lo, hi, n, p) in enumerate(zip(self.lower, self.upper, self.cells, self.periodic)):
            if not lo < hi:
                msg = f"dim {dim}: lower {lo} must be below upper {hi}"
                raise InconsistentSpecError(msg)
            if n < (1 if p else 2):
                msg = f"dim {dim}: {n} nodes is too few"
                raise InconsistentSpecError(msg)
        if occupancy is not None:
            self._check_coverage(occupancy)

    def __repr__(self) -> str:
        dims = " x ".join(f"{n}{'p' if p else ''}" for n, p in zip(self.cells, self.periodic))
        return f"GridSpace({dims})"

    def _check_coverage(self, occupancy: OccupancyMap) -> None:
        if self.ndim < 2:  # noqa: PLR2004
            msg = "an occupancy map needs two planar dims"
            raise InconsistentSpecError(msg)
        for dim, (lo, hi) in enumerate((occupancy.x_extent, occupancy.y_extent)):
            if self.lower[dim] < lo - _SNAP or self.upper[dim] > hi + _SNAP:
                msg = f"dim {dim}: grid [{self.lower[dim]}, {self.upper[dim]}] is not covered by the map [{lo}, {hi}]"
                raise InconsistentSpecError(msg)

    @property
    def ndim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def node_count(self) -> int:
        return math.prod(self.cells)

    @cached_property
    def spacing(self) -> NDArray[np.float64]:
        """
        Node spacing per dim.

        >>> GridSpace([0.0, -math.pi], [1.0, math.pi], [11, 4], [False, True]).spacing.round(4).tolist()
        [0.1, 1.5708]
        """
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        divisor = np.asarray([n if p else n - 1 for n, p in zip(self.cells, self.periodic)], dtype=float)
        return (hi - lo) / divisor

    @cached_property
    def axes(self) -> tuple[NDArray[np.float64], ...]:
        return tuple(lo + h * np.arange(n) for lo, h, n in zip(self.lower, self.spacing, self.cells))

    def index_to_state(self, index: int) -> NDArray[np.float64]:
        """
        Coordinates of a node given its flat index.

        >>> GridSpace([0.0, 0.0], [1.0, 2.0], [3, 5]).index_to_state(7).tolist()
        [0.5, 1.0]
        """
        if not 0 <= index < self.node_count:
            msg = f"node index {index} outside [0, {self.node_count})"
            raise OutOfBoundsError(msg)
        multi = np.unravel_index(index, self.cells)
        return np.asarray([self.axes[d][i] for d, i in enumerate(multi)], dtype=float)

    @cached_property
    def _nodes(self) -> NDArray[np.float64]:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=1)
        nodes.flags.writeable = False
        return nodes

    def nodes(self) -> NDArray[np.float64]:
        """All node coordinates, shape ``(node_count, ndim)`` in flat index order."""
        return self._nodes

    @cached_property
    def occupied_nodes(self) -> NDArray[np.bool_]:
        """Per node: whether its planar position is occupied (all False without a map)."""
        if self.occupancy is None:
            return np.zeros(self.node_count, dtype=bool)
        planar = self._planar_grid()
        occupied = self.occupancy.occupied(planar.nodes()).reshape(planar.shape)
        expand = occupied.reshape(occupied.shape + (1,) * (self.ndim - 2))
        return np.broadcast_to(expand, self.shape).ravel().copy()

    def _planar_grid(self) -> GridSpace:
        return GridSpace(self.lower[:2], self.upper[:2], self.cells[:2], self.periodic[:2])

    def sub_grid(self, dims: Sequence[int]) -> GridSpace:
        """The grid restricted to ``dims``; the occupancy map follows when dims start with 0, 1."""
        dims = list(dims)
        occupancy = self.occupancy if dims[:2] == [0, 1] else None
        return GridSpace(
            [self.lower[d] for d in dims],
            [self.upper[d] for d in dims],
            [self.cells[d] for d in dims],
            [self.periodic[d] for d in dims],
            occupancy,
        )

    def wrap(self, points: ArrayLike) -> NDArray[np.float64]:
        """Wraps periodic coordinates into ``[lower, upper)``."""
        pts = np.array(np.atleast_2d(np.asarray(points, dtype=float)))
        for dim, p in enumerate(self.periodic):
            if p:
                lo, hi = self.lower[dim], self.upper[dim]
                wrapped = np.mod(pts[:, dim] - lo, hi - lo) + lo
                pts[:, dim] = np.where(wrapped >= hi, lo, wrapped)
        return pts

    def clip(self, points: ArrayLike) -> NDArray[np.float64]:
        """Wraps periodic coordinates and clamps the others to the grid bounds."""
        pts = self.wrap(points)
        for dim, p in enumerate(self.periodic):
            if not p:
                pts[:, dim] = np.clip(pts[:, dim], self.lower[dim], self.upper[dim])
        return pts

    def fractional_index(self, points: ArrayLike, *, check: bool = True) -> NDArray[np.float64]:
        """
        Continuous node coordinates of each point (node ``i`` sits at ``i``).

        Raises:
            OutOfBoundsError: a non-periodic coordinate lies more than half a cell outside.
        """
        pts = self.wrap(points)
        if pts.shape[1] != self.ndim:
            msg = f"points have {pts.shape[1]} coordinates, grid has {self.ndim} dims"
            raise OutOfBoundsError(msg)
        u = (pts - np.asarray(self.lower)) / self.spacing
        near = np.round(u)
        u = np.where(np.abs(u - near) < _SNAP, near, u)
        for dim, p in enumerate(self.periodic):
            n = self.cells[dim]
            if p:
                u[:, dim] = np.mod(u[:, dim], n)
                continue
            if check:
                bad = (u[:, dim] < -0.5 - _SNAP) | (u[:, dim] > n - 0.5 + _SNAP)
                if bad.any():
                    value = pts[np.argmax(bad), dim]
                    msg = f"coordinate {value} in dim {dim} outside [{self.lower[dim]}, {self.upper[dim]}]"
                    raise OutOfBoundsError(msg)
            u[:, dim] = np.clip(u[:, dim], 0.0, n - 1)
        return u

    def nearest_nodes(self, points: ArrayLike, *, check: bool = True) -> NDArray[np.intp]:
        """Flat index of the nearest node per point; exact half-way ties go to the lower index."""
        u = self.fractional_index(points, check=check)
        idx = np.ceil(u - 0.5 - constants.TIE_EPSILON).astype(np.intp)
        for dim, p in enumerate(self.periodic):
            n = self.cells[dim]
            idx[:, dim] = np.mod(idx[:, dim], n) if p else np.clip(idx[:, dim], 0, n - 1)
        return np.ravel_multi_index(tuple(idx.T), self.cells)

    def corner_weights(
        self, points: ArrayLike, *, check: bool = True, masked: bool = True
    ) -> tuple[NDArray[np.intp], NDArray[np.float64], NDArray[np.bool_]]:
        """
        Multilinear interpolation stencil of each point.

        Returns the flat indices and weights of the ``2**ndim`` enclosing corners, shape
        ``(points, 2**ndim)``, and a per-point flag set when every corner is occupied. With
        ``masked``, occupied corners are dropped and the remaining weights renormalized.
        """
        u = self.fractional_index(points, check=check)
        count = u.shape[0]
        base = np.empty((count, self.ndim), dtype=np.intp)
        frac = np.empty((count, self.ndim), dtype=float)
        upper = np.empty((count, self.ndim), dtype=np.intp)
        for dim, p in enumerate(self.periodic):
            n = self.cells[dim]
            if p:
                i0 = np.floor(u[:, dim]).astype(np.intp) % n
                i1 = (i0 + 1) % n
            else:
                i0 = np.clip(np.floor(u[:, dim]).astype(np.intp), 0, n - 2)
                i1 = i0 + 1
            base[:, dim] = i0
            upper[:, dim] = i1
            frac[:, dim] = np.clip(u[:, dim] - np.floor(u[:, dim]) if p else u[:, dim] - i0, 0.0, 1.0)

        corners = list(itertools.product((0, 1), repeat=self.ndim))
        indices = np.empty((count, len(corners)), dtype=np.intp)
        weights = np.ones((count, len(corners)), dtype=float)
        for c, bits in enumerate(corners):
            multi = tuple(np.where(bit, upper[:, d], base[:, d]) for d, bit in enumerate(bits))
            indices[:, c] = np.ravel_multi_index(multi, self.cells)
            for d, bit in enumerate(bits):
                weights[:, c] *= frac[:, d] if bit else 1.0 - frac[:, d]

        blocked = np.zeros(count, dtype=bool)
        if masked and self.occupancy is not None:
            weights = np.where(self.occupied_nodes[indices], 0.0, weights)
            total = weights.sum(axis=1)
            blocked = total <= 0.0
            weights = np.divide(weights, total[:, None], out=np.zeros_like(weights), where=~blocked[:, None])
        return indices, weights, blocked


class NodeField(NamedTuple):
    """One real value per grid node (flat C order)."""

    grid: GridSpace
    values: NDArray[np.float64]

    def __repr__(self) -> str:
        return f"NodeField({self.grid!r}, min={self.values.min():.4g}, max={self.values.max():.4g})"

    @classmethod
    def create(cls, grid: GridSpace, values: ArrayLike) -> NodeField:
        """
        Wraps node values; occupied planar nodes are set to LARGE.

        >>> NodeField.create(GridSpace([0.0], [1.0], [3]), [1.0, 2.0])
        Traceback (most recent call last):
        ...
        learnreach.exceptions.InconsistentSpecError: 2 values for a grid with 3 nodes
        """
        arr = np.array(values, dtype=float).ravel()
        if arr.size != grid.node_count:
            msg = f"{arr.size} values for a grid with {grid.node_count} nodes"
            raise InconsistentSpecError(msg)
        arr[grid.occupied_nodes] = constants.LARGE
        arr.flags.writeable = False
        return cls(grid, arr)

    def as_array(self) -> NDArray[np.float64]:
        return self.values.reshape(self.grid.shape)

    def at(self, index: int) -> float:
        return float(self.values[index])


def interpolate_points(field: NodeField, points: ArrayLike, *, check: bool = True) -> NDArray[np.float64]:
    """Vectorized :func:`interpolate` over an array of joint points."""
    indices, weights, blocked = field.grid.corner_weights(points, check=check)
    result = np.einsum("ij,ij->i", weights, field.values[indices])
    return np.where(blocked, constants.LARGE, result)


def interpolate(field: NodeField, z: JointState | ArrayLike) -> float:
    """
    Multilinear interpolation of a node field at ``z``; periodic dims interpolate across the seam.

    >>> line = NodeField.create(GridSpace([0.0], [1.0], [2]), [0.0, 1.0])
    >>> interpolate(line, [0.25])
    0.25
    """
    return float(interpolate_points(field, _as_point(z))[0])


def state_to_nearest_node(grid: GridSpace, z: JointState | ArrayLike) -> int:
    """
    Flat index of the node nearest ``z``.

    >>> line = GridSpace([0.0], [1.0], [11])
    >>> state_to_nearest_node(line, [0.30]), state_to_nearest_node(line, [0.349]), state_to_nearest_node(line, [0.35])
    (3, 3, 3)
    """
    return int(grid.nearest_nodes(_as_point(z))[0])


def _as_point(z: JointState | ArrayLike) -> NDArray[np.float64]:
    if isinstance(z, JointState):
        return np.atleast_2d(z.as_array())
    return np.atleast_2d(np.asarray(z, dtype=float))
