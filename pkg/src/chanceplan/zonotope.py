"""Planar zonotopes, right triangles and grid covers.

A zonotope is stored as a center ``c`` (2,) and a generator matrix ``G``
(2, l).  The set is ``{c + G b : b in [-1, 1]^l}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TOL_IN = 1e-9          # containment tolerance (m)
TOL_GEN = 1e-12        # generators shorter than this are dropped
MIN_EXTENT = 1e-3      # degenerate bounding-box axes are padded to this width


def _as_generators(g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.size == 0:
        return np.zeros((2, 0))
    if g.ndim == 1:
        g = g.reshape(2, 1)
    if g.shape[0] != 2:
        raise ValueError("generator matrix must have 2 rows")
    return g


@dataclass(frozen=True)
class Zonotope2:
    center: np.ndarray
    generators: np.ndarray = field(default_factory=lambda: np.zeros((2, 0)))

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(2)
        g = _as_generators(self.generators)
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(g))):
            raise ValueError("zonotope entries must be finite")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "generators", g)

    @classmethod
    def box(cls, center, half_widths, angle: float = 0.0) -> "Zonotope2":
        """Rectangle with the given half widths, rotated by ``angle``."""
        hw = np.asarray(half_widths, dtype=float)
        return cls(center, rot(angle) @ np.diag(hw))

    @property
    def order(self) -> int:
        return self.generators.shape[1]

    def __add__(self, other: "Zonotope2") -> "Zonotope2":
        return minkowski_sum(self, other)

    def __rmatmul__(self, a) -> "Zonotope2":
        return linear_map(a, self)

    def translate(self, d) -> "Zonotope2":
        return Zonotope2(self.center + np.asarray(d, dtype=float), self.generators)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        r = np.abs(self.generators).sum(axis=1)
        return self.center - r, self.center + r

    def reduced_generators(self) -> np.ndarray:
        """Generators with tiny columns dropped and parallel columns merged.

        Columns are flipped into the half plane of angles [0, pi) and sorted
        by angle.
        """
        g = self.generators
        if g.shape[1] == 0:
            return g
        keep = np.hypot(g[0], g[1]) > TOL_GEN
        g = g[:, keep]
        if g.shape[1] == 0:
            return g
        flip = (g[1] < 0) | ((g[1] == 0) & (g[0] < 0))
        g = np.where(flip, -g, g)
        ang = np.arctan2(g[1], g[0])
        ang[ang >= np.pi] = 0.0
        order = np.argsort(ang, kind="stable")
        g, ang = g[:, order], ang[order]
        merged = [g[:, 0].copy()]
        last = ang[0]
        for a, col in zip(ang[1:], g[:, 1:].T):
            if abs(a - last) < 1e-12:
                merged[-1] += col
            else:
                merged.append(col.copy())
                last = a
        return np.array(merged).T

    def halfspaces(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit normals ``N`` (m, 2) and offsets ``h`` (m,) with
        ``Z = {w : |N (w - c)| <= h}``.

        For full-rank zonotopes these are the facet normals.  A segment gets
        its normal (offset 0) and its direction; a point gets both axes with
        zero offsets.
        """
        g = self.reduced_generators()
        if g.shape[1] == 0:
            return np.eye(2), np.zeros(2)
        dirs = g / np.hypot(g[0], g[1])
        normals = np.stack([-dirs[1], dirs[0]], axis=1)
        if g.shape[1] == 1:
            normals = np.vstack([normals, dirs.T])
        h = np.abs(normals @ g).sum(axis=1)
        return normals, h

    def contains(self, w, tol: float = TOL_IN) -> np.ndarray:
        """Vectorised membership test for points ``w`` of shape (..., 2)."""
        w = np.asarray(w, dtype=float)
        n, h = self.halfspaces()
        proj = np.abs((w - self.center) @ n.T)
        return np.all(proj <= h + tol, axis=-1)

    def vertices(self) -> np.ndarray:
        """Counter-clockwise vertex polygon (V, 2)."""
        g = self.reduced_generators()
        if g.shape[1] == 0:
            return self.center.reshape(1, 2)
        if g.shape[1] == 1:
            return np.stack([self.center - g[:, 0], self.center + g[:, 0]])
        steps = np.concatenate([2 * g, -2 * g], axis=1).T
        start = self.center - g.sum(axis=1)
        # Walking the generators in angle order from the lowest point traces
        # the boundary counter-clockwise.
        pts = start + np.cumsum(np.vstack([np.zeros(2), steps[:-1]]), axis=0)
        return pts

    def area(self) -> float:
        g = self.reduced_generators()
        total = 0.0
        for a in range(g.shape[1]):
            for b in range(a + 1, g.shape[1]):
                total += abs(g[0, a] * g[1, b] - g[1, a] * g[0, b])
        return 4.0 * total

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Points ``c + G b`` with ``b`` uniform on the unit cube (not uniform on Z)."""
        b = rng.uniform(-1.0, 1.0, size=(n, self.order))
        return self.center + b @ self.generators.T


def rot(h: float) -> np.ndarray:
    c, s = np.cos(h), np.sin(h)
    return np.array([[c, -s], [s, c]])


def minkowski_sum(a: Zonotope2, b: Zonotope2) -> Zonotope2:
    return Zonotope2(a.center + b.center, np.concatenate([a.generators, b.generators], axis=1))


def linear_map(a, z: Zonotope2) -> Zonotope2:
    a = np.asarray(a, dtype=float)
    return Zonotope2(a @ z.center, a @ z.generators)


def contains_point(z: Zonotope2, w, tol: float = TOL_IN) -> bool:
    return bool(z.contains(np.asarray(w, dtype=float).reshape(2), tol))


@dataclass(frozen=True)
class RightTriangle:
    """Axis-aligned right triangle with the right angle at ``anchor``.

    ``orient=+1`` puts the legs along +x and +y, ``orient=-1`` along -x, -y.
    """

    anchor: np.ndarray
    legs: tuple[float, float]
    orient: int = 1
    cell_index: tuple[int, int] = (1, 1)

    def __post_init__(self):
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float).reshape(2))
        if self.orient not in (1, -1):
            raise ValueError("orient must be +1 or -1")
        if min(self.legs) <= 0:
            raise ValueError("legs must be positive")

    @property
    def area(self) -> float:
        return 0.5 * self.legs[0] * self.legs[1]

    def vertices(self) -> np.ndarray:
        l1, l2 = self.legs
        o = self.orient
        return self.anchor + o * np.array([[0.0, 0.0], [l1, 0.0], [0.0, l2]])

    def contains(self, w, tol: float = TOL_IN) -> np.ndarray:
        l1, l2 = self.legs
        d = self.orient * (np.asarray(w, dtype=float) - self.anchor)
        return (d[..., 0] >= -tol) & (d[..., 1] >= -tol) & (d[..., 0] / l1 + d[..., 1] / l2 <= 1 + tol / min(l1, l2))


@dataclass(frozen=True)
class TriangleCover:
    """Right-triangle grid cover of a zonotope stored as parallel arrays.

    All triangles share the legs ``(l1, l2)``.  ``anchors`` is (n, 2),
    ``orient`` is (n,) with entries +1/-1 and ``cells`` holds the 1-based
    (row, column) of each triangle's grid cell.
    """

    anchors: np.ndarray
    orient: np.ndarray
    cells: np.ndarray
    legs: tuple[float, float]
    source_zonotope: Zonotope2
    grid_k: int
    origin: np.ndarray | None = None     # bottom-left corner of the grid

    def __len__(self) -> int:
        return len(self.orient)

    @property
    def triangles(self) -> list[RightTriangle]:
        return [RightTriangle(a, self.legs, int(o), (int(c[0]), int(c[1])))
                for a, o, c in zip(self.anchors, self.orient, self.cells)]

    def vertices(self) -> np.ndarray:
        """Triangle vertices (n, 3, 2)."""
        l1, l2 = self.legs
        offs = np.array([[0.0, 0.0], [l1, 0.0], [0.0, l2]])
        return self.anchors[:, None, :] + self.orient[:, None, None] * offs[None]

    def area(self) -> float:
        return len(self) * 0.5 * self.legs[0] * self.legs[1]

    def contains(self, w, tol: float = TOL_IN) -> np.ndarray:
        """True where a point lies in at least one triangle.

        Points are binned into grid cells and tested only against the kept
        triangles of the surrounding 3x3 cells.
        """
        w = np.asarray(w, dtype=float)
        shape = w.shape[:-1]
        w = w.reshape(-1, 2)
        l1, l2 = self.legs
        k = self.grid_k
        origin = self.origin
        if origin is None:
            # lower triangles are anchored at their cell's bottom-left corner
            c = self.cells - 1
            a = self.anchors - (self.orient[:, None] < 0) * np.array([l1, l2])
            origin = (a - c[:, ::-1] * np.array([l1, l2])).mean(axis=0) if len(c) else np.zeros(2)
        kept = np.zeros((k + 2, k + 2, 2), dtype=bool)
        if len(self):
            kept[self.cells[:, 0], self.cells[:, 1], (self.orient < 0).astype(int)] = True
        col = np.floor((w[:, 0] - origin[0]) / l1).astype(np.int64)
        row = np.floor((w[:, 1] - origin[1]) / l2).astype(np.int64)
        out = np.zeros(len(w), dtype=bool)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                r, cc = row + dr, col + dc
                ok = (r >= 0) & (r < k) & (cc >= 0) & (cc < k)
                r1, c1 = np.where(ok, r + 1, 0), np.where(ok, cc + 1, 0)
                for side, o in ((0, 1.0), (1, -1.0)):
                    m = ok & kept[r1, c1, side]
                    if not m.any():
                        continue
                    anc = origin + np.stack([cc, r], axis=1) * np.array([l1, l2])
                    if o < 0:
                        anc = anc + np.array([l1, l2])
                    d = o * (w - anc)
                    inside = (d[:, 0] >= -tol) & (d[:, 1] >= -tol) & (d[:, 0] / l1 + d[:, 1] / l2 <= 1 + tol / min(l1, l2))
                    out |= m & inside
        return out.reshape(shape)


def _sat_axes(z: Zonotope2) -> tuple[np.ndarray, np.ndarray]:
    """Separating axes (m, 2) and zonotope support half widths (m,)."""
    n_z, _ = z.halfspaces()
    axes = np.vstack([n_z, np.eye(2)])
    return axes, np.abs(axes @ z.generators).sum(axis=1)


def triangles_intersect_zonotope(verts: np.ndarray, z: Zonotope2, tol: float = TOL_IN) -> np.ndarray:
    """Separating-axis test for many triangles (n, 3, 2) against ``z``.

    Axes are the zonotope's facet normals plus the triangles' edge
    normals.  Ties within ``tol`` count as intersecting.
    """
    axes, half = _sat_axes(z)
    # hypotenuse normals of each triangle
    e = verts[:, 2] - verts[:, 1]
    hyp = np.stack([-e[:, 1], e[:, 0]], axis=1)
    hyp /= np.hypot(hyp[:, 0], hyp[:, 1])[:, None]
    sep = np.zeros(len(verts), dtype=bool)
    for a, hw in zip(axes, half):
        pr = verts @ a
        cz = z.center @ a
        sep |= (pr.max(axis=1) < cz - hw - tol) | (pr.min(axis=1) > cz + hw + tol)
    pr = np.einsum("nvk,nk->nv", verts, hyp)
    cz = z.center @ hyp.T
    hw = np.abs(hyp @ z.generators).sum(axis=1)
    sep |= (pr.max(axis=1) < cz - hw - tol) | (pr.min(axis=1) > cz + hw + tol)
    return ~sep


def triangle_intersects_zonotope(t: RightTriangle, z: Zonotope2, tol: float = TOL_IN) -> bool:
    return bool(triangles_intersect_zonotope(t.vertices()[None], z, tol)[0])


def build_cover(z: Zonotope2, k: int = 24) -> TriangleCover:
    """Cover ``z`` by the right triangles of a k-by-k grid over its bounding box.

    Each cell is cut along its anti-diagonal so that both halves are right
    triangles with the right angle at a cell corner: the lower one anchored
    at the bottom-left corner (orient +1) and the upper one at the top-right
    corner (orient -1).  Only triangles meeting ``z`` are kept.
    """
    if int(k) != k or k < 1:
        raise ValueError("grid size k must be a positive integer")
    k = int(k)
    lo, hi = z.bbox()
    width = hi - lo
    pad = np.maximum(MIN_EXTENT - width, 0.0) / 2
    lo, hi = lo - pad, hi + pad
    l1, l2 = (hi - lo) / k
    rows, cols = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    rows, cols = rows.ravel(), cols.ravel()
    bl = np.stack([lo[0] + cols * l1, lo[1] + rows * l2], axis=1)
    tr = np.stack([lo[0] + (cols + 1) * l1, lo[1] + (rows + 1) * l2], axis=1)
    anchors = np.concatenate([bl, tr])
    orient = np.concatenate([np.ones(k * k), -np.ones(k * k)])
    cells = np.tile(np.stack([rows + 1, cols + 1], axis=1), (2, 1))
    offs = np.array([[0.0, 0.0], [l1, 0.0], [0.0, l2]])
    verts = anchors[:, None, :] + orient[:, None, None] * offs[None]
    keep = triangles_intersect_zonotope(verts, z)
    return TriangleCover(anchors[keep], orient[keep], cells[keep].astype(int), (float(l1), float(l2)), z, k, lo)
