"""Cubic voxel grid: conservative surface marking and bone rasterization.

Mesh cells are found with a separating-axis triangle/box overlap test over
closed boxes, so boundary contact counts and thin features are never
missed.  Bone segments are rasterized by incremental grid traversal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rigcore import Mesh

HOLLOW = 0
MESH = 1


@dataclass
class VoxelGrid:
    origin: np.ndarray  # (3,) grid min corner
    cell_size: float
    resolution: int
    labels: np.ndarray  # (R, R, R) uint8

    def cell_of(self, points) -> np.ndarray:
        """Containing cell of each point, clipped into the grid."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        c = np.floor((p - self.origin) / self.cell_size).astype(np.int64)
        return np.clip(c, 0, self.resolution - 1)

    def inner_cell_of(self, points) -> np.ndarray:
        """Containing cell clipped into the padded interior; mesh and bone
        geometry lives there, so boundary-touching float jitter resolves
        inward."""
        c = self.cell_of(points)
        return np.clip(c, 1, self.resolution - 2)

    def center_of(self, cells) -> np.ndarray:
        c = np.atleast_2d(np.asarray(cells, dtype=np.float64))
        return self.origin + (c + 0.5) * self.cell_size

    def contains_point(self, point) -> bool:
        p = np.asarray(point, dtype=np.float64)
        rel = (p - self.origin) / self.cell_size
        return bool(np.all(rel >= 0) and np.all(rel <= self.resolution))


def build_grid(mesh: Mesh, resolution: int = 88) -> VoxelGrid:
    """Fit a cubic grid around the mesh with a one-cell padding border.

    The cell size is chosen so the largest AABB extent spans resolution-2
    cells and the grid is centered on the AABB per axis.
    """
    if resolution < 4:
        raise ValueError("grid resolution must be >= 4")
    if mesh.num_vertices == 0:
        raise ValueError("cannot build a grid around an empty mesh")
    lo, hi = mesh.aabb()
    extent = float((hi - lo).max())
    if extent <= 0:
        raise ValueError("degenerate mesh: zero-extent bounding box")
    s = extent / (resolution - 2)
    origin = (lo + hi) / 2 - resolution * s / 2
    labels = np.zeros((resolution,) * 3, dtype=np.uint8)
    return VoxelGrid(origin, s, resolution, labels)


def _tri_box_overlap(centers: np.ndarray, half: float, tri: np.ndarray) -> np.ndarray:
    """Vectorized closed-box SAT test of one triangle against many boxes.

    centers: (C, 3) box centers, half: half side, tri: (3, 3).
    Returns a (C,) bool mask; touching counts as overlap.
    """
    v = tri[None, :, :] - centers[:, None, :]  # (C, 3, 3)
    slack = half * 1e-9  # absorb last-ulp jitter; extra marking stays conservative
    # box face axes
    lo = v.min(axis=1)
    hi = v.max(axis=1)
    ok = np.all((hi >= -half - slack) & (lo <= half + slack), axis=1)
    if not ok.any():
        return ok
    e = np.array([tri[1] - tri[0], tri[2] - tri[1], tri[0] - tri[2]])
    # triangle plane
    n = np.cross(e[0], e[1])
    d = v[:, 0, :] @ n
    r = half * np.abs(n).sum()
    ok &= np.abs(d) <= r + slack * np.abs(n).sum()
    if not ok.any():
        return ok
    # 9 edge cross-product axes
    for i in range(3):
        for j in range(3):
            axis = np.zeros(3)
            axis[j] = 1.0
            a = np.cross(e[i], axis)
            if not a.any():
                continue
            p = v @ a  # (C, 3)
            ra = (half + slack) * np.abs(a).sum()
            ok &= (p.min(axis=1) <= ra) & (p.max(axis=1) >= -ra)
    return ok


def voxelize_surface(mesh: Mesh, grid: VoxelGrid) -> np.ndarray:
    """Label every cell whose closed box overlaps at least one triangle.

    Marking is restricted to the inner region so the padding border stays
    hollow; a point exactly on the inner boundary is also covered by the
    adjacent interior cell.
    """
    r = grid.resolution
    labels = np.zeros((r,) * 3, dtype=np.uint8)
    half = grid.cell_size / 2
    for tri_idx in mesh.triangles:
        tri = mesh.vertices[tri_idx]
        lo = np.floor((tri.min(axis=0) - grid.origin) / grid.cell_size).astype(np.int64)
        hi = np.floor((tri.max(axis=0) - grid.origin) / grid.cell_size).astype(np.int64)
        lo = np.clip(lo, 1, r - 2)
        hi = np.clip(hi, 1, r - 2)
        xs, ys, zs = [np.arange(lo[a], hi[a] + 1) for a in range(3)]
        cells = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1).reshape(-1, 3)
        sub = labels[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
        if sub.all():
            continue
        centers = grid.center_of(cells)
        mask = _tri_box_overlap(centers, half, tri)
        hit = cells[mask]
        labels[hit[:, 0], hit[:, 1], hit[:, 2]] = MESH
    grid.labels = labels
    return labels


def voxelize_mesh(mesh: Mesh, resolution: int = 88) -> VoxelGrid:
    grid = build_grid(mesh, resolution)
    voxelize_surface(mesh, grid)
    return grid


def rasterize_bone(start, end, grid: VoxelGrid) -> np.ndarray:
    """Cells crossed by the segment, in traversal order ((S, 3) array).

    A zero-length bone yields the single cell containing its point.
    """
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    for p, which in ((start, "start"), (end, "end")):
        if not grid.contains_point(p):
            raise ValueError(f"bone {which} point {p.tolist()} lies outside the voxel grid")
    cell = grid.cell_of(start)[0].copy()
    goal = grid.cell_of(end)[0]
    if np.array_equal(cell, goal):
        return cell[None, :]
    d = end - start
    step = np.where(d > 0, 1, np.where(d < 0, -1, 0))
    t_max = np.full(3, np.inf)
    t_delta = np.full(3, np.inf)
    for a in range(3):
        if d[a] != 0:
            boundary = grid.origin[a] + (cell[a] + (step[a] > 0)) * grid.cell_size
            t_max[a] = (boundary - start[a]) / d[a]
            t_delta[a] = grid.cell_size / abs(d[a])
    out = [cell.copy()]
    limit = 3 * grid.resolution + 3
    for _ in range(limit):
        a = int(np.argmin(t_max))
        cell[a] += step[a]
        t_max[a] += t_delta[a]
        out.append(cell.copy())
        if np.array_equal(cell, goal):
            return np.asarray(out)
    raise RuntimeError("bone rasterization failed to reach the end cell")


def export_grid(grid: VoxelGrid, path) -> None:
    """Debug export: grid metadata plus run-length-encoded labels."""
    import json

    flat = grid.labels.reshape(-1)
    change = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate([[0], change])
    lengths = np.diff(np.concatenate([starts, [flat.size]]))
    runs = [[int(flat[s]), int(l)] for s, l in zip(starts, lengths)]
    doc = {
        "origin": grid.origin.tolist(),
        "cell_size": grid.cell_size,
        "resolution": grid.resolution,
        "rle_labels": runs,
    }
    with open(path, "w") as f:
        json.dump(doc, f)
        f.write("\n")
