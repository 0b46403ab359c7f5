"""Per-bone breadth-first distance fields on the voxel grid.

The search starts from bone cells, never expands from a mesh cell into a
hollow cell, and restarts from the nearest traversed mesh cell bordering
untraversed hollow space until every mesh cell is reached.  A vertex's
distance follows its cell's predecessor (distance of the previous cell
plus the straight-line distance from that cell's center to the vertex).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rigcore import Rig
from .voxelize import VoxelGrid, rasterize_bone

# fixed expansion order: +x, -x, +y, -y, +z, -z
NEIGHBOR_OFFSETS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
    dtype=np.int64,
)


@dataclass
class DistanceField:
    bone: int
    steps: np.ndarray  # (R, R, R) int32, -1 = untraversed
    pred: np.ndarray  # (R, R, R) int32 flat cell index, -1 = none
    cell_size: float

    @property
    def dist(self) -> np.ndarray:
        """Distances in meters (inf where untraversed)."""
        d = self.steps.astype(np.float64) * self.cell_size
        d[self.steps < 0] = np.inf
        return d


def _neighbors_flat(flat: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    """6-neighborhood of flat cell indices: (F, 6) indices and validity mask."""
    x = flat // (r * r)
    y = (flat // r) % r
    z = flat % r
    nx = x[:, None] + NEIGHBOR_OFFSETS[:, 0][None, :]
    ny = y[:, None] + NEIGHBOR_OFFSETS[:, 1][None, :]
    nz = z[:, None] + NEIGHBOR_OFFSETS[:, 2][None, :]
    valid = (nx >= 0) & (nx < r) & (ny >= 0) & (ny < r) & (nz >= 0) & (nz < r)
    nb = (nx * r + ny) * r + nz
    return nb, valid


def compute_cell_distances(grid: VoxelGrid, bone_cells: np.ndarray, bone: int = 0) -> DistanceField:
    """BFS distance field for one bone (level-synchronous frontier sweep).

    Claim order within a level is source-major, direction-minor, which
    reproduces the sequential FIFO traversal with the fixed neighbor
    order, so distances and predecessors are deterministic.
    """
    bone_cells = np.atleast_2d(np.asarray(bone_cells, dtype=np.int64))
    if bone_cells.size == 0:
        raise ValueError("bone cell set is empty")
    r = grid.resolution
    mesh = grid.labels.reshape(-1).astype(bool)
    steps = np.full(r * r * r, -1, dtype=np.int32)
    pred = np.full(r * r * r, -1, dtype=np.int32)
    seeds = (bone_cells[:, 0] * r + bone_cells[:, 1]) * r + bone_cells[:, 2]
    seeds = seeds[np.sort(np.unique(seeds, return_index=True)[1])]
    steps[seeds] = 0
    frontier = seeds
    level = 0
    while True:
        while frontier.size:
            nb, valid = _neighbors_flat(frontier, r)
            allowed = valid.copy()
            allowed[valid] &= steps[nb[valid]] < 0
            # never expand from a mesh cell into a hollow cell
            src_mesh = mesh[frontier][:, None]
            allowed &= ~(src_mesh & ~mesh[np.clip(nb, 0, r * r * r - 1)])
            cand_dst = nb[allowed]
            cand_src = np.broadcast_to(frontier[:, None], nb.shape)[allowed]
            if cand_dst.size == 0:
                frontier = cand_dst
                break
            first = np.sort(np.unique(cand_dst, return_index=True)[1])
            dst = cand_dst[first]
            steps[dst] = level + 1
            pred[dst] = cand_src[first]
            frontier = dst
            level += 1
        untraversed_mesh = mesh & (steps < 0)
        if not untraversed_mesh.any():
            break
        # restart: nearest traversed mesh cell bordering untraversed hollow
        cand = np.flatnonzero(mesh & (steps >= 0))
        if cand.size:
            nb, valid = _neighbors_flat(cand, r)
            open_hollow = valid.copy()
            open_hollow[valid] &= (steps[nb[valid]] < 0) & ~mesh[nb[valid]]
            has_open = open_hollow.any(axis=1)
            cand = cand[has_open]
        if cand.size == 0:
            raise RuntimeError("mesh cells unreachable even via restarts; grid is corrupt")
        best = cand[np.lexsort((cand, steps[cand]))[0]]
        nb, valid = _neighbors_flat(np.array([best]), r)
        mask = valid[0] & (steps[np.clip(nb[0], 0, r * r * r - 1)] < 0)
        mask &= ~mesh[np.clip(nb[0], 0, r * r * r - 1)]
        new = nb[0][mask]
        level = int(steps[best])
        steps[new] = level + 1
        pred[new] = best
        frontier = new
        level += 1
    shape = (r, r, r)
    return DistanceField(bone, steps.reshape(shape), pred.reshape(shape), grid.cell_size)


def vertex_distance(field: DistanceField, position, grid: VoxelGrid) -> float:
    return float(vertex_distances(field, np.asarray(position)[None, :], grid)[0])


def vertex_distances(field: DistanceField, positions: np.ndarray, grid: VoxelGrid) -> np.ndarray:
    """Distance of each vertex through its cell's predecessor."""
    r = grid.resolution
    cells = grid.inner_cell_of(positions)
    flat = (cells[:, 0] * r + cells[:, 1]) * r + cells[:, 2]
    steps = field.steps.reshape(-1)[flat]
    if np.any(steps < 0):
        bad = int(np.argmax(steps < 0))
        raise ValueError(f"vertex {bad} lies in an untraversed cell; field is incomplete")
    pred = field.pred.reshape(-1)[flat]
    out = np.zeros(len(flat))
    has_pred = pred >= 0
    if has_pred.any():
        p = pred[has_pred]
        pc = np.stack([p // (r * r), (p // r) % r, p % r], axis=1)
        centers = grid.center_of(pc)
        dist_prev = field.steps.reshape(-1)[p].astype(np.float64) * field.cell_size
        out[has_pred] = dist_prev + np.linalg.norm(
            centers - np.atleast_2d(positions)[has_pred], axis=1
        )
    return out


def bone_cell_sets(rig: Rig, grid: VoxelGrid) -> list[np.ndarray]:
    starts, ends = rig.skeleton.bone_segments()
    return [rasterize_bone(s, e, grid) for s, e in zip(starts, ends)]


def compute_all(rig: Rig, grid: VoxelGrid) -> np.ndarray:
    """N x B matrix of vertex-to-bone distances over the labeled grid."""
    n = rig.mesh.num_vertices
    b = rig.skeleton.num_bones
    d = np.zeros((n, b))
    for j, cells in enumerate(bone_cell_sets(rig, grid)):
        field = compute_cell_distances(grid, cells, bone=j)
        d[:, j] = vertex_distances(field, rig.mesh.vertices, grid)
    if not np.all(np.isfinite(d)):
        raise RuntimeError("non-finite vertex-bone distance")
    return d


def euclidean_all(rig: Rig) -> np.ndarray:
    """N x B straight-line point-to-segment distances (ablation mode)."""
    v = rig.mesh.vertices
    starts, ends = rig.skeleton.bone_segments()
    d = np.zeros((len(v), len(starts)))
    for j, (a, b) in enumerate(zip(starts, ends)):
        ab = b - a
        denom = float(ab @ ab)
        if denom == 0:
            d[:, j] = np.linalg.norm(v - a, axis=1)
        else:
            t = np.clip((v - a) @ ab / denom, 0.0, 1.0)
            proj = a + t[:, None] * ab
            d[:, j] = np.linalg.norm(v - proj, axis=1)
    return d
