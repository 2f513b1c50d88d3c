"""Tetrahedral optimization grid: lattice construction, per-vertex signed
distance + displacement parameters, analytic shape initializers, and the
binary grid checkpoint format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .geometry import TriangleSet, is_closed_mesh, points_inside_mesh

GRID_MAGIC = b"TGRD"
GRID_VERSION = 1

# The six tetrahedra per cell share the cell's main diagonal; each one follows
# a corner-to-corner axis path so neighbouring cells tessellate conformally.
_CELL_TETS = []
for _perm in permutations(range(3)):
    _p0 = np.zeros(3, dtype=np.int64)
    _p1 = _p0.copy()
    _p1[_perm[0]] = 1
    _p2 = _p1.copy()
    _p2[_perm[1]] = 1
    _p3 = np.ones(3, dtype=np.int64)
    _parity = {(0, 1, 2): 1, (1, 2, 0): 1, (2, 0, 1): 1}.get(tuple(_perm), -1)
    if _parity > 0:
        _CELL_TETS.append((_p0, _p1, _p2, _p3))
    else:
        _CELL_TETS.append((_p0, _p2, _p1, _p3))
_CELL_TETS = np.array(_CELL_TETS)  # (6, 4, 3) corner offsets


@dataclass
class TetGrid:
    """Cube-filling tetrahedral lattice with optimizable geometry parameters.

    vertices: (V, 3) lattice positions, tets: (T, 4) vertex indices with
    positive signed volume, sdf: (V,) signed distance values, displacement:
    (V, 3) per-vertex offsets clamped to half the lattice spacing.
    """

    vertices: np.ndarray
    tets: np.ndarray
    sdf: np.ndarray
    displacement: np.ndarray
    resolution: int
    cube_half_extent: float

    @property
    def spacing(self) -> float:
        return 2.0 * self.cube_half_extent / self.resolution

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    def tet_volumes(self) -> np.ndarray:
        p = self.vertices + self.displacement
        d1 = p[self.tets[:, 1]] - p[self.tets[:, 0]]
        d2 = p[self.tets[:, 2]] - p[self.tets[:, 0]]
        d3 = p[self.tets[:, 3]] - p[self.tets[:, 0]]
        return np.einsum("ij,ij->i", np.cross(d1, d2), d3) / 6.0

    def clamp_displacement(self) -> None:
        limit = 0.5 * self.spacing
        np.clip(self.displacement, -limit, limit, out=self.displacement)

    def copy(self) -> "TetGrid":
        return TetGrid(
            vertices=self.vertices,
            tets=self.tets,
            sdf=self.sdf.copy(),
            displacement=self.displacement.copy(),
            resolution=self.resolution,
            cube_half_extent=self.cube_half_extent,
        )


def build_tet_grid(resolution: int, cube_half_extent: float = 1.0) -> TetGrid:
    """Tile the cube [-h, h]^3 with (n+1)^3 vertices and 6 n^3 tetrahedra."""
    if resolution < 1:
        raise ValueError(f"resolution must be >= 1, got {resolution}")
    if cube_half_extent <= 0.0:
        raise ValueError(f"cube_half_extent must be positive, got {cube_half_extent}")

    n = int(resolution)
    axis = np.linspace(-cube_half_extent, cube_half_extent, n + 1)
    gi, gj, gk = np.meshgrid(np.arange(n + 1), np.arange(n + 1), np.arange(n + 1), indexing="ij")
    vertices = np.stack([axis[gi], axis[gj], axis[gk]], axis=-1).reshape(-1, 3)

    ci, cj, ck = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    cells = np.stack([ci, cj, ck], axis=-1).reshape(-1, 3)  # (n^3, 3)

    # cell corner offsets -> flat vertex ids
    corner = cells[:, None, None, :] + _CELL_TETS[None, :, :, :]  # (C, 6, 4, 3)
    stride = n + 1
    ids = (corner[..., 0] * stride + corner[..., 1]) * stride + corner[..., 2]
    tets = ids.reshape(-1, 4).astype(np.int64)

    grid = TetGrid(
        vertices=vertices,
        tets=tets,
        sdf=np.zeros(len(vertices)),
        displacement=np.zeros((len(vertices), 3)),
        resolution=n,
        cube_half_extent=float(cube_half_extent),
    )
    vols = grid.tet_volumes()
    if not (vols > 0.0).all():
        raise AssertionError("tessellation produced non-positive tet volumes")
    return grid


# ---------------------------------------------------------------------------
# analytic shapes


@dataclass(frozen=True)
class SphereShape:
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.5

    def sdf(self, points):
        points = np.asarray(points, dtype=np.float64)
        return np.linalg.norm(points - np.asarray(self.center), axis=-1) - self.radius


@dataclass(frozen=True)
class CapsuleShape:
    p0: tuple = (0.0, 0.0, -0.3)
    p1: tuple = (0.0, 0.0, 0.3)
    radius: float = 0.2

    def sdf(self, points):
        points = np.asarray(points, dtype=np.float64)
        a = np.asarray(self.p0, dtype=np.float64)
        b = np.asarray(self.p1, dtype=np.float64)
        ab = b - a
        denom = float(ab @ ab)
        t = np.clip((points - a) @ ab / denom, 0.0, 1.0) if denom > 0 else 0.0
        closest = a + np.multiply.outer(t, ab)
        return np.linalg.norm(points - closest, axis=-1) - self.radius


@dataclass(frozen=True)
class UnionShape:
    shapes: tuple = field(default_factory=tuple)

    def sdf(self, points):
        if not self.shapes:
            raise ValueError("union of zero shapes")
        values = np.stack([s.sdf(points) for s in self.shapes], axis=0)
        return values.min(axis=0)


def shape_to_dict(shape):
    if isinstance(shape, SphereShape):
        return {"type": "sphere", "center": list(shape.center), "radius": shape.radius}
    if isinstance(shape, CapsuleShape):
        return {"type": "capsule", "p0": list(shape.p0), "p1": list(shape.p1), "radius": shape.radius}
    if isinstance(shape, UnionShape):
        return {"type": "union", "shapes": [shape_to_dict(s) for s in shape.shapes]}
    raise ValueError(f"unknown shape {type(shape).__name__}")


def shape_from_dict(d):
    kind = d.get("type")
    if kind == "sphere":
        return SphereShape(center=tuple(d["center"]), radius=float(d["radius"]))
    if kind == "capsule":
        return CapsuleShape(p0=tuple(d["p0"]), p1=tuple(d["p1"]), radius=float(d["radius"]))
    if kind == "union":
        return UnionShape(shapes=tuple(shape_from_dict(s) for s in d["shapes"]))
    raise ValueError(f"unknown shape type {kind!r}")


def analytic_sdf(grid: TetGrid, shape) -> TetGrid:
    """Set grid.sdf to the exact signed distance of an analytic shape."""
    out = grid.copy()
    out.sdf = shape.sdf(grid.vertices)
    return out


def init_sdf_from_template(grid: TetGrid, template) -> TetGrid:
    """Initialize grid.sdf as signed distance to a closed template mesh.

    Negative inside; the sign comes from ray-parity tests with deterministic
    jitter. Displacements are left untouched. Raises on non-watertight input.
    """
    faces = np.asarray(template.faces, dtype=np.int64)
    vertices = np.asarray(template.vertices, dtype=np.float64)
    if not is_closed_mesh(faces):
        raise ValueError("template mesh is not closed: signed distance is ill-defined")

    tris = TriangleSet(vertices, faces)
    _, _, dist = tris.nearest(grid.vertices)
    inside = points_inside_mesh(grid.vertices, vertices, faces, seed=0)

    out = grid.copy()
    out.sdf = np.where(inside, -dist, dist)
    return out


# ---------------------------------------------------------------------------
# binary checkpoint format


def write_grid_blob(grid: TetGrid) -> bytes:
    """Serialize sdf + displacement in the little-endian grid block format."""
    header = GRID_MAGIC + struct.pack(
        "<IId", GRID_VERSION, grid.resolution, grid.cube_half_extent
    )
    sdf = grid.sdf.astype("<f4").tobytes()
    disp = grid.displacement.astype("<f4").tobytes()
    return header + sdf + disp


def read_grid_blob(blob: bytes, offset: int = 0):
    """Parse a grid block; returns (TetGrid, next_offset)."""
    if blob[offset : offset + 4] != GRID_MAGIC:
        raise ValueError("bad grid checkpoint: missing TGRD magic")
    version, resolution = struct.unpack_from("<II", blob, offset + 4)
    if version != GRID_VERSION:
        raise ValueError(f"unsupported grid checkpoint version {version}")
    (half_extent,) = struct.unpack_from("<d", blob, offset + 12)
    n_verts = (resolution + 1) ** 3
    pos = offset + 20
    sdf = np.frombuffer(blob, dtype="<f4", count=n_verts, offset=pos).astype(np.float64)
    pos += 4 * n_verts
    disp = (
        np.frombuffer(blob, dtype="<f4", count=3 * n_verts, offset=pos)
        .astype(np.float64)
        .reshape(n_verts, 3)
    )
    pos += 12 * n_verts
    grid = build_tet_grid(resolution, half_extent)
    grid.sdf = sdf
    grid.displacement = disp
    return grid, pos


def save_grid(path, grid: TetGrid) -> None:
    with open(path, "wb") as f:
        f.write(write_grid_blob(grid))


def load_grid(path) -> TetGrid:
    with open(path, "rb") as f:
        blob = f.read()
    grid, _ = read_grid_blob(blob)
    return grid
