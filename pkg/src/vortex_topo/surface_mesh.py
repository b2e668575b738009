"""Flux surfaces as triangle meshes, with Euler characteristic as a topology oracle."""

from __future__ import annotations

import math
import os
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from skimage.measure import marching_cubes

from .errors import NotCompact, NotWatertight, SeparatrixTooClose
from .field_core import (
    FloatArray,
    PerturbationParams,
    VortexParams,
    eval_psi,
    fd_gradient,
    fd_jacobian,
)
from .topology import TopologyClass, classify, critical_set, separatrix_data

BOX_HALF = 1.3
INFLATE = 0.05
PH_DISTANCE = 1e-3  # fraction of r_s


@dataclass
class TriMesh:
    vertices: FloatArray  # (V, 3)
    triangles: np.ndarray  # (F, 3) int

    @property
    def V(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def F(self) -> int:
        return int(self.triangles.shape[0])

    @property
    def E(self) -> int:
        return int(unique_edges(self.triangles)[0].shape[0])

    def triangle_areas(self) -> FloatArray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=-1)

    def centroid(self) -> FloatArray:
        return self.vertices.mean(axis=0)


def unique_edges(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Undirected edges and how many triangles use each."""
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e.sort(axis=1)
    edges, counts = np.unique(e, axis=0, return_counts=True)
    return edges, counts


def is_watertight(mesh: TriMesh) -> bool:
    if mesh.F == 0:
        return False
    _, counts = unique_edges(mesh.triangles)
    return bool(np.all(counts == 2))


def euler_characteristic(mesh: TriMesh) -> int:
    """``V - E + F`` of a closed triangulated surface.

    Raises
    ------
    NotWatertight
        Some edge is not shared by exactly two triangles.
    """
    edges, counts = unique_edges(mesh.triangles)
    if mesh.F == 0 or not np.all(counts == 2):
        raise NotWatertight(f"{int(np.sum(counts != 2))} edges not shared by exactly two triangles")
    used = np.unique(mesh.triangles)
    return int(used.size - edges.shape[0] + mesh.F)


def split_components(mesh: TriMesh) -> list[TriMesh]:
    """Connected components by shared vertices, largest first."""
    if mesh.F == 0:
        return []
    tri = mesh.triangles
    rows = np.concatenate([tri[:, 0], tri[:, 1], tri[:, 2]])
    cols = np.concatenate([tri[:, 1], tri[:, 2], tri[:, 0]])
    g = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(mesh.V, mesh.V))
    _, labels = connected_components(g, directed=False)
    tri_label = labels[tri[:, 0]]
    out = []
    for lab in np.unique(tri_label):
        t = tri[tri_label == lab]
        used, inv = np.unique(t, return_inverse=True)
        out.append(TriMesh(mesh.vertices[used], inv.reshape(-1, 3)))
    out.sort(key=lambda m: -m.F)
    return out


# ---------------------------------------------------------------------------
# flux grid


@dataclass(frozen=True)
class PsiGrid:
    origin: FloatArray  # coordinates of node (0, 0, 0)
    spacing: FloatArray  # (3,)
    values: np.ndarray  # (nx, ny, nz)

    @property
    def max_spacing(self) -> float:
        return float(np.max(self.spacing))

    def node_coords(self, axis: int) -> FloatArray:
        return self.origin[axis] + self.spacing[axis] * np.arange(self.values.shape[axis])


def grid_box(params: VortexParams, pert: PerturbationParams) -> tuple[FloatArray, FloatArray]:
    """Box of half-widths ``1.3 (r_s, r_s, z_s)`` shifted by ``alpha k (r_s^2 + z_s^2) / 3`` towards -y.

    The box is enlarged where needed so the 5%-inflated outer separatrix fits.
    """
    shift = pert.alpha * pert.k * (params.r_s**2 + params.z_s**2) / 3.0
    half = BOX_HALF * np.array([params.r_s, params.r_s, params.z_s])
    center = np.array([0.0, -shift, 0.0])
    lo, hi = center - half, center + half
    elo, ehi = separatrix_data(params, pert).outer.bounding_box(INFLATE)
    lo = np.minimum(lo, elo)
    hi = np.maximum(hi, ehi)
    # keep x and z symmetric so the mirror planes fall on grid nodes
    for ax in (0, 2):
        m = max(-lo[ax], hi[ax])
        lo[ax], hi[ax] = -m, m
    return lo, hi


_GRID_CACHE: "OrderedDict[tuple, PsiGrid]" = OrderedDict()
_GRID_LOCK = threading.Lock()
_GRID_CACHE_SIZE = 4


def _threads(threads: int | None) -> int:
    if threads:
        return threads
    env = os.environ.get("VORTEX_TOPO_THREADS")
    return max(1, int(env)) if env else min(8, os.cpu_count() or 1)


def psi_grid(
    params: VortexParams, pert: PerturbationParams, resolution: int, threads: int | None = None
) -> PsiGrid:
    """``psi`` on ``resolution + 1`` nodes per axis over :func:`grid_box`; cached per configuration."""
    key = (params, pert, int(resolution))
    with _GRID_LOCK:
        if key in _GRID_CACHE:
            _GRID_CACHE.move_to_end(key)
            return _GRID_CACHE[key]
    lo, hi = grid_box(params, pert)
    n = int(resolution) + 1
    axes = [np.linspace(lo[i], hi[i], n) for i in range(3)]
    spacing = (hi - lo) / resolution
    values = np.empty((n, n, n))
    X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")

    def slab(k: int) -> None:
        pts = np.stack([X, Y, np.full_like(X, axes[2][k])], axis=-1)
        values[:, :, k] = eval_psi(params, pert, pts)

    nt = _threads(threads)
    if nt > 1:
        with ThreadPoolExecutor(max_workers=nt) as ex:
            list(ex.map(slab, range(n)))
    else:
        for k in range(n):
            slab(k)
    grid = PsiGrid(origin=lo, spacing=spacing, values=values)
    with _GRID_LOCK:
        _GRID_CACHE[key] = grid
        while len(_GRID_CACHE) > _GRID_CACHE_SIZE:
            _GRID_CACHE.popitem(last=False)
    return grid


def separatrix_band(params: VortexParams, pert: PerturbationParams, spacing: float) -> float:
    """Flux distance from ``psi_-`` inside which the pinch of the inner separatrix is unresolved.

    The two sheets near the saddle at ``(0, y_+, 0)`` are about
    ``sqrt(|delta psi| / lambda)`` apart, with ``lambda`` the largest Hessian
    eigenvalue magnitude there; the band is where that drops below one cell.
    """
    sep = separatrix_data(params, pert)
    p = np.array([0.0, sep.y_plus, 0.0])
    h = 1e-4 * params.r_min
    H = fd_jacobian(lambda q: fd_gradient(lambda s: eval_psi(params, pert, s), q, h), p, h)
    lam = float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (H + H.T)))))
    return lam * spacing * spacing


def extract_surface(
    psi_target: float,
    params: VortexParams,
    pert: PerturbationParams,
    grid_resolution: int = 128,
    *,
    threads: int | None = None,
) -> TriMesh:
    """Marching-cubes mesh of the compact surface ``psi = psi_target``.

    Raises
    ------
    NotCompact
        ``psi_target <= 0`` or ``psi_target >= psi_+``: no compact surface.
    SeparatrixTooClose
        ``psi_target`` lies within the grid-limited band around ``psi_-``.
    ValueError
        ``grid_resolution < 64``.
    """
    if grid_resolution < 64:
        raise ValueError("grid_resolution must be >= 64")
    sep = separatrix_data(params, pert)
    if not psi_target > 0:
        raise NotCompact(f"psi={psi_target!r} <= 0: surfaces are open")
    if not psi_target < sep.psi_plus:
        raise NotCompact(f"psi={psi_target!r} >= psi_+={sep.psi_plus!r}: no flux surface")
    grid = psi_grid(params, pert, grid_resolution, threads)
    band = separatrix_band(params, pert, grid.max_spacing)
    if sep.psi_plus > sep.psi_minus and abs(psi_target - sep.psi_minus) < band:
        raise SeparatrixTooClose(
            f"|psi - psi_-| = {abs(psi_target - sep.psi_minus):.3e} below grid band {band:.3e}"
        )
    vol = grid.values
    inside = np.nonzero(vol >= psi_target)
    if inside[0].size == 0:
        raise NotCompact(f"no grid node reaches psi={psi_target!r}; refine the grid")
    lo_idx = np.maximum(np.array([a.min() for a in inside]) - 2, 0)
    hi_idx = np.minimum(np.array([a.max() for a in inside]) + 3, np.array(vol.shape))
    sub = vol[lo_idx[0]:hi_idx[0], lo_idx[1]:hi_idx[1], lo_idx[2]:hi_idx[2]]
    verts, faces, _, _ = marching_cubes(sub, level=psi_target, spacing=tuple(grid.spacing), allow_degenerate=False)
    verts = verts + grid.origin + lo_idx * grid.spacing
    mesh = TriMesh(verts.astype(float), faces.astype(np.int64))
    return _keep_compact(mesh, params, pert)


def _keep_compact(mesh: TriMesh, params: VortexParams, pert: PerturbationParams) -> TriMesh:
    """Drop components whose centroid lies outside the inflated outer-separatrix box."""
    lo, hi = separatrix_data(params, pert).outer.bounding_box(INFLATE)
    keep = [c for c in split_components(mesh) if np.all(c.centroid() >= lo) and np.all(c.centroid() <= hi)]
    if not keep:
        return TriMesh(np.empty((0, 3)), np.empty((0, 3), dtype=np.int64))
    verts = []
    tris = []
    offset = 0
    for c in keep:
        verts.append(c.vertices)
        tris.append(c.triangles + offset)
        offset += c.V
    return TriMesh(np.concatenate(verts), np.concatenate(tris))


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class SurfaceReport:
    psi_target: float
    resolution: int
    chi: int | None
    genus: int | None
    watertight: bool
    n_components: int
    class_from_chi: TopologyClass | None
    class_from_thresholds: TopologyClass
    n_vertices: int
    n_triangles: int

    @property
    def agrees(self) -> bool:
        return self.class_from_chi is not None and self.class_from_chi == self.class_from_thresholds

    def to_dict(self) -> dict:
        return {
            "psi_target": self.psi_target,
            "resolution": self.resolution,
            "chi": self.chi,
            "genus": self.genus,
            "watertight": self.watertight,
            "n_components": self.n_components,
            "class_from_chi": None if self.class_from_chi is None else str(self.class_from_chi),
            "class_from_thresholds": str(self.class_from_thresholds),
            "agrees": self.agrees,
            "n_vertices": self.n_vertices,
            "n_triangles": self.n_triangles,
        }


def class_from_chi(chi: int | None) -> TopologyClass | None:
    return {0: TopologyClass.TOROIDAL, 2: TopologyClass.SIMPLY_CONNECTED}.get(chi)


def surface_report(mesh: TriMesh, psi_target: float, resolution: int, params, pert) -> SurfaceReport:
    tight = is_watertight(mesh)
    chi = euler_characteristic(mesh) if tight else None
    genus = (2 - chi) // 2 if chi is not None and chi % 2 == 0 else None
    return SurfaceReport(
        psi_target=float(psi_target),
        resolution=int(resolution),
        chi=chi,
        genus=genus,
        watertight=tight,
        n_components=len(split_components(mesh)),
        class_from_chi=class_from_chi(chi),
        class_from_thresholds=classify(psi_target, params, pert),
        n_vertices=mesh.V,
        n_triangles=mesh.F,
    )


def classify_by_mesh(
    psi_target: float,
    params: VortexParams,
    pert: PerturbationParams,
    grid_resolution: int = 128,
    *,
    threads: int | None = None,
) -> SurfaceReport:
    """Topology class of the extracted surface from its Euler characteristic.

    The report also carries the threshold classification; a mismatch is
    reported through :attr:`SurfaceReport.agrees`, never raised.
    """
    mesh = extract_surface(psi_target, params, pert, grid_resolution, threads=threads)
    return surface_report(mesh, psi_target, grid_resolution, params, pert)


# ---------------------------------------------------------------------------
# Poincare-Hopf cross-check


def critical_circle_crossings(
    psi_target: float, params: VortexParams, pert: PerturbationParams, n: int = 4096
) -> FloatArray:
    """Points of the midplane null circle where ``psi = psi_target``, found by sign changes.

    Independent of the closed-form intersection formula: the circle is sampled
    densely and each bracket refined with Brent's method.
    """
    cs = critical_set(params, pert)
    c, R = cs.circle_center, cs.circle_radius

    def point(t: float) -> FloatArray:
        return np.array([c[0] + R * math.sin(t), c[1] + R * math.cos(t), 0.0])

    def g(t: float) -> float:
        return float(eval_psi(params, pert, point(t))) - psi_target

    ts = 2.0 * np.pi * np.arange(n + 1) / n
    pts = np.stack([c[0] + R * np.sin(ts), c[1] + R * np.cos(ts), np.zeros_like(ts)], axis=-1)
    vals = eval_psi(params, pert, pts) - psi_target
    out = []
    for i in range(n):
        a, b = vals[i], vals[i + 1]
        if a == 0.0:
            out.append(point(ts[i]))
        elif a * b < 0:
            out.append(point(brentq(g, ts[i], ts[i + 1], xtol=1e-15)))
    return np.array(out) if out else np.empty((0, 3))


def _segment_distance(p: FloatArray, a: FloatArray, b: FloatArray) -> FloatArray:
    ab = b - a
    t = np.einsum("ij,ij->i", p - a, ab) / np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
    t = np.clip(t, 0.0, 1.0)
    return np.linalg.norm(p - (a + ab * t[:, None]), axis=-1)


def point_triangle_distance(p: FloatArray, a: FloatArray, b: FloatArray, c: FloatArray) -> FloatArray:
    """Distance from point ``p`` to each triangle ``(a[i], b[i], c[i])``.

    The face projection is used when it falls inside the triangle; otherwise the
    nearest point lies on one of the edges.
    """
    n = np.cross(b - a, c - a)
    nn = np.einsum("ij,ij->i", n, n)
    dist_plane = np.einsum("ij,ij->i", p - a, n) / np.sqrt(np.maximum(nn, 1e-300))
    q = p - n * (np.einsum("ij,ij->i", p - a, n) / np.maximum(nn, 1e-300))[:, None]
    inside = np.ones(a.shape[0], dtype=bool)
    for u, v in ((a, b), (b, c), (c, a)):
        inside &= np.einsum("ij,ij->i", np.cross(v - u, q - u), n) >= 0
    edge = np.minimum(np.minimum(_segment_distance(p, a, b), _segment_distance(p, b, c)), _segment_distance(p, c, a))
    return np.where(inside, np.abs(dist_plane), edge)


def distance_to_mesh(mesh: TriMesh, p: FloatArray, search_radius: float) -> float:
    """Exact distance from ``p`` to the mesh, searching triangles with a vertex within ``search_radius``."""
    tri = _triangles_near(mesh, p, search_radius)
    if tri.size == 0:
        return math.inf
    v = mesh.vertices
    return float(np.min(point_triangle_distance(p, v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]])))


def _triangles_near(mesh: TriMesh, p: FloatArray, radius: float) -> np.ndarray:
    near = cKDTree(mesh.vertices).query_ball_point(p, radius)
    if not near:
        return np.empty((0, 3), dtype=np.int64)
    return mesh.triangles[np.isin(mesh.triangles, np.array(near)).any(axis=1)]


def project_to_level(points: FloatArray, psi_target: float, params: VortexParams, pert: PerturbationParams,
                     iterations: int = 3) -> FloatArray:
    """Newton steps along ``grad psi`` onto the level set ``psi = psi_target``."""
    v = np.array(points, dtype=float)
    h = 1e-7 * params.r_min
    for _ in range(iterations):
        g = fd_gradient(lambda s: eval_psi(params, pert, s), v, h)
        f = eval_psi(params, pert, v) - psi_target
        v -= (f / np.maximum(np.sum(g * g, axis=-1), 1e-300))[:, None] * g
    return v


def refined_distance(
    mesh: TriMesh, p: FloatArray, psi_target: float, params: VortexParams, pert: PerturbationParams,
    search_radius: float, levels: int = 3,
) -> float:
    """Distance from ``p`` to the local mesh patch after midpoint subdivision onto the level set.

    Triangles with a vertex within ``search_radius`` are split 1-to-4 ``levels``
    times, each new vertex projected onto ``psi = psi_target``.  This removes the
    chord error of linear interpolation at strongly curved caps; the patch is
    only used for the distance, so the T-junctions at its rim are harmless.
    """
    tri = _triangles_near(mesh, p, search_radius)
    if tri.size == 0:
        return math.inf
    a, b, c = (mesh.vertices[tri[:, i]] for i in range(3))
    for _ in range(levels):
        ab, bc, ca = (project_to_level(0.5 * (u + w), psi_target, params, pert) for u, w in ((a, b), (b, c), (c, a)))
        a, b, c = (
            np.concatenate([a, ab, ca, ab]),
            np.concatenate([ab, b, bc, bc]),
            np.concatenate([ca, bc, c, ca]),
        )
    return float(np.min(point_triangle_distance(p, a, b, c)))


def critical_points_on_surface(
    mesh: TriMesh, psi_target: float, params: VortexParams, pert: PerturbationParams, tol: float = PH_DISTANCE,
    refine_levels: int = 5,
) -> FloatArray:
    """Field nulls lying on the level set and within ``tol r_s`` of the (locally refined) mesh.

    Only the midplane circle can meet a compact surface; the axial nulls sit at
    ``psi = 0``.  Each null is elliptic with index +1, so the count should equal
    the Euler characteristic.
    """
    pts = critical_circle_crossings(psi_target, params, pert)
    if pts.shape[0] == 0 or mesh.F == 0:
        return np.empty((0, 3))
    edge = mesh.vertices[mesh.triangles[:, 1]] - mesh.vertices[mesh.triangles[:, 0]]
    radius = 3.0 * float(np.max(np.linalg.norm(edge, axis=-1)))
    keep = [
        p for p in pts
        if refined_distance(mesh, p, psi_target, params, pert, radius, refine_levels) < tol * params.r_s
    ]
    return np.array(keep) if keep else np.empty((0, 3))
