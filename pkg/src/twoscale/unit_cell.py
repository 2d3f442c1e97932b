"""Periodic reference cell Y = [0, 1]^dim with a solid core, a water film and air.

Phases are labelled with :class:`Phase`. The solid disk (ball) of radius
``r_solid`` sits at the cell centre, wrapped by water up to ``r_water``; air
fills the rest. The ``BRIDGED_WATER`` variant adds straight water channels of
width ``bridge_width`` along the selected axes so that water percolates from
cell to cell.

Meshing (2D only) is a constrained Delaunay triangulation built with
``triangle``; the interfaces are inscribed polygons whose vertices lie on the
exact curves, and boundary vertices on opposite faces coincide so periodic
identification is exact.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import triangle

from .errors import MeshFailure, MissingInterface, RadiusOrdering, UnsupportedDim, GeometryError

CENTER = 0.5


class Phase(enum.IntEnum):
    SOLID = 0
    WATER = 1
    AIR = 2


class Variant(str, enum.Enum):
    ANNULUS = "annulus"
    BRIDGED_WATER = "bridged_water"


class Interface(str, enum.Enum):
    GAMMA_SW = "GammaSW"
    GAMMA_WA = "GammaWA"


_INTERFACE_PHASES = {
    Interface.GAMMA_SW: (Phase.WATER, Phase.SOLID),
    Interface.GAMMA_WA: (Phase.WATER, Phase.AIR),
}


@dataclass(frozen=True)
class CellGeometry:
    dim: int
    r_solid: float
    r_water: float
    variant: Variant = Variant.ANNULUS
    bridge_width: float = 0.0
    bridge_axes: tuple[int, ...] = ()

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise UnsupportedDim(f"dim must be 2 or 3, got {self.dim}")
        if not (0.0 < self.r_solid < self.r_water < CENTER):
            raise RadiusOrdering(
                "radii must satisfy 0 < r_solid < r_water < 0.5 "
                f"(got r_solid={self.r_solid}, r_water={self.r_water})"
            )
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.variant is Variant.BRIDGED_WATER:
            if not (0.0 < self.bridge_width <= self.r_water):
                raise GeometryError(
                    f"bridge_width must lie in (0, r_water], got {self.bridge_width}"
                )
            axes = tuple(sorted(set(int(a) for a in self.bridge_axes)))
            if not axes or any(a < 0 or a >= self.dim for a in axes):
                raise GeometryError(f"invalid bridge_axes {self.bridge_axes} for dim={self.dim}")
            object.__setattr__(self, "bridge_axes", axes)
        else:
            object.__setattr__(self, "bridge_width", 0.0)
            object.__setattr__(self, "bridge_axes", ())

    @property
    def bridged(self) -> bool:
        return self.variant is Variant.BRIDGED_WATER

    def phase_of(self, points) -> np.ndarray:
        """Exact phase membership of points given in cell coordinates (wrapped into Y)."""
        y = np.mod(np.atleast_2d(np.asarray(points, dtype=float)), 1.0)
        if y.shape[1] != self.dim:
            raise ValueError(f"points must have {self.dim} columns")
        r = np.linalg.norm(y - CENTER, axis=1)
        water = r < self.r_water
        if self.bridged:
            off = np.abs(y - CENTER) <= 0.5 * self.bridge_width
            for axis in self.bridge_axes:
                others = [j for j in range(self.dim) if j != axis]
                water |= np.all(off[:, others], axis=1)
        labels = np.full(len(y), Phase.AIR, dtype=np.int8)
        labels[water] = Phase.WATER
        labels[r < self.r_solid] = Phase.SOLID
        return labels

    def analytic_measures(self) -> dict[str, float] | None:
        """Closed-form phase volumes and interface measures, or None when unavailable."""
        rs, rw = self.r_solid, self.r_water
        if self.dim == 3:
            if self.bridged:
                return None
            vol_s = 4.0 / 3.0 * math.pi * rs**3
            vol_w = 4.0 / 3.0 * math.pi * rw**3 - vol_s
            return dict(vol_s=vol_s, vol_w=vol_w, vol_a=1.0 - vol_s - vol_w,
                        area_sw=4.0 * math.pi * rs**2, area_wa=4.0 * math.pi * rw**2)
        vol_s = math.pi * rs**2
        vol_w = math.pi * (rw**2 - rs**2)
        area_wa = 2.0 * math.pi * rw
        if self.bridged:
            w = self.bridge_width
            half = 0.5 * w
            chord_x = math.sqrt(rw**2 - half**2)
            alpha = math.asin(half / rw)
            n_arms = 2 * len(self.bridge_axes)
            arm_area = 0.5 * w - half * chord_x - rw**2 * alpha
            vol_w += n_arms * arm_area
            area_wa += n_arms * (-2.0 * rw * alpha + 2.0 * (CENTER - chord_x))
        return dict(vol_s=vol_s, vol_w=vol_w, vol_a=1.0 - vol_s - vol_w,
                    area_sw=2.0 * math.pi * rs, area_wa=area_wa)


def build_geometry(dim: int = 2, r_solid: float = 0.2, r_water: float = 0.35,
                   variant: Variant | str = Variant.ANNULUS, bridge_width: float = 0.0,
                   bridge_axes=None) -> CellGeometry:
    """Validated cell geometry; bridges default to every axis."""
    variant = Variant(variant)
    if bridge_axes is None:
        bridge_axes = tuple(range(dim)) if variant is Variant.BRIDGED_WATER else ()
    return CellGeometry(dim=dim, r_solid=r_solid, r_water=r_water, variant=variant,
                        bridge_width=bridge_width, bridge_axes=tuple(bridge_axes))


@dataclass(frozen=True, eq=False)
class CellMesh:
    """Triangulation of Y with phase labels, periodic pairs and interface facets.

    ``periodic_pairs`` rows are ``(master, slave, axis)``: the master sits on
    the face ``y_axis = 0`` and the slave on ``y_axis = 1``.
    ``interface_facets`` maps an :class:`Interface` to ``(edges, normals)``;
    normals point out of the water phase.
    """

    nodes: np.ndarray
    simplices: np.ndarray
    phase_label: np.ndarray
    periodic_pairs: np.ndarray
    interface_facets: dict
    h: float
    geometry: CellGeometry | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def volumes(self) -> np.ndarray:
        if "volumes" not in self._cache:
            p = self.nodes[self.simplices]
            e1 = p[:, 1] - p[:, 0]
            e2 = p[:, 2] - p[:, 0]
            self._cache["volumes"] = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        return self._cache["volumes"]

    def partner(self, node: int, axis: int) -> int:
        """Periodic partner of ``node`` across ``axis`` (the map is an involution)."""
        for master, slave, ax in self.periodic_pairs:
            if ax != axis:
                continue
            if master == node:
                return int(slave)
            if slave == node:
                return int(master)
        raise KeyError(f"node {node} has no partner across axis {axis}")

    @property
    def representative(self) -> np.ndarray:
        """Map each node to the representative of its periodic equivalence class."""
        if "rep" not in self._cache:
            parent = np.arange(len(self.nodes))

            def find(i):
                while parent[i] != i:
                    parent[i] = parent[parent[i]]
                    i = parent[i]
                return i

            for master, slave, _ in self.periodic_pairs:
                a, b = find(master), find(slave)
                if a != b:
                    parent[max(a, b)] = min(a, b)
            self._cache["rep"] = np.array([find(i) for i in range(len(parent))])
        return self._cache["rep"]


def _subdivide(p0, p1, h):
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    n = max(1, math.ceil(np.linalg.norm(p1 - p0) / h - 1e-9))
    t = np.arange(n + 1) / n
    pts = p0 + np.outer(t, p1 - p0)
    pts[0], pts[-1] = p0, p1
    return pts


class _PSLG:
    def __init__(self):
        self.vertices: list[tuple[float, float]] = []
        self.index: dict[tuple[float, float], int] = {}
        self.segments: list[tuple[int, int]] = []

    def vertex(self, p) -> int:
        key = (round(float(p[0]), 12), round(float(p[1]), 12))
        if key not in self.index:
            self.index[key] = len(self.vertices)
            self.vertices.append((float(p[0]), float(p[1])))
        return self.index[key]

    def polyline(self, pts):
        ids = [self.vertex(p) for p in pts]
        for a, b in zip(ids[:-1], ids[1:]):
            if a != b:
                self.segments.append((a, b))


def _face_params(geom: CellGeometry, normal_axis: int, h: float) -> np.ndarray:
    breaks = [0.0, 1.0]
    if geom.bridged and normal_axis in geom.bridge_axes:
        half = 0.5 * geom.bridge_width
        breaks += [CENTER - half, CENTER + half]
    breaks = sorted(breaks)
    params = [0.0]
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(1, math.ceil((b - a) / h - 1e-9))
        params.extend(a + (b - a) * np.arange(1, n + 1) / n)
    params[-1] = 1.0
    return np.asarray(params)


def _circle(pslg: _PSLG, r: float, h: float, n_min: int = 8):
    n = max(n_min, math.ceil(2.0 * math.pi * r / h))
    theta = 2.0 * math.pi * np.arange(n + 1) / n
    pts = CENTER + r * np.c_[np.cos(theta), np.sin(theta)]
    pts[-1] = pts[0]
    pslg.polyline(pts)


def _bridged_outline(pslg: _PSLG, geom: CellGeometry, h: float):
    r = geom.r_water
    half = 0.5 * geom.bridge_width
    alpha = math.asin(half / r)
    chord = math.sqrt(r * r - half * half)
    arms = []
    for axis in geom.bridge_axes:
        arms += [(axis, +1), (axis, -1)]
    centres = {(0, +1): 0.0, (1, +1): 0.5 * math.pi, (0, -1): math.pi, (1, -1): 1.5 * math.pi}

    def corner(axis, sign, side):
        p = np.empty(2)
        p[axis] = CENTER + sign * chord
        p[1 - axis] = CENTER + side * half
        return p

    intervals = []
    for axis, sign in arms:
        phi = centres[(axis, sign)]
        # corner at angle phi - alpha and phi + alpha (counterclockwise order)
        lo = corner(axis, sign, -1 if (axis, sign) in ((0, +1), (1, -1)) else +1)
        hi = corner(axis, sign, +1 if (axis, sign) in ((0, +1), (1, -1)) else -1)
        intervals.append((phi - alpha, phi + alpha, lo, hi))
        for side in (-1, +1):
            start = corner(axis, sign, side)
            end = start.copy()
            end[axis] = 1.0 if sign > 0 else 0.0
            pslg.polyline(_subdivide(start, end, h))
    intervals.sort(key=lambda iv: iv[0])
    for k, (_, end_angle, _, hi) in enumerate(intervals):
        start_angle_next, _, lo_next, _ = intervals[(k + 1) % len(intervals)]
        if start_angle_next <= end_angle:
            start_angle_next += 2.0 * math.pi
        span = start_angle_next - end_angle
        n = max(2, math.ceil(r * span / h))
        theta = end_angle + span * np.arange(n + 1) / n
        pts = CENTER + r * np.c_[np.cos(theta), np.sin(theta)]
        pts[0], pts[-1] = hi, lo_next
        pslg.polyline(pts)


def mesh_cell(geom: CellGeometry, h: float) -> CellMesh:
    """Interface-conforming triangulation of the unit cell with target edge length ``h``."""
    if geom.dim != 2:
        raise UnsupportedDim("meshing is implemented for dim=2 only")
    gaps = [geom.r_water - geom.r_solid, CENTER - geom.r_water]
    if geom.bridged:
        gaps.append(geom.bridge_width)
    if not (0.0 < h < 0.25) or h > min(gaps):
        raise MeshFailure(
            f"h={h} cannot resolve the interfaces (needs 0 < h < 0.25 and h <= {min(gaps):.4g})"
        )

    pslg = _PSLG()
    px = _face_params(geom, 0, h)  # positions along y on the faces x=0, x=1
    py = _face_params(geom, 1, h)
    pslg.polyline(np.c_[py, np.zeros_like(py)])
    pslg.polyline(np.c_[np.ones_like(px), px])
    pslg.polyline(np.c_[py[::-1], np.ones_like(py)])
    pslg.polyline(np.c_[np.zeros_like(px), px[::-1]])
    _circle(pslg, geom.r_solid, h)
    if geom.bridged:
        _bridged_outline(pslg, geom, h)
    else:
        _circle(pslg, geom.r_water, h)

    d = 0.25 * h
    seeds = [
        [CENTER, CENTER, int(Phase.SOLID) + 1, 0],
        [CENTER + 0.5 * (geom.r_solid + geom.r_water), CENTER, int(Phase.WATER) + 1, 0],
    ]
    for cx, cy in [(d, d), (1 - d, d), (d, 1 - d), (1 - d, 1 - d)]:
        seeds.append([cx, cy, int(Phase.AIR) + 1, 0])
    max_area = math.sqrt(3.0) / 4.0 * h * h
    try:
        out = triangle.triangulate(
            dict(vertices=np.asarray(pslg.vertices), segments=np.asarray(pslg.segments),
                 regions=np.asarray(seeds, dtype=float)),
            f"pq28a{max_area:.15f}AYQ",
        )
    except Exception as exc:  # triangle raises bare RuntimeError
        raise MeshFailure(f"triangulation failed: {exc}") from exc

    nodes = np.asarray(out["vertices"], dtype=float)
    simplices = np.asarray(out["triangles"], dtype=np.int64)
    attr = np.asarray(out["triangle_attributes"]).ravel().astype(int)
    if np.any(attr == 0):
        raise MeshFailure("some triangles were not reached by a phase seed")
    labels = (attr - 1).astype(np.int8)

    p = nodes[simplices]
    area = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    flip = area < 0
    simplices[flip] = simplices[flip][:, [0, 2, 1]]
    if np.any(np.abs(area) <= 1e-14):
        raise MeshFailure("degenerate triangle produced")

    pairs = _periodic_pairs(nodes)
    facets = _interface_facets(nodes, simplices, labels)
    return CellMesh(nodes=nodes, simplices=simplices, phase_label=labels,
                    periodic_pairs=pairs, interface_facets=facets, h=float(h), geometry=geom)


def _periodic_pairs(nodes: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    pairs = []
    for axis in range(nodes.shape[1]):
        other = [j for j in range(nodes.shape[1]) if j != axis]
        lo = np.flatnonzero(np.abs(nodes[:, axis]) <= tol)
        hi = np.flatnonzero(np.abs(nodes[:, axis] - 1.0) <= tol)
        key_hi = {tuple(np.round(nodes[i, other], 12)): i for i in hi}
        if len(lo) != len(hi) or len(key_hi) != len(hi):
            raise MeshFailure(f"faces normal to axis {axis} do not match")
        for i in lo:
            j = key_hi.get(tuple(np.round(nodes[i, other], 12)))
            if j is None:
                raise MeshFailure(f"boundary node {i} has no periodic partner across axis {axis}")
            pairs.append((i, j, axis))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 3)


def _interface_facets(nodes, simplices, labels) -> dict:
    local = np.array([[0, 1], [1, 2], [2, 0]])
    edges = simplices[:, local].reshape(-1, 2)
    owner = np.repeat(np.arange(len(simplices)), 3)
    key = np.sort(edges, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    order = np.argsort(inverse, kind="stable")
    shared = counts[inverse[order]] == 2
    first = order[shared][0::2]
    second = order[shared][1::2]
    la, lb = labels[owner[first]], labels[owner[second]]
    centroids = nodes[simplices].mean(axis=1)
    facets = {}
    for which, (pa, pb) in _INTERFACE_PHASES.items():
        mask_ab = (la == pa) & (lb == pb)
        mask_ba = (la == pb) & (lb == pa)
        water_side = np.r_[first[mask_ab], second[mask_ba]]
        e = np.sort(edges[water_side], axis=1)
        order_e = np.lexsort((e[:, 1], e[:, 0]))
        e, water_side = e[order_e], water_side[order_e]
        t = nodes[e[:, 1]] - nodes[e[:, 0]]
        n = np.c_[t[:, 1], -t[:, 0]]
        n /= np.linalg.norm(n, axis=1)[:, None]
        mid = nodes[e].mean(axis=1)
        outward = np.einsum("ij,ij->i", n, mid - centroids[owner[water_side]]) < 0
        n[outward] *= -1.0
        facets[which] = (e, n)
    bad = ((la == Phase.SOLID) & (lb == Phase.AIR)) | ((la == Phase.AIR) & (lb == Phase.SOLID))
    if np.any(bad):
        raise MeshFailure("mesh contains solid-air facets")
    return facets


def uniform_mesh(n: int, label: Phase = Phase.WATER) -> CellMesh:
    """Structured periodic triangulation of Y carrying a single phase (test geometry)."""
    t = np.linspace(0.0, 1.0, n + 1)
    X, Yc = np.meshgrid(t, t, indexing="ij")
    nodes = np.c_[X.ravel(), Yc.ravel()]
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    simplices = np.vstack([np.c_[a, b, c], np.c_[a, c, d]])
    labels = np.full(len(simplices), int(label), dtype=np.int8)
    empty = (np.zeros((0, 2), dtype=np.int64), np.zeros((0, 2)))
    facets = {Interface.GAMMA_SW: empty, Interface.GAMMA_WA: empty}
    return CellMesh(nodes=nodes, simplices=simplices, phase_label=labels,
                    periodic_pairs=_periodic_pairs(nodes), interface_facets=facets, h=1.0 / n)


@dataclass(frozen=True)
class InterfaceQuadrature:
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    which: Interface

    @property
    def measure(self) -> float:
        return float(np.sum(self.weights))

    def __len__(self):
        return len(self.weights)


def interface_quadrature(mesh: CellMesh, which: Interface | str) -> InterfaceQuadrature:
    """Midpoint rule on the interface facets (exact for integrands linear along each facet)."""
    which = Interface(which)
    edges, normals = mesh.interface_facets.get(which, (np.zeros((0, 2), int), None))
    if len(edges) == 0:
        raise MissingInterface(f"mesh has no {which.value} facets")
    p = mesh.nodes[edges]
    return InterfaceQuadrature(points=p.mean(axis=1),
                               weights=np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
                               normals=normals.copy(), which=which)


def lump_quadrature(quad: InterfaceQuadrature, n_points: int) -> InterfaceQuadrature:
    """Aggregate facets into ``n_points`` equal angular sectors about the cell centre.

    Weights are summed per sector so the total measure is preserved exactly;
    each sector point is the weight-averaged facet midpoint.
    """
    rel = quad.points - CENTER
    angle = np.mod(np.arctan2(rel[:, 1], rel[:, 0]), 2.0 * np.pi)
    sector = np.minimum((angle / (2.0 * np.pi) * n_points).astype(int), n_points - 1)
    weights = np.bincount(sector, weights=quad.weights, minlength=n_points)
    if np.any(weights == 0):
        raise MissingInterface(f"{n_points} sectors is finer than the interface discretization")
    pts = np.stack([np.bincount(sector, weights=quad.weights * quad.points[:, k], minlength=n_points)
                    for k in range(2)], axis=1) / weights[:, None]
    nrm = np.stack([np.bincount(sector, weights=quad.weights * quad.normals[:, k], minlength=n_points)
                    for k in range(2)], axis=1)
    nrm /= np.linalg.norm(nrm, axis=1)[:, None]
    return InterfaceQuadrature(points=pts, weights=weights, normals=nrm, which=quad.which)


@dataclass(frozen=True)
class PhaseMeasures:
    vol_s: float
    vol_w: float
    vol_a: float
    area_sw: float
    area_wa: float

    def volume(self, phase: Phase) -> float:
        return (self.vol_s, self.vol_w, self.vol_a)[int(phase)]

    def as_dict(self) -> dict[str, float]:
        return dict(vol_s=self.vol_s, vol_w=self.vol_w, vol_a=self.vol_a,
                    area_sw=self.area_sw, area_wa=self.area_wa)


def phase_measures(mesh: CellMesh) -> PhaseMeasures:
    vols = np.bincount(mesh.phase_label, weights=mesh.volumes, minlength=3)
    areas = []
    for which in (Interface.GAMMA_SW, Interface.GAMMA_WA):
        edges = mesh.interface_facets[which][0]
        p = mesh.nodes[edges]
        areas.append(float(np.sum(np.linalg.norm(p[:, 1] - p[:, 0], axis=1))) if len(edges) else 0.0)
    return PhaseMeasures(*(float(v) for v in vols), *areas)


def dump_mesh(mesh: CellMesh, path) -> None:
    """Write the mesh as plain text: NODES, SIMPLICES (with phase label), PERIODIC sections."""
    lines = [f"NODES {len(mesh.nodes)}"]
    lines += [" ".join(f"{c:.17g}" for c in p) for p in mesh.nodes]
    lines.append(f"SIMPLICES {len(mesh.simplices)}")
    lines += [" ".join(str(int(i)) for i in s) + f" {Phase(int(l)).name}"
              for s, l in zip(mesh.simplices, mesh.phase_label)]
    lines.append(f"PERIODIC {len(mesh.periodic_pairs)}")
    lines += [" ".join(str(int(i)) for i in row) for row in mesh.periodic_pairs]
    Path(path).write_text("\n".join(lines) + "\n")
