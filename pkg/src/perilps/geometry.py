"""Benchmark domains, point clouds, collar classification and neighbor search.

Clouds discretize the interaction region: the closed domain plus an exterior
collar of depth exactly 2*delta where volume constraints live.  Construction
is single threaded; the resulting PointCloud arrays are frozen afterward and
safe for concurrent reads.

Conventions that the rest of the code relies on:
  * neighborhoods are closed balls |x_j - x_i| <= delta, with a 1e-9 relative
    slack so lattice nodes sitting exactly on the interaction sphere are kept;
  * interior collar flags follow the strict definition dist < rho, exterior
    collar flags are inclusive (0 < dist <= rho);
  * cell areas partition the domain exactly (edge cells are clipped), so the
    areas of the nodes inside Omega sum to |Omega|.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.spatial import cKDTree

REL_TOL = 1e-9


class GeometryError(ValueError):
    pass


class RegionTag(IntEnum):
    INTERIOR = 0
    GAMMA_MINUS = 1  # inside Omega, within 2*delta of the boundary
    GAMMA_PLUS = 2   # outside Omega, within 2*delta of the boundary


@dataclass(frozen=True)
class Domain:
    """Square (center, half-width) or origin-centered annulus (r0 < r1)."""

    kind: str
    center: tuple = (0.0, 0.0)
    half_width: float = 0.0
    r_inner: float = 0.0
    r_outer: float = 0.0

    @staticmethod
    def square(half_width: float, center=(0.0, 0.0)) -> "Domain":
        if half_width <= 0.0:
            raise GeometryError("square half-width must be positive")
        return Domain("square", center=tuple(center), half_width=float(half_width))

    @staticmethod
    def annulus(r_inner: float, r_outer: float) -> "Domain":
        if not 0.0 < r_inner < r_outer:
            raise GeometryError("annulus requires 0 < R0 < R1")
        return Domain("annulus", r_inner=float(r_inner), r_outer=float(r_outer))

    @property
    def extent(self) -> float:
        return 2.0 * self.half_width if self.kind == "square" else self.r_outer - self.r_inner

    @property
    def area(self) -> float:
        if self.kind == "square":
            return (2.0 * self.half_width) ** 2
        return np.pi * (self.r_outer**2 - self.r_inner**2)

    def signed_distance(self, points) -> np.ndarray:
        """Exact signed distance to the boundary, negative inside Omega."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "square":
            q = np.abs(p - np.asarray(self.center)) - self.half_width
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(np.max(q, axis=1), 0.0)
            return outside + inside
        r = np.linalg.norm(p, axis=1)
        return np.maximum(self.r_inner - r, r - self.r_outer)

    def project_boundary(self, points) -> np.ndarray:
        """Closest boundary point per node, analytic per shape.

        Square: exterior points clamp onto the boundary (the corner Voronoi
        region maps to the corner); interior points move to the nearest face,
        ties broken toward the first axis.  Annulus: radial projection onto
        the nearer circle, ties toward the inner one.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float)).copy()
        if self.kind == "square":
            c = np.asarray(self.center)
            hw = self.half_width
            loc = p - c
            inside = np.max(np.abs(loc), axis=1) <= hw * (1.0 + REL_TOL)
            proj = np.clip(loc, -hw, hw)
            if np.any(inside):
                sub = loc[inside]
                axis = np.argmax(np.abs(sub), axis=1)
                snapped = sub.copy()
                rows = np.arange(len(sub))
                vals = sub[rows, axis]
                snapped[rows, axis] = np.where(vals >= 0.0, hw, -hw)
                proj[inside] = snapped
            return proj + c
        r = np.linalg.norm(p, axis=1)
        if np.any(r == 0.0):
            bad = int(np.nonzero(r == 0.0)[0][0])
            raise GeometryError(f"boundary projection undefined at annulus center (node {bad})")
        target = np.where(np.abs(r - self.r_inner) <= np.abs(r - self.r_outer),
                          self.r_inner, self.r_outer)
        return p * (target / r)[:, None]


@dataclass(frozen=True)
class RegionInfo:
    """Node classification against the domain and collar depths."""

    tags: np.ndarray
    inside: np.ndarray
    dist: np.ndarray
    gm_delta: np.ndarray
    gm_2delta: np.ndarray
    gp_delta: np.ndarray
    gp_2delta: np.ndarray


def classify_regions(points, domain: Domain, delta: float) -> RegionInfo:
    """Tag nodes by exact signed distance; rejects nodes beyond the 2*delta collar."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    sd = domain.signed_distance(p)
    eps = REL_TOL * delta
    inside = sd <= eps
    dist = np.abs(sd)
    too_far = ~inside & (dist > 2.0 * delta * (1.0 + REL_TOL))
    if np.any(too_far):
        bad = int(np.nonzero(too_far)[0][0])
        raise GeometryError(
            f"node {bad} at {p[bad]} lies {dist[bad]:.6g} outside the domain, "
            f"beyond the 2*delta collar {2 * delta:.6g}")
    gm_delta = inside & (dist < delta * (1.0 - REL_TOL))
    gm_2delta = inside & (dist < 2.0 * delta * (1.0 - REL_TOL))
    gp_delta = ~inside & (dist <= delta * (1.0 + REL_TOL))
    gp_2delta = ~inside
    tags = np.full(len(p), RegionTag.GAMMA_PLUS, dtype=np.int8)
    tags[inside] = RegionTag.GAMMA_MINUS
    tags[inside & ~gm_2delta] = RegionTag.INTERIOR
    return RegionInfo(tags, inside, dist, gm_delta, gm_2delta, gp_delta, gp_2delta)


def build_neighbor_lists(points, delta: float):
    """Closed-ball neighbor lists as CSR (indptr, indices), symmetric by construction."""
    p = np.asarray(points, dtype=float)
    n = len(p)
    tree = cKDTree(p)
    pairs = tree.query_pairs(r=delta * (1.0 + REL_TOL), output_type="ndarray")
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    counts = np.bincount(rows, minlength=n)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    if np.any(counts == 0):
        warnings.warn(f"{int(np.sum(counts == 0))} nodes have empty delta-neighborhoods",
                      stacklevel=2)
    return indptr, cols.astype(np.int64)


@dataclass
class PointCloud:
    """Immutable node set with region tags, cell areas and neighbor lists.

    ``frames`` holds an optional per-node rotation into a canonical local
    frame (polar grids: radial frame); quadrature uses it to recognize
    congruent neighborhoods.  ``mirror_partner[i]`` is the index of the
    reflection partner 2*xbar - x for exterior nodes of mirror grids, -1
    elsewhere.
    """

    domain: Domain
    h: float
    delta: float
    points: np.ndarray
    regions: RegionInfo
    cell_areas: np.ndarray
    neighbor_indptr: np.ndarray
    neighbor_cols: np.ndarray
    mirror: bool = False
    mirror_partner: np.ndarray | None = None
    frame_angles: np.ndarray | None = None
    grid: str = "cartesian"

    def __post_init__(self):
        for arr in (self.points, self.cell_areas, self.neighbor_indptr, self.neighbor_cols):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.points)

    @property
    def inside(self) -> np.ndarray:
        return self.regions.inside

    def neighbor_indices(self, i: int) -> np.ndarray:
        return self.neighbor_cols[self.neighbor_indptr[i]:self.neighbor_indptr[i + 1]]

    @property
    def theta_mask(self) -> np.ndarray:
        """Nodes of Omega union Gamma+_delta, where the dilatation is defined."""
        return self.regions.inside | self.regions.gp_delta


def _finish_cloud(domain, h, delta, pts, areas, *, mirror, partner, frame_angles, grid):
    regions = classify_regions(pts, domain, delta)
    indptr, cols = build_neighbor_lists(pts, delta)
    return PointCloud(domain, h, delta, pts, regions, areas, indptr, cols,
                      mirror=mirror, mirror_partner=partner,
                      frame_angles=frame_angles, grid=grid)


def _square_cell_areas(domain, pts, inside, h):
    """Lattice cells clipped to the square; exterior cells stay h^2."""
    c = np.asarray(domain.center)
    hw = domain.half_width
    lo = np.maximum(pts - h / 2.0, c - hw)
    hi = np.minimum(pts + h / 2.0, c + hw)
    clipped = np.prod(np.maximum(hi - lo, 0.0), axis=1)
    return np.where(inside, clipped, h * h)


def _annulus_cell_areas(domain, pts, inside, h, subgrid=64):
    """Lattice cells clipped to the annulus via deterministic midpoint subsampling."""
    areas = np.full(len(pts), h * h)
    sd = domain.signed_distance(pts)
    straddle = inside & (np.abs(sd) < h * 0.7072)
    if np.any(straddle):
        offs = (np.arange(subgrid) + 0.5) / subgrid - 0.5
        ox, oy = np.meshgrid(offs, offs, indexing="ij")
        sub = np.stack([ox.ravel(), oy.ravel()], axis=1) * h
        centers = pts[straddle]
        samples = centers[:, None, :] + sub[None, :, :]
        r = np.linalg.norm(samples.reshape(-1, 2), axis=1).reshape(len(centers), -1)
        frac = np.mean((r >= domain.r_inner) & (r <= domain.r_outer), axis=1)
        areas[straddle] = h * h * frac
    return areas


def build_cartesian_cloud(domain: Domain, h: float, delta: float,
                          mirror: bool = False) -> PointCloud:
    """Lattice nodes (p1*h, p2*h) in the closed domain plus an exterior collar.

    With ``mirror=False`` the collar is the lattice continuation; with
    ``mirror=True`` every exterior node is the exact reflection 2*xbar - x of
    an interior node.  On the square both constructions yield the same point
    set (the lattice is reflection closed when the faces are lattice aligned),
    so only the partner bookkeeping differs; on the annulus the mirror collar
    consists of off-lattice reflected nodes, one per boundary component the
    source is within 2*delta of.
    """
    if h <= 0.0:
        raise GeometryError("grid spacing must be positive")
    if h >= domain.extent:
        raise GeometryError(f"grid spacing {h} is not below the domain extent {domain.extent}")
    if delta < 2.0 * h * (1.0 - REL_TOL):
        raise GeometryError(f"horizon {delta} must be at least 2h = {2 * h} so collars contain nodes")

    buf = 2.0 * delta * (1.0 + REL_TOL)
    if domain.kind == "square":
        c = np.asarray(domain.center)
        lo = np.floor((c - domain.half_width - buf) / h).astype(int)
        hi = np.ceil((c + domain.half_width + buf) / h).astype(int)
    else:
        lo = np.floor((-domain.r_outer - buf) / h * np.ones(2)).astype(int)
        hi = np.ceil((domain.r_outer + buf) / h * np.ones(2)).astype(int)
    px, py = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1), indexing="ij")
    lattice = np.stack([px.ravel(), py.ravel()], axis=1)
    cand = lattice * h
    sd = domain.signed_distance(cand)
    eps = REL_TOL * delta
    inside = sd <= eps
    keep_ext = ~inside & (sd <= 2.0 * delta * (1.0 + REL_TOL))

    partner = None
    if domain.kind == "square":
        keep = inside | keep_ext
        pts = cand[keep]
        lat = lattice[keep]
        node_inside = inside[keep]
        areas = _square_cell_areas(domain, pts, node_inside, h)
        if mirror:
            index_of = {(int(a), int(b)): i for i, (a, b) in enumerate(lat)}
            partner = np.full(len(pts), -1, dtype=np.int64)
            ext = np.nonzero(~node_inside)[0]
            proj = domain.project_boundary(pts[ext])
            twin = 2.0 * proj - pts[ext]
            key = np.rint(twin / h).astype(int)
            if not np.allclose(key * h, twin, atol=REL_TOL * max(1.0, domain.extent)):
                raise GeometryError("mirror grid requires lattice-aligned square faces "
                                    "(2*half_width/h must be an integer)")
            for e, (a, b) in zip(ext, key):
                j = index_of.get((int(a), int(b)))
                if j is None:
                    raise GeometryError(f"mirror partner of exterior node {int(e)} missing from cloud")
                partner[e] = j
    else:
        pts_in = cand[inside]
        areas_in = _annulus_cell_areas(domain, pts_in, np.ones(len(pts_in), bool), h)
        if mirror:
            # Reflect across each boundary circle separately: at coarse delta the
            # two interior 2*delta collars overlap and nearest-boundary reflection
            # alone would leave gaps in the exterior collar.
            r_in = np.linalg.norm(pts_in, axis=1)
            ext_chunks, partner_src = [], []
            for radius, sign in ((domain.r_inner, -1.0), (domain.r_outer, +1.0)):
                d_comp = sign * (r_in - radius)  # negative toward the domain side
                src = np.nonzero((d_comp < -eps) & (d_comp >= -2.0 * delta * (1.0 + REL_TOL)))[0]
                refl = pts_in[src] * ((2.0 * radius - r_in[src]) / r_in[src])[:, None]
                ext_chunks.append(refl)
                partner_src.append(src)
            pts_ext = np.concatenate(ext_chunks)
            src_all = np.concatenate(partner_src)
            pts = np.concatenate([pts_in, pts_ext])
            areas = np.concatenate([areas_in, areas_in[src_all]])
            partner = np.full(len(pts), -1, dtype=np.int64)
            partner[len(pts_in):] = src_all
        else:
            pts = np.concatenate([pts_in, cand[keep_ext]])
            areas = np.concatenate([areas_in, np.full(int(keep_ext.sum()), h * h)])

    return _finish_cloud(domain, h, delta, pts, areas, mirror=mirror,
                         partner=partner, frame_angles=None, grid="cartesian")


def build_polar_cloud(domain: Domain, h: float, delta: float,
                      mirror: bool = False) -> PointCloud:
    """Polar lattice (p1*h*cos(pi*p2*h/5), p1*h*sin(pi*p2*h/5)) on an annulus.

    Angular spacing pi*h/5 must close the full circle (10/h integer) and the
    radii R0/h, R1/h must be integers so that boundary rings carry nodes and
    radial mirroring maps the lattice to itself.
    """
    if domain.kind != "annulus":
        raise GeometryError("polar clouds are defined for annulus domains")
    if delta >= (domain.r_outer - domain.r_inner) / 2.0:
        raise GeometryError(
            f"horizon {delta} must be below (R1-R0)/2 = {(domain.r_outer - domain.r_inner) / 2}"
            " or the boundary collars overlap")
    if delta < 2.0 * h * (1.0 - REL_TOL):
        raise GeometryError(f"horizon {delta} must be at least 2h = {2 * h}")
    n_ang = 10.0 / h
    if abs(n_ang - round(n_ang)) > 1e-9:
        raise GeometryError(f"polar grids require 10/h integral so the angular lattice closes; "
                            f"got 10/h = {n_ang}")
    n_ang = int(round(n_ang))
    n0, n1 = domain.r_inner / h, domain.r_outer / h
    if abs(n0 - round(n0)) > 1e-9 or abs(n1 - round(n1)) > 1e-9:
        raise GeometryError(f"polar grids require R0/h and R1/h integral, got {n0}, {n1}")
    n0, n1 = int(round(n0)), int(round(n1))
    layers = int(np.floor(2.0 * delta / h * (1.0 + REL_TOL)))
    if n0 - layers <= 0:
        raise GeometryError("exterior collar would cross the annulus center")

    dtheta = np.pi * h / 5.0
    p1 = np.arange(n0 - layers, n1 + layers + 1)
    p2 = np.arange(n_ang)
    rr, aa = np.meshgrid(p1, p2, indexing="ij")
    radii = rr.ravel() * h
    theta = aa.ravel() * dtheta
    pts = np.stack([radii * np.cos(theta), radii * np.sin(theta)], axis=1)

    # Exact annular integral of the cell, radially clipped to [R0, R1] for
    # interior nodes; reduces to r*h*dtheta away from the boundary rings.
    a = radii - h / 2.0
    b = radii + h / 2.0
    inside_ring = (rr.ravel() >= n0) & (rr.ravel() <= n1)
    a_c = np.where(inside_ring, np.maximum(a, domain.r_inner), a)
    b_c = np.where(inside_ring, np.minimum(b, domain.r_outer), b)
    areas = dtheta * 0.5 * (b_c**2 - a_c**2)

    partner = None
    if mirror:
        partner = np.full(len(pts), -1, dtype=np.int64)
        base = n0 - layers
        for k in range(1, layers + 1):
            for p_ext, p_int in ((n0 - k, n0 + k), (n1 + k, n1 - k)):
                e0 = (p_ext - base) * n_ang
                i0 = (p_int - base) * n_ang
                partner[e0:e0 + n_ang] = np.arange(i0, i0 + n_ang)

    return _finish_cloud(domain, h, delta, pts, areas, mirror=mirror,
                         partner=partner, frame_angles=theta, grid="polar")


def cloud_to_csv(cloud: PointCloud, path) -> None:
    """Debug dump: x, y, tag, area with a header row."""
    with open(path, "w") as fh:
        fh.write("x,y,tag,area\n")
        for (x, y), tag, area in zip(cloud.points, cloud.regions.tags, cloud.cell_areas):
            fh.write(f"{x:.17g},{y:.17g},{int(tag)},{area:.17g}\n")
