"""Gluing one apartment per MAR into a pre-building with vertex o.

Each MAR gets a chart: the developing map from its basepoint, with the
sheet section ordered by descending real part there.  Charts are glued by
Weyl-affine transitions solved from shared region samples; the collision
points map to the distinguished vertex o, which is pinned down in the
charts containing the central (bounded) regions, where the collision-joining
contour integrates to zero.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .apartment import VectorDistance, vector_distance
from .curves import PathSpec, SpectralCurveSpec, continue_sheets, integrate_forms, \
    integral_tail_to_branch_point
from .errors import DegeneracyError, GluingError
from .network import MAR, RegionDecomposition, SpectralNetwork, _chain_to_polyline, \
    _mask_distance, _union_paths

TRANSITION_TOL = 1e-6
COCYCLE_TOL = 1e-8


@dataclass(frozen=True)
class Transition:
    """Weyl-affine chart change x -> perm(x) + shift."""

    perm: tuple
    shift: np.ndarray

    def apply(self, coords: np.ndarray) -> np.ndarray:
        return np.asarray(coords)[list(self.perm)] + self.shift

    def compose(self, first: "Transition") -> "Transition":
        """self after first."""
        perm = tuple(first.perm[i] for i in self.perm)
        shift = np.asarray(first.shift)[list(self.perm)] + self.shift
        return Transition(perm=perm, shift=shift)

    def inverse(self) -> "Transition":
        inv = [0] * len(self.perm)
        for i, j in enumerate(self.perm):
            inv[j] = i
        return Transition(perm=tuple(inv), shift=-np.asarray(self.shift)[inv])


@dataclass
class ApartmentChart:
    """Developing-map data of one MAR."""

    chart_id: int
    mar: MAR
    basepoint: complex
    section: tuple
    anchors: dict               # region id -> (anchor point, anchor coords)
    rep_images: dict            # region id -> (n_rep, r) coords
    hull_samples: dict          # region id -> (n, r) coarser boundary images
    vertex_images: dict         # name -> coords ("bp:k", "col:k")
    collision_of_region: dict   # region id -> "col:k" of its adjacent collision

    def region_anchor_vertex(self, rid: int) -> np.ndarray:
        """Image of the collision point this region's sector is based at."""
        return self.vertex_images[self.collision_of_region[rid]]

    def all_samples(self) -> np.ndarray:
        chunks = [v for v in self.rep_images.values()]
        chunks += [v for v in self.hull_samples.values()]
        chunks += [np.asarray(v).reshape(1, -1) for v in self.vertex_images.values()]
        return np.concatenate(chunks, axis=0)


@dataclass
class PrePoint:
    """A point of the glued space presented in one chart."""

    chart_id: int
    coords: np.ndarray
    flagged_off_mar: bool = False


@dataclass
class PreBuilding:
    curve: SpectralCurveSpec
    network: SpectralNetwork
    decomp: RegionDecomposition
    charts: list
    transitions: dict           # (i, j) -> Transition taking chart i coords to chart j
    o_by_chart: dict            # chart id -> coords of o where centrally defined

    def chart(self, cid: int) -> ApartmentChart:
        return self.charts[cid]

    def charts_of_region(self, rid: int):
        return [ch.chart_id for ch in self.charts if rid in ch.mar.region_ids]


# ---------------------------------------------------------------------------
# Developing helpers
# ---------------------------------------------------------------------------

def _nearest_mar_region(decomp, mar: MAR, q: complex) -> int:
    best, best_d = None, np.inf
    for rid in mar.region_ids:
        d = _mask_distance(decomp, decomp.region(rid).cells, q)
        if d < best_d:
            best_d, best = d, rid
    return best


def _in_mar_path(decomp, mar: MAR, p: complex, q: complex) -> PathSpec:
    """Polyline from p to q routed through the MAR's region graph.

    Endpoints on the network itself (collision points, wall samples) are
    attached through the nearest MAR region.
    """
    allowed = set(mar.region_ids)
    rp = decomp.region_of(p)
    rq = decomp.region_of(q)
    if rp not in allowed:
        rp = _nearest_mar_region(decomp, mar, p)
    if rq not in allowed:
        rq = _nearest_mar_region(decomp, mar, q)
    if rp == rq:
        return PathSpec((p, q))
    chains = _union_paths(decomp, rp, rq, allowed, max_paths=1, cutoff=8)
    if not chains:
        raise GluingError(f"no in-MAR route between {p:.3g} and {q:.3g}")
    return _chain_to_polyline(decomp, p, q, chains[0])


def _leg_quad(curve, sheets0, a: complex, b: complex, epsabs=1e-10):
    """High-precision leg integral continuing a given sheet labeling.

    Returns (Re integrals in the labeling's order, end sheet values).
    """
    path = PathSpec((a, b))
    track = continue_sheets(curve, path, check=False, initial_sheets=sheets0)
    vals = integrate_forms(curve, path, track, epsabs=epsabs)
    return vals.real, track.sheets[-1]


def _leg_trapz(curve, sheets0, a: complex, b: complex, samples_per_unit=240.0):
    path = PathSpec((a, b))
    track = continue_sheets(curve, path, samples_per_unit=samples_per_unit,
                            check=False, initial_sheets=sheets0)
    mid = (track.sheets[1:] + track.sheets[:-1]) / 2.0
    dx = np.diff(track.xs)
    vals = (mid * dx[:, None]).sum(axis=0)
    return vals.real, track.sheets[-1]


def _develop(curve, decomp, mar: MAR, q: complex, epsabs: float = 1e-10):
    """Re integrals from the MAR basepoint to q in the basepoint section
    order, together with the transported sheet values at q."""
    base_roots = roots_at_ordered_by_section(curve, mar)
    if abs(q - mar.basepoint) < 1e-15:
        return np.zeros(curve.r), base_roots
    path = _in_mar_path(decomp, mar, mar.basepoint, q)
    track = continue_sheets(curve, path, check=False, initial_sheets=base_roots)
    vals = integrate_forms(curve, path, track, epsabs=epsabs)
    return vals.real, track.sheets[-1]


def roots_at_ordered_by_section(curve, mar: MAR) -> np.ndarray:
    from .curves import roots_at, _canonical_order
    roots = roots_at(curve, mar.basepoint)
    roots = roots[_canonical_order(roots)]
    return roots[list(mar.section)]


def _region_boundary_samples(decomp, rid: int, max_pts: int = 14) -> list:
    """A few cell centers along the region boundary, for hull geometry."""
    reg = decomp.region(rid)
    mask = reg.cells
    from scipy import ndimage
    er = ndimage.binary_erosion(mask)
    ring = mask & ~er
    rows, cols = np.nonzero(ring)
    if rows.size == 0:
        rows, cols = np.nonzero(mask)
    (a, b), (c, d) = decomp.extent
    ny, nx = mask.shape
    pts = (a + (cols + 0.5) * (b - a) / nx) + 1j * (c + (rows + 0.5) * (d - c) / ny)
    rel = pts - reg.centroid
    order = np.argsort(np.angle(rel))
    pick = order[np.linspace(0, order.size - 1, min(max_pts, order.size)).astype(int)]
    out = []
    for p in pts[pick]:
        shift = reg.centroid - p
        out.append(complex(p + 0.02 * shift))
    return out


def build_chart(curve, network, decomp, mar: MAR, chart_id: int,
                coarse: bool = True) -> ApartmentChart:
    cell = (decomp.extent[0][1] - decomp.extent[0][0]) / decomp.grid_n
    anchors = {}
    rep_images = {}
    for rid in mar.region_ids:
        reps = decomp.region(rid).reps
        coords, sheets = _develop(curve, decomp, mar, reps[0])
        anchors[rid] = (reps[0], coords, sheets)
        images = [coords]
        for p in reps[1:]:
            leg, _ = _leg_quad(curve, sheets, reps[0], p)
            images.append(coords + leg)
        rep_images[rid] = np.array(images)
    hull_samples = {}
    if coarse:
        for rid in mar.region_ids:
            a0, coords, sheets = anchors[rid]
            pts = _region_boundary_samples(decomp, rid)
            legs = [_leg_trapz(curve, sheets, a0, p)[0] for p in pts]
            hull_samples[rid] = coords + np.array(legs)

    vertex_images = {}
    collision_of_region = {}
    for k, bp in enumerate(network.branch):
        near_rids = [rid for rid in mar.region_ids
                     if _mask_distance(decomp, decomp.region(rid).cells, bp.x) < 4 * cell]
        if not near_rids:
            continue
        a0, coords, sheets = anchors[near_rids[0]]
        direction = a0 - bp.x
        near = bp.x + 0.08 * direction / abs(direction)
        path = PathSpec((a0, near))
        track = continue_sheets(curve, path, check=False, initial_sheets=sheets)
        vals = integrate_forms(curve, path, track)
        tail = integral_tail_to_branch_point(curve, bp, near, track.sheets[-1])
        vertex_images[f"bp:{k}"] = coords + (vals + tail).real
    for k, col in enumerate(network.collisions):
        near_rids = [rid for rid in mar.region_ids
                     if _mask_distance(decomp, decomp.region(rid).cells, col.location) < 10 * cell]
        if not near_rids:
            continue
        images = []
        for rid in near_rids:
            a0, coords, sheets = anchors[rid]
            leg, _ = _leg_quad(curve, sheets, a0, col.location)
            images.append(coords + leg)
            collision_of_region[rid] = f"col:{k}"
        for img in images[1:]:
            if np.max(np.abs(img - images[0])) > 1e-6:
                raise GluingError(
                    f"chart {chart_id}: collision col:{k} develops inconsistently "
                    f"from adjacent regions")
        vertex_images[f"col:{k}"] = images[0]
    if not collision_of_region:
        raise GluingError(f"MAR {mar.mar_id} touches no collision vertex")
    return ApartmentChart(chart_id=chart_id, mar=mar, basepoint=mar.basepoint,
                          section=mar.section, anchors=anchors, rep_images=rep_images,
                          hull_samples=hull_samples, vertex_images=vertex_images,
                          collision_of_region=collision_of_region)


def _solve_transition(src_pts: np.ndarray, dst_pts: np.ndarray):
    """Best Weyl permutation + translation mapping src to dst samples."""
    r = src_pts.shape[1]
    best = None
    for perm in itertools.permutations(range(r)):
        moved = src_pts[:, list(perm)]
        shift = np.mean(dst_pts - moved, axis=0)
        resid = float(np.max(np.abs(moved + shift - dst_pts)))
        if best is None or resid < best[0]:
            best = (resid, perm, shift)
    resid, perm, shift = best
    return Transition(perm=perm, shift=shift), resid


def _central_region_ids(decomp) -> set:
    return {r.region_id for r in decomp.regions if not r.unbounded}


def build_prebuilding(curve: SpectralCurveSpec, network: SpectralNetwork,
                      decomp: RegionDecomposition, mars: list,
                      coarse: bool = True) -> PreBuilding:
    """Construct charts for all MARs, glue them, and locate the vertex o.

    Raises GluingError when any pairwise transition residual exceeds 1e-6,
    the cocycle fails on a triple overlap, or the collision points refuse to
    coincide in a central chart, all of which signal a wrong MAR set or
    section.
    """
    charts = [build_chart(curve, network, decomp, m, i, coarse=coarse)
              for i, m in enumerate(mars)]
    transitions = {}
    for ca, cb in itertools.combinations(charts, 2):
        shared = sorted(set(ca.mar.region_ids) & set(cb.mar.region_ids))
        if not shared:
            continue
        src = np.concatenate([ca.rep_images[rid] for rid in shared], axis=0)
        dst = np.concatenate([cb.rep_images[rid] for rid in shared], axis=0)
        tr, resid = _solve_transition(src, dst)
        if resid > TRANSITION_TOL:
            raise GluingError(
                f"transition {ca.chart_id}->{cb.chart_id} residual {resid:g} > {TRANSITION_TOL:g}")
        transitions[(ca.chart_id, cb.chart_id)] = tr
        transitions[(cb.chart_id, ca.chart_id)] = tr.inverse()

    for ca, cb, cc in itertools.combinations(charts, 3):
        shared = set(ca.mar.region_ids) & set(cb.mar.region_ids) & set(cc.mar.region_ids)
        if not shared:
            continue
        t_ab = transitions[(ca.chart_id, cb.chart_id)]
        t_bc = transitions[(cb.chart_id, cc.chart_id)]
        t_ac = transitions[(ca.chart_id, cc.chart_id)]
        comp = t_bc.compose(t_ab)
        if comp.perm != t_ac.perm or np.max(np.abs(comp.shift - t_ac.shift)) > COCYCLE_TOL:
            raise GluingError(
                f"cocycle failure on charts ({ca.chart_id},{cb.chart_id},{cc.chart_id})")

    # o: in every chart containing a central (bounded) region, all collision
    # images must coincide; this is the collision-joining contour being zero.
    central = _central_region_ids(decomp)
    o_by_chart = {}
    for ch in charts:
        if not central & set(ch.mar.region_ids):
            continue
        cols = [v for k, v in sorted(ch.vertex_images.items()) if k.startswith("col:")]
        for v in cols[1:]:
            if np.max(np.abs(v - cols[0])) > 1e-6:
                raise GluingError(
                    f"collision images disagree in central chart {ch.chart_id}")
        o_by_chart[ch.chart_id] = np.mean(cols, axis=0)
    if not o_by_chart:
        raise GluingError("no chart contains a central region; cannot locate o")
    return PreBuilding(curve=curve, network=network, decomp=decomp, charts=charts,
                       transitions=transitions, o_by_chart=o_by_chart)


def map_point(pb: PreBuilding, q: complex) -> PrePoint:
    """Present an x-plane point in the lowest chart whose MAR contains it."""
    rid = pb.decomp.region_of(q)
    flagged = False
    if rid is None:
        reps = [(abs(q - r.reps[0]), r.region_id) for r in pb.decomp.regions]
        rid = min(reps)[1]
        flagged = True
    cids = pb.charts_of_region(rid)
    if not cids:
        raise DegeneracyError(f"region {rid} belongs to no chart")
    ch = pb.chart(cids[0])
    a0, anchor, sheets = ch.anchors[rid]
    if abs(q - a0) < 1e-15:
        coords = anchor
    else:
        leg, _ = _leg_quad(pb.curve, sheets, a0, q)
        coords = anchor + leg
    return PrePoint(chart_id=ch.chart_id, coords=coords, flagged_off_mar=flagged)


def _finsler_hull_intervals(samples: np.ndarray):
    """Root-coordinate intervals of the Finsler hull of a finite set."""
    r = samples.shape[1]
    lo, hi = {}, {}
    for (i, j) in itertools.combinations(range(r), 2):
        d = samples[:, i] - samples[:, j]
        lo[(i, j)], hi[(i, j)] = float(d.min()), float(d.max())
    return lo, hi


def _in_finsler_hull_of(samples: np.ndarray, coords: np.ndarray, tol: float) -> bool:
    lo, hi = _finsler_hull_intervals(samples)
    for (i, j), lval in lo.items():
        d = coords[i] - coords[j]
        if d < lval - tol or d > hi[(i, j)] + tol:
            return False
    return True


def presentations(pb: PreBuilding, pt: PrePoint, tol: float = 1e-4) -> dict:
    """All chart presentations of a glued point, by hull-restricted transits.

    A presentation may cross from chart A to chart B only while the
    coordinates stay inside the Finsler hull of the images of the shared
    regions, which is where the gluing relation identifies the apartments.
    """
    out = {pt.chart_id: np.asarray(pt.coords)}
    frontier = [pt.chart_id]
    while frontier:
        nxt = []
        for cid in frontier:
            for (i, j), tr in pb.transitions.items():
                if i != cid or j in out:
                    continue
                ca, cb = pb.chart(i), pb.chart(j)
                shared = sorted(set(ca.mar.region_ids) & set(cb.mar.region_ids))
                samples = np.concatenate(
                    [ca.rep_images[rid] for rid in shared]
                    + [ca.hull_samples[rid] for rid in shared if rid in ca.hull_samples],
                    axis=0)
                if _in_finsler_hull_of(samples, out[cid], tol):
                    out[j] = tr.apply(out[cid])
                    nxt.append(j)
        frontier = nxt
    return out


def prebuilding_distance(pb: PreBuilding, p: PrePoint, q: PrePoint) -> VectorDistance | None:
    """Vector distance when p and q reach a common chart, else None."""
    pres_p = presentations(pb, p)
    pres_q = presentations(pb, q)
    common = sorted(set(pres_p) & set(pres_q))
    if not common:
        return None
    vals = [vector_distance(pres_p[c], pres_q[c]).values for c in common]
    for v in vals[1:]:
        if np.max(np.abs(v - vals[0])) > 1e-4 * max(1.0, float(np.max(np.abs(vals[0])))):
            raise GluingError("inconsistent distances across common charts")
    return VectorDistance(vals[0])
