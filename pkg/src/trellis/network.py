"""Spectral network tracing, region decomposition, detours, and MARs.

Walls are trajectories where the sheet-difference integral has constant
phase theta; they seed at branch points (three germs each) and new walls
spawn where walls with chained labels (i,j) and (j,k) cross.  The plane
decomposition into regions and the detour-certified maximal abelian
regions (MARs) built on top of it drive the pre-building construction.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.integrate import solve_ivp
from scipy.optimize import linear_sum_assignment

from .curves import (
    BranchPoint,
    PathSpec,
    SpectralCurveSpec,
    branch_points,
    continue_sheets,
    integrate_forms,
    roots_at,
)
from .errors import BudgetError, CrossingError, DegeneracyError, ResolutionError

DETOUR_TOL = 1e-9


@dataclass
class Wall:
    """A traced S-wall: polyline with the ordered sheet pair along it."""

    wall_id: int
    origin: str                 # "bp:<k>" or "col:<k>"
    theta: float
    points: np.ndarray          # complex polyline samples
    pair: np.ndarray            # (n, 2) sheet values (lambda_i, lambda_j)
    mass: np.ndarray            # (n,) real mass: int (lambda_i - lambda_j) dx = e^{i theta} mass
    backward: bool = False
    parents: tuple = ()

    def point_mass(self, k: int) -> float:
        return float(self.mass[k])

    def tangent(self, k: int) -> complex:
        k2 = min(k + 1, len(self.points) - 1)
        k1 = max(k2 - 1, 0)
        d = self.points[k2] - self.points[k1]
        return d / abs(d)


@dataclass
class CollisionPoint:
    location: complex
    incoming: tuple             # two wall ids
    outgoing: tuple             # spawned wall ids (forward, and backward if traced)
    shared_value: complex


@dataclass
class SpectralNetwork:
    curve: SpectralCurveSpec
    theta: float
    box: tuple                  # ((re_lo, re_hi), (im_lo, im_hi))
    step: float
    branch: list
    walls: list
    collisions: list

    def wall(self, wall_id: int) -> Wall:
        return self.walls[wall_id]


def _in_box(x: complex, box, pad: float = 0.0) -> bool:
    (a, b), (c, d) = box
    return a - pad <= x.real <= b + pad and c - pad <= x.imag <= d + pad


def _seed_germs(curve: SpectralCurveSpec, bp: BranchPoint, theta: float, step: float):
    """Three wall germs at a branch point from the local sqrt expansion.

    The colliding pair expands as p_d +- c1 sqrt(x - x_b), so the primitive
    of the pair difference is (4 c1 / 3)(x - x_b)^{3/2} and the phase
    condition picks three germ directions.
    """
    c1_sq = -curve.q_x(bp.x, bp.double_root) / (curve.q_pp(bp.x, bp.double_root) / 2.0)
    c1 = np.sqrt(c1_sq)
    base = (2.0 / 3.0) * (theta - np.angle(4.0 * c1 / 3.0))
    germs = []
    r0 = 10.0 * step
    for k in range(3):
        phi = base + 4.0 * np.pi * k / 3.0
        x0 = bp.x + r0 * np.exp(1j * phi)
        roots = roots_at(curve, x0)
        order = np.argsort(np.abs(roots - bp.double_root))
        lam_a, lam_b = roots[order[0]], roots[order[1]]
        u = lam_a - lam_b
        # orient the pair so the trajectory leaves along e^{i theta}
        if (u * np.exp(1j * phi) * np.exp(-1j * theta)).real < 0:
            lam_a, lam_b = lam_b, lam_a
            u = -u
        mass0 = abs((4.0 * c1 / 3.0) * (r0 * np.exp(1j * phi)) ** 1.5)
        germs.append((x0, lam_a, lam_b, float(mass0)))
    return germs


def _trace_wall(curve: SpectralCurveSpec, theta: float, box, step: float,
                x0: complex, lam_i: complex, lam_j: complex, mass0: float,
                stop_points=(), stop_radius: float = 0.0):
    """Integrate one wall front; returns (points, pair, mass) arrays.

    Joint ODE in (x, lambda_i, lambda_j): dx/ds = e^{i theta} conj(u)/|u| with
    u = lambda_i - lambda_j (arclength parameterization), the sheets continued
    by implicit differentiation.
    """
    phase = np.exp(1j * theta)
    (a, b), (c, d) = box
    pad = 2.0 * step

    def rhs(s, y):
        x, li, lj = y
        u = li - lj
        xdot = phase * np.conj(u) / abs(u)
        return [xdot,
                -curve.q_x(x, li) / curve.q_p(x, li) * xdot,
                -curve.q_x(x, lj) / curve.q_p(x, lj) * xdot]

    def hit_boundary(s, y):
        x = y[0]
        return min(x.real - (a - pad), (b + pad) - x.real,
                   x.imag - (c - pad), (d + pad) - x.imag)
    hit_boundary.terminal = True
    hit_boundary.direction = -1

    def pair_degenerate(s, y):
        return abs(y[1] - y[2]) - 1e-4
    pair_degenerate.terminal = True
    pair_degenerate.direction = -1

    events = [hit_boundary, pair_degenerate]
    if stop_points:
        sp = np.array(stop_points, dtype=complex)

        def near_stop(s, y, _sp=sp):
            if s < 4.0 * stop_radius:
                return 1.0
            return float(np.min(np.abs(_sp - y[0]))) - stop_radius
        near_stop.terminal = True
        near_stop.direction = -1
        events.append(near_stop)

    max_len = 2.0 * ((b - a) + (d - c))
    sol = solve_ivp(rhs, (0.0, max_len), [x0, lam_i, lam_j],
                    method="RK45", rtol=1e-10, atol=1e-12,
                    max_step=max(step, 1e-3), events=events, dense_output=True)
    s_end = sol.t[-1]
    n = max(2, int(np.ceil(s_end / step)) + 1)
    ss = np.linspace(0.0, s_end, n)
    ys = sol.sol(ss)
    points = ys[0]
    pair = ys[1:3].T
    # re-polish sheets at the samples to kill drift
    for k in range(n):
        x = points[k]
        for _ in range(3):
            for col in range(2):
                v = pair[k, col]
                qp = curve.q_p(x, v)
                if abs(qp) > 1e-10:
                    pair[k, col] = v - np.polyval(curve.char_coeffs(x), v) / qp
    u = pair[:, 0] - pair[:, 1]
    dm = np.abs(u)
    mass = mass0 + np.concatenate([[0.0], np.cumsum((dm[1:] + dm[:-1]) / 2.0 * np.diff(ss))])
    return points, pair, mass, sol


def _segment_intersections(p1: np.ndarray, p2: np.ndarray):
    """All transversal intersections between two complex polylines.

    Returns a list of (k1, k2, t1, t2, point) with segment indices and local
    parameters.
    """
    a1, b1 = p1[:-1], p1[1:]
    a2, b2 = p2[:-1], p2[1:]
    d1 = (b1 - a1)[:, None]
    d2 = (b2 - a2)[None, :]
    rel = a2[None, :] - a1[:, None]
    denom = (d1.real * d2.imag - d1.imag * d2.real)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (rel.real * d2.imag - rel.imag * d2.real) / denom
        t2 = (rel.real * d1.imag - rel.imag * d1.real) / denom
    ok = (np.abs(denom) > 1e-14) & (t1 >= 0.0) & (t1 <= 1.0) & (t2 >= 0.0) & (t2 <= 1.0)
    hits = []
    for k1, k2 in zip(*np.nonzero(ok)):
        pt = a1[k1] + t1[k1, k2] * (b1[k1] - a1[k1])
        hits.append((int(k1), int(k2), float(t1[k1, k2]), float(t2[k1, k2]), complex(pt)))
    return hits


def _chain_labels(curve: SpectralCurveSpec, pt: complex,
                  w1: Wall, k1: int, w2: Wall, k2: int):
    """Return (i_val, k_val, shared) if the labels chain as (i,j)&(j,k).

    Both pairs are identified with fiber-root indices at the crossing point
    itself, so sampling offsets along the walls cannot break the match.
    """
    roots = roots_at(curve, pt)
    i1, j1 = (int(np.argmin(np.abs(roots - v))) for v in w1.pair[k1])
    i2, j2 = (int(np.argmin(np.abs(roots - v))) for v in w2.pair[k2])
    if i1 == j1 or i2 == j2:
        return None
    if j1 == i2 and i1 != j2 and i1 != i2 and j1 != j2:
        return roots[i1], roots[j2], roots[j1]
    if j2 == i1 and i2 != j1 and i2 != i1 and j2 != j1:
        return roots[i2], roots[j1], roots[j2]
    return None


def trace_network(curve: SpectralCurveSpec, theta: float,
                  box=((-6.0, 6.0), (-6.0, 6.0)), step: float = 0.02,
                  max_walls: int = 200, extended: bool = False,
                  primary_only: bool = False) -> SpectralNetwork:
    """Trace the spectral network of phase theta inside the box.

    Branch points emit three wall germs each; pairwise wall crossings with
    chained labels spawn new walls recursively until no new collision occurs
    inside the box.  With ``extended`` the backward collision lines are
    traced as well (they count for the region decomposition but never spawn
    further walls).
    """
    if step <= 0:
        raise ResolutionError("step must be positive")
    bps = branch_points(curve, search_box=box)
    if not bps:
        raise DegeneracyError("no branch points inside the box")

    walls: list = []
    collisions: list = []

    def add_wall(origin, x0, li, lj, m0, backward=False, parents=(), stop_points=(),
                 prepend=None):
        points, pair, mass, _ = _trace_wall(
            curve, theta, box, step, x0, li, lj, m0,
            stop_points=stop_points, stop_radius=3.0 * step)
        if prepend is not None:
            points = np.concatenate([[prepend], points])
            pair = np.concatenate([pair[:1], pair])
            mass = np.concatenate([[0.0], mass])
        w = Wall(wall_id=len(walls), origin=origin, theta=theta, points=points,
                 pair=pair, mass=mass, backward=backward, parents=parents)
        walls.append(w)
        return w

    for k, bp in enumerate(bps):
        for x0, li, lj, m0 in _seed_germs(curve, bp, theta, step):
            add_wall(f"bp:{k}", x0, li, lj, m0, prepend=bp.x)

    if primary_only:
        return SpectralNetwork(curve, theta, box, step, bps, walls, collisions)

    dedup = max(3.0 * step, 1e-3)
    origins = [bp.x for bp in bps]
    checked = set()
    frontier = list(range(len(walls)))
    while frontier:
        new_frontier = []
        pairs = []
        for wi in frontier:
            for wj in range(len(walls)):
                if wi == wj:
                    continue
                key = (min(wi, wj), max(wi, wj))
                if key in checked:
                    continue
                checked.add(key)
                pairs.append(key)
        spawn = []
        for wi, wj in pairs:
            w1, w2 = walls[wi], walls[wj]
            if w1.backward or w2.backward:
                continue
            if w1.origin == w2.origin:
                continue
            for k1, k2, t1, t2, pt in _segment_intersections(w1.points, w2.points):
                if any(abs(pt - o) < dedup for o in origins):
                    continue
                if any(abs(pt - c.location) < dedup for c in collisions):
                    continue
                chained = _chain_labels(curve, pt, w1, k1, w2, k2)
                if chained is None:
                    continue
                iv, kv, shared = chained
                m0 = w1.mass[k1] + w2.mass[k2]
                spawn.append((pt, wi, wj, iv, kv, shared, m0))
        spawn.sort(key=lambda s: (round(abs(s[0]), 9), round(np.angle(s[0]), 9)))
        for pt, wi, wj, iv, kv, shared, m0 in spawn:
            if any(abs(pt - c.location) < dedup for c in collisions):
                continue
            if len(walls) >= max_walls:
                raise BudgetError(f"wall budget {max_walls} exhausted; recursion runaway")
            # polish the pair at the collision point itself
            roots = roots_at(curve, pt)
            iv = roots[np.argmin(np.abs(roots - iv))]
            kv = roots[np.argmin(np.abs(roots - kv))]
            child = add_wall(f"col:{len(collisions)}", pt, iv, kv, float(m0),
                             parents=(wi, wj))
            collisions.append(CollisionPoint(location=pt, incoming=(wi, wj),
                                             outgoing=(child.wall_id,), shared_value=shared))
            new_frontier.append(child.wall_id)
        frontier = new_frontier

    if extended:
        stop_pts = tuple(c.location for c in collisions)
        for ci, col in enumerate(list(collisions)):
            child = walls[col.outgoing[0]]
            others = tuple(p for p in stop_pts if abs(p - col.location) > dedup)
            back = add_wall(f"col:{ci}", col.location,
                            child.pair[0, 1], child.pair[0, 0], 0.0,
                            backward=True, parents=col.incoming,
                            stop_points=others)
            collisions[ci] = CollisionPoint(location=col.location, incoming=col.incoming,
                                            outgoing=col.outgoing + (back.wall_id,),
                                            shared_value=col.shared_value)
    _refine_collisions(walls, collisions)
    return SpectralNetwork(curve, theta, box, step, bps, walls, collisions)


def _refine_collisions(walls, collisions):
    """Newton-polish collision locations from the parent polylines."""
    for ci, col in enumerate(collisions):
        w1, w2 = walls[col.incoming[0]], walls[col.incoming[1]]
        hits = _segment_intersections(w1.points, w2.points)
        if not hits:
            continue
        best = min(hits, key=lambda h: abs(h[4] - col.location))
        collisions[ci] = CollisionPoint(location=best[4], incoming=col.incoming,
                                        outgoing=col.outgoing, shared_value=col.shared_value)


@dataclass
class Region:
    """A connected component of the box minus the thickened walls."""

    region_id: int
    cells: np.ndarray           # boolean mask on the grid
    reps: tuple                 # a few deep interior points (complex)
    centroid: complex
    area_cells: int
    unbounded: bool
    far_angle: float | None     # mean angle of boundary-box cells, if unbounded


@dataclass
class RegionDecomposition:
    network: SpectralNetwork
    grid_n: int
    regions: list
    adjacency: dict             # (i, j) -> list of wall ids separating them
    label_grid: np.ndarray
    extent: tuple

    def region_of(self, x: complex) -> int | None:
        (a, b), (c, d) = self.extent
        nx = self.label_grid.shape[1]
        ny = self.label_grid.shape[0]
        col = int((x.real - a) / (b - a) * nx)
        row = int((x.imag - c) / (d - c) * ny)
        if not (0 <= col < nx and 0 <= row < ny):
            return None
        lab = self.label_grid[row, col]
        return int(lab) if lab > 0 else None

    def region(self, rid: int) -> Region:
        return self.regions[rid - 1]

    def neighbors(self, rid: int):
        out = set()
        for (i, j) in self.adjacency:
            if i == rid:
                out.add(j)
            elif j == rid:
                out.add(i)
        return sorted(out)


def regions(network: SpectralNetwork, grid_n: int = 1200) -> RegionDecomposition:
    """Connected components of box minus walls on a uniform grid."""
    (a, b), (c, d) = network.box
    nx = ny = grid_n
    wall_mask = np.zeros((ny, nx), dtype=bool)
    wall_owner = {}
    hx, hy = (b - a) / nx, (d - c) / ny

    def mark(x: complex, wid: int):
        col = int((x.real - a) / hx)
        row = int((x.imag - c) / hy)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                r0, c0 = row + dr, col + dc
                if 0 <= r0 < ny and 0 <= c0 < nx:
                    wall_mask[r0, c0] = True
                    wall_owner.setdefault((r0, c0), set()).add(wid)

    sub = min(hx, hy) / 2.0
    for w in network.walls:
        pts = w.points
        for p, q in zip(pts[:-1], pts[1:]):
            n = max(1, int(np.ceil(abs(q - p) / sub)))
            for t in np.linspace(0.0, 1.0, n + 1):
                x = p + t * (q - p)
                if _in_box(x, network.box, pad=2 * max(hx, hy)):
                    mark(x, w.wall_id)

    free = ~wall_mask
    labels, n_lab = ndimage.label(free, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]))
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n_lab + 1))
    if np.any(sizes < 4):
        raise ResolutionError("grid too coarse: a region spans fewer than 4 cells")

    dist = ndimage.distance_transform_cdt(free)
    regs = []
    for lab in range(1, n_lab + 1):
        mask = labels == lab
        dmask = np.where(mask, dist, 0)
        flat = np.argsort(dmask, axis=None)[::-1][:3]
        reps = []
        for f in flat:
            row, col = np.unravel_index(f, dmask.shape)
            reps.append(complex(a + (col + 0.5) * hx, c + (row + 0.5) * hy))
        rows, cols = np.nonzero(mask)
        centroid = complex(a + (cols.mean() + 0.5) * hx, c + (rows.mean() + 0.5) * hy)
        edge = (rows == 0) | (rows == ny - 1) | (cols == 0) | (cols == nx - 1)
        unbounded = bool(edge.any())
        far_angle = None
        if unbounded:
            pts = (a + (cols[edge] + 0.5) * hx) + 1j * (c + (rows[edge] + 0.5) * hy)
            mean = np.mean(np.exp(1j * np.angle(pts)))
            far_angle = float(np.angle(mean))
        regs.append(Region(region_id=lab, cells=mask, reps=tuple(reps), centroid=centroid,
                           area_cells=int(mask.sum()), unbounded=unbounded, far_angle=far_angle))

    counts: dict = {}
    for (row, col), wids in wall_owner.items():
        neigh = set()
        for dr in (-2, -1, 0, 1, 2):
            for dc in (-2, -1, 0, 1, 2):
                r0, c0 = row + dr, col + dc
                if 0 <= r0 < ny and 0 <= c0 < nx and labels[r0, c0] > 0:
                    neigh.add(int(labels[r0, c0]))
        for i, j in itertools.combinations(sorted(neigh), 2):
            cell_counts = counts.setdefault((i, j), {})
            for wid in wids:
                cell_counts[wid] = cell_counts.get(wid, 0) + 1
    # walls separating a region pair, most-shared first
    adjacency = {k: [w for w, _ in sorted(v.items(), key=lambda kv: (-kv[1], kv[0]))]
                 for k, v in counts.items()}
    return RegionDecomposition(network=network, grid_n=grid_n, regions=regs,
                               adjacency=adjacency, label_grid=labels, extent=network.box)


# ---------------------------------------------------------------------------
# Detours and MARs
# ---------------------------------------------------------------------------

def path_crossings(network: SpectralNetwork, path: PathSpec, include_backward: bool = False,
                   tangent_tol: float = 1e-3):
    """Wall crossings of a polyline path, ordered by path parameter.

    Each crossing is (s, wall, wall_sample_index, point).  Tangential
    crossings raise CrossingError.
    """
    pts = np.array(path.points, dtype=complex)
    lens = np.abs(np.diff(pts))
    cum = np.concatenate([[0.0], np.cumsum(lens)]) / lens.sum()
    out = []
    for w in network.walls:
        if w.backward and not include_backward:
            continue
        seen = []
        for k_path, k_wall, t1, t2, pt in _segment_intersections(pts, w.points):
            if any(abs(pt - q) < 1e-9 for q in seen):
                continue
            seen.append(pt)
            d_path = (pts[k_path + 1] - pts[k_path])
            d_wall = (w.points[min(k_wall + 1, len(w.points) - 1)] - w.points[k_wall])
            cross = (d_path.real * d_wall.imag - d_path.imag * d_wall.real)
            if abs(cross) < tangent_tol * abs(d_path) * abs(d_wall):
                raise CrossingError(f"tangential wall crossing near {pt:.4g}")
            s = cum[k_path] + t1 * (cum[k_path + 1] - cum[k_path])
            out.append((float(s), w, int(k_wall), complex(pt)))
    out.sort(key=lambda h: h[0])
    return out


def _leg_integrals(curve, path, track):
    """Cumulative integrals of all tracked sheets at the track samples."""
    xs = track.xs
    sheets = track.sheets
    mid = (sheets[1:] + sheets[:-1]) / 2.0
    dx = np.diff(xs)
    inc = mid * dx[:, None]
    return np.concatenate([np.zeros((1, curve.r), dtype=complex), np.cumsum(inc, axis=0)])


def detour_integral(curve: SpectralCurveSpec, network: SpectralNetwork,
                    path: PathSpec, crossing, track=None, cumulative=None) -> float:
    """The detour value at one wall crossing of the path.

    Rides the wall's leading sheet from P to the crossing and its trailing
    sheet on to Q, per the wall's traced label order.
    """
    if track is None:
        track = continue_sheets(curve, path)
    if cumulative is None:
        cumulative = _leg_integrals(curve, path, track)
    s, wall, k_wall, pt = crossing
    idx = int(np.searchsorted(track.s, s))
    idx = min(max(idx, 1), len(track.s) - 1)
    sheets_here = track.sheets_at(curve, s)
    lam_i, lam_j = wall.pair[k_wall]
    i_track = int(np.argmin(np.abs(sheets_here - lam_i)))
    j_track = int(np.argmin(np.abs(sheets_here - lam_j)))
    total = cumulative[-1]
    # interpolate cumulative integral at s
    frac = ((s - track.s[idx - 1]) / (track.s[idx] - track.s[idx - 1])
            if track.s[idx] > track.s[idx - 1] else 0.0)
    at_s = cumulative[idx - 1] + frac * (cumulative[idx] - cumulative[idx - 1])
    first_leg = at_s[i_track]
    second_leg = total[j_track] - at_s[j_track]
    return float((first_leg + second_leg).real)


def simply_wkb_related(curve: SpectralCurveSpec, network: SpectralNetwork,
                       p: complex, q: complex, path: PathSpec | None = None,
                       tol: float = DETOUR_TOL):
    """No detour along the path dominates both of its sheet integrals.

    Returns (flag, report).  A detour at a crossing of an (i,j)-labeled wall
    dominates when it is >= both Re int lambda_i and Re int lambda_j over
    the whole path.
    """
    if path is None:
        path = PathSpec((p, q))
    track = continue_sheets(curve, path)
    cumulative = _leg_integrals(curve, path, track)
    total = cumulative[-1]
    crossings = path_crossings(network, path)
    report = []
    related = True
    for crossing in crossings:
        s, wall, k_wall, pt = crossing
        d = detour_integral(curve, network, path, crossing, track, cumulative)
        sheets_here = track.sheets_at(curve, s)
        lam_i, lam_j = wall.pair[k_wall]
        i_track = int(np.argmin(np.abs(sheets_here - lam_i)))
        j_track = int(np.argmin(np.abs(sheets_here - lam_j)))
        ii = float(total[i_track].real)
        ij = float(total[j_track].real)
        dominates = (d >= ii - tol) and (d >= ij - tol)
        if dominates:
            related = False
        report.append({"s": s, "wall": wall.wall_id, "point": pt, "detour": d,
                       "direct_i": ii, "direct_j": ij, "dominates": dominates})
    return related, report


@dataclass(frozen=True)
class MAR:
    """A maximal abelian region: a certified union of regions."""

    mar_id: int
    region_ids: tuple
    basepoint: complex
    section: tuple              # sheet order at the basepoint, Re-descending


def region_graph_path(decomp: RegionDecomposition, p: complex, q: complex,
                      allowed: set) -> PathSpec | None:
    """Polyline from p to q through region reps and wall midpoints.

    Both endpoints must lie in regions of ``allowed``; the path walks the
    region adjacency graph restricted to the allowed set.
    """
    rp, rq = decomp.region_of(p), decomp.region_of(q)
    if rp is None or rq is None or rp not in allowed or rq not in allowed:
        return None
    if rp == rq:
        return PathSpec((p, q)) if p != q else None
    prev = {rp: None}
    frontier = [rp]
    while frontier and rq not in prev:
        nxt = []
        for r in frontier:
            for nb in decomp.neighbors(r):
                if nb in allowed and nb not in prev:
                    prev[nb] = r
                    nxt.append(nb)
        frontier = nxt
    if rq not in prev:
        return None
    chain = [rq]
    while prev[chain[-1]] is not None:
        chain.append(prev[chain[-1]])
    chain.reverse()
    pts = [p]
    for r1, r2 in zip(chain, chain[1:]):
        mid = _shared_boundary_midpoint(decomp, r1, r2)
        rep2 = decomp.region(r2).reps[0]
        if abs(mid - pts[-1]) > 1e-12:
            pts.append(mid)
        if r2 != rq and abs(rep2 - pts[-1]) > 1e-12:
            pts.append(rep2)
    if abs(q - pts[-1]) > 1e-12:
        pts.append(q)
    return PathSpec(tuple(pts))


def _shared_boundary_midpoint(decomp: RegionDecomposition, r1: int, r2: int) -> complex:
    key = (min(r1, r2), max(r1, r2))
    wids = decomp.adjacency.get(key, [])
    net = decomp.network
    m1 = decomp.region(r1).cells
    m2 = decomp.region(r2).cells
    best, best_d = None, np.inf
    c1, c2 = decomp.region(r1).reps[0], decomp.region(r2).reps[0]
    target = (c1 + c2) / 2.0
    for wid in wids:
        for pt in net.walls[wid].points:
            d1 = _mask_distance(decomp, m1, pt)
            d2 = _mask_distance(decomp, m2, pt)
            score = d1 + d2 + 0.3 * abs(pt - target)
            if score < best_d:
                best_d, best = score, pt
    return complex(best) if best is not None else target


def _mask_distance(decomp: RegionDecomposition, mask: np.ndarray, x: complex,
                   window: int = 14) -> float:
    (a, b), (c, d) = decomp.extent
    ny, nx = mask.shape
    col = int((x.real - a) / (b - a) * nx)
    row = int((x.imag - c) / (d - c) * ny)
    r0, r1 = max(0, row - window), min(ny, row + window + 1)
    c0, c1 = max(0, col - window), min(nx, col + window + 1)
    sub = mask[r0:r1, c0:c1]
    if not sub.any():
        return 10.0
    rows, cols = np.nonzero(sub)
    pts = (a + (cols + c0 + 0.5) * (b - a) / nx) + 1j * (c + (rows + r0 + 0.5) * (d - c) / ny)
    return float(np.min(np.abs(pts - x)))


def _union_paths(decomp, r1, r2, allowed, max_paths=12, cutoff=7):
    """Simple region-id paths from r1 to r2 inside the allowed set."""
    import networkx as nx
    g = nx.Graph()
    g.add_nodes_from(allowed)
    for (i, j) in decomp.adjacency:
        if i in allowed and j in allowed:
            g.add_edge(i, j)
    paths = []
    for p in nx.all_simple_paths(g, r1, r2, cutoff=cutoff):
        paths.append(tuple(p))
        if len(paths) >= max_paths:
            break
    return paths


def _chain_to_polyline(decomp, p, q, chain) -> PathSpec | None:
    pts = [p]
    for r1, r2 in zip(chain, chain[1:]):
        mid = _shared_boundary_midpoint(decomp, r1, r2)
        if abs(mid - pts[-1]) > 1e-12:
            pts.append(mid)
        if r2 != chain[-1]:
            rep2 = decomp.region(r2).reps[0]
            if abs(rep2 - pts[-1]) > 1e-12:
                pts.append(rep2)
    if abs(q - pts[-1]) > 1e-12:
        pts.append(q)
    return PathSpec(tuple(pts)) if len(pts) >= 2 else None


def _regions_at_branch_points(decomp: RegionDecomposition):
    """For each branch point, the region ids whose closure contains it."""
    net = decomp.network
    out = []
    for bp in net.branch:
        near = set()
        for r in decomp.regions:
            if _mask_distance(decomp, r.cells, bp.x) < 4.0 * (decomp.extent[0][1]
                                                              - decomp.extent[0][0]) / decomp.grid_n:
                near.add(r.region_id)
        out.append(near)
    return out


def certify_union(curve, network, decomp, region_ids, pair_budget: int = 25,
                  bp_regions=None):
    """Sampled abelianness check for a union of regions.

    Two ingredients, both reflecting that the detour criterion only depends
    on the homotopy class of the path in the branch-punctured union:

    * no branch point may be interior to the union (a path winding around
      one crosses two walls of the same branch point, and that detour
      always dominates);
    * every sampled point pair must admit a simple region chain whose
      polyline is simply WKB-related (all chains are then homotopic).
    """
    ids = sorted(region_ids)
    allowed = set(ids)
    if bp_regions is None:
        bp_regions = _regions_at_branch_points(decomp)
    for near in bp_regions:
        if near and near <= allowed:
            return False
    pairs = list(itertools.combinations(ids, 2))
    if len(pairs) > pair_budget:
        idx = np.linspace(0, len(pairs) - 1, pair_budget).astype(int)
        pairs = [pairs[i] for i in sorted(set(idx))]
    for r1, r2 in pairs:
        p = decomp.region(r1).reps[0]
        q = decomp.region(r2).reps[0]
        good = False
        for chain in _union_paths(decomp, r1, r2, allowed):
            path = _chain_to_polyline(decomp, p, q, chain)
            if path is None:
                continue
            ok, _ = simply_wkb_related(curve, network, p, q, path)
            if ok:
                good = True
                break
        if not good:
            return False
    return True


class _PairPathCache:
    """Memoizes simply_wkb_related per (region pair, region chain)."""

    def __init__(self, curve, network, decomp):
        self.curve = curve
        self.network = network
        self.decomp = decomp
        self.cache = {}

    def good_chain(self, chain) -> bool:
        key = tuple(chain)
        if key not in self.cache:
            p = self.decomp.region(chain[0]).reps[0]
            q = self.decomp.region(chain[-1]).reps[0]
            path = _chain_to_polyline(self.decomp, p, q, chain)
            if path is None:
                self.cache[key] = False
            else:
                ok, _ = simply_wkb_related(self.curve, self.network, p, q, path)
                self.cache[key] = bool(ok)
        return self.cache[key]


def _certify_cached(decomp, ids, bp_regions, cache: _PairPathCache,
                    pair_budget: int) -> bool:
    allowed = set(ids)
    for near in bp_regions:
        if near and near <= allowed:
            return False
    pairs = list(itertools.combinations(sorted(ids), 2))
    if len(pairs) > pair_budget:
        idx = np.linspace(0, len(pairs) - 1, pair_budget).astype(int)
        pairs = [pairs[i] for i in sorted(set(idx))]
    for r1, r2 in pairs:
        chains = _union_paths(decomp, r1, r2, allowed)
        if not chains:
            return False
        if not any(cache.good_chain(chain) for chain in chains):
            return False
    return True


def compute_mars(curve: SpectralCurveSpec, network: SpectralNetwork,
                 decomp: RegionDecomposition, pair_budget: int = 25,
                 set_budget: int = 4000) -> list:
    """Enumerate all maximal certified unions of adjacent regions.

    Grows the family of certified connected unions level by level from
    singletons; MARs are the maximal elements (they overlap in general).
    """
    cache = _PairPathCache(curve, network, decomp)
    bp_regions = _regions_at_branch_points(decomp)
    certified = {frozenset({r.region_id}) for r in decomp.regions}
    frontier = set(certified)
    truncated = False
    while frontier:
        nxt = set()
        for s in sorted(frontier, key=sorted):
            for a in sorted({nb for r in s for nb in decomp.neighbors(r)} - s):
                t = frozenset(s | {a})
                if t in certified or t in nxt:
                    continue
                if len(certified) + len(nxt) >= set_budget:
                    truncated = True
                    break
                if _certify_cached(decomp, t, bp_regions, cache, pair_budget):
                    nxt.add(t)
            if truncated:
                break
        certified |= nxt
        frontier = nxt
        if truncated:
            break
    if truncated:
        import warnings
        warnings.warn("MAR set budget exhausted; result may be partial", RuntimeWarning)
    maximal = [s for s in certified if not any(s < t for t in certified)]
    mars = []
    for i, k in enumerate(sorted(tuple(sorted(s)) for s in maximal)):
        base_region = decomp.region(k[0])
        bpnt = base_region.reps[0]
        sheet_vals = roots_at(curve, bpnt)
        sheet_vals = sheet_vals[np.lexsort((-sheet_vals.imag, -sheet_vals.real))]
        order = tuple(int(i2) for i2 in np.argsort(-sheet_vals.real, kind="stable"))
        mars.append(MAR(mar_id=i, region_ids=k, basepoint=bpnt, section=order))
    return mars


# ---------------------------------------------------------------------------
# BPS web search (finite webs from three branch points)
# ---------------------------------------------------------------------------

def _wall_triangle(network: SpectralNetwork):
    """The smallest label-chained triangle of primary-wall crossings.

    Looks for three walls from three distinct branch points whose pairwise
    crossings are mutually close; returns (walls, vertices, signed_area).
    """
    prim = [w for w in network.walls if w.origin.startswith("bp:") and not w.backward]
    by_bp = {}
    for w in prim:
        by_bp.setdefault(w.origin, []).append(w)
    if len(by_bp) < 3:
        return None
    best = None
    for o1, o2, o3 in itertools.combinations(sorted(by_bp), 3):
        for w1 in by_bp[o1]:
            for w2 in by_bp[o2]:
                for w3 in by_bp[o3]:
                    h12 = _segment_intersections(w1.points, w2.points)
                    h23 = _segment_intersections(w2.points, w3.points)
                    h31 = _segment_intersections(w3.points, w1.points)
                    if not (h12 and h23 and h31):
                        continue
                    for a in h12:
                        for b in h23:
                            for c in h31:
                                peri = abs(a[4] - b[4]) + abs(b[4] - c[4]) + abs(c[4] - a[4])
                                if best is None or peri < best[0]:
                                    best = (peri, (w1, w2, w3), (a, b, c))
    if best is None:
        return None
    peri, ws, hits = best
    verts = tuple(h[4] for h in hits)
    v1, v2, v3 = verts
    area = 0.5 * ((v2 - v1).real * (v3 - v1).imag - (v2 - v1).imag * (v3 - v1).real)
    return ws, hits, verts, float(area)


def bps_web_search(curve: SpectralCurveSpec, theta_grid,
                   box=((-3.0, 3.0), (-3.0, 3.0)), step: float = 0.01,
                   residual_tol: float = 1e-8):
    """Bisect on theta for a finite three-wall web (junction residual -> 0).

    Returns (theta_star, web, Z) with Z the central charge of the lifted
    cycle, or None when the signed junction residual never changes sign.
    """
    thetas = list(theta_grid)
    areas = []
    for th in thetas:
        net = trace_network(curve, th, box=box, step=step, primary_only=True)
        tri = _wall_triangle(net)
        areas.append(None if tri is None else tri[3])
    bracket = None
    for t1, t2, a1, a2 in zip(thetas, thetas[1:], areas, areas[1:]):
        if a1 is not None and a2 is not None and a1 * a2 < 0:
            bracket = (t1, t2, a1, a2)
            break
    if bracket is None:
        return None
    lo, hi, alo, ahi = bracket
    for _ in range(60):
        mid = (lo + hi) / 2.0
        net = trace_network(curve, mid, box=box, step=step, primary_only=True)
        tri = _wall_triangle(net)
        if tri is None:
            break
        am = tri[3]
        if abs(am) < residual_tol or hi - lo < 1e-12:
            break
        if alo * am < 0:
            hi, ahi = mid, am
        else:
            lo, alo = mid, am
    theta_star = (lo + hi) / 2.0
    net = trace_network(curve, theta_star, box=box, step=step, primary_only=True)
    tri = _wall_triangle(net)
    ws, hits, verts, area = tri
    junction = sum(verts) / 3.0
    z = 0.0 + 0.0j
    legs = []
    for w, hit in zip(ws, (hits[0], hits[1], hits[2])):
        # mass of each leg accumulated from its branch point to the junction
        k = hit[0] if w is ws[0] else hit[1]
        k = min(k, len(w.mass) - 1)
        legs.append({"wall": w.wall_id, "origin": w.origin, "mass": float(w.mass[k])})
        z += w.mass[k] * np.exp(1j * theta_star)
    web = {"theta": theta_star, "junction": junction, "legs": legs,
           "residual_area": area}
    return theta_star, web, z
