"""The link of the glued vertex o and its spherical-building completion.

The eight unbounded sectors seed an octagon; gluing a two-edge bridge into
every four-edge path not already in a hexagon, generation by generation,
grows a finite core of the universal A_2 spherical building generated by
the octagon.  Distances between plane points across the collision line are
answered by developing both points into a common hexagon's apartment.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .apartment import VectorDistance, vector_distance
from .errors import BudgetError, DegeneracyError, GluingError
from .prebuilding import PreBuilding, _leg_quad, map_point

SNAP_TOL = 0.05


@dataclass
class LinkGraph:
    """Bipartite link graph with generation stamps on its edges."""

    adj: dict = field(default_factory=dict)         # vertex -> set of vertices
    color: dict = field(default_factory=dict)       # vertex -> 0 (black) / 1 (white)
    edge_gen: dict = field(default_factory=dict)    # frozenset -> generation
    seed_cycle: tuple = ()                          # octagon vertices in order
    edge_region: dict = field(default_factory=dict)  # frozenset -> region id
    vertex_wall: dict = field(default_factory=dict)  # octagon vertex -> wall id
    bridges: dict = field(default_factory=dict)     # frozenset{u,w} -> middle vertex

    def add_vertex(self, v, color):
        if v not in self.adj:
            self.adj[v] = set()
            self.color[v] = color

    def add_edge(self, u, v, gen):
        e = frozenset((u, v))
        if e in self.edge_gen:
            return
        if self.color[u] == self.color[v]:
            raise DegeneracyError(f"edge {u}-{v} would join same-colored vertices")
        self.adj[u].add(v)
        self.adj[v].add(u)
        self.edge_gen[e] = gen

    def edges(self):
        return sorted(self.edge_gen, key=lambda e: tuple(sorted(e)))

    def n_vertices(self):
        return len(self.adj)

    def degree(self, v):
        return len(self.adj[v])

    def is_bipartite(self) -> bool:
        for e in self.edge_gen:
            u, v = tuple(e)
            if self.color[u] == self.color[v]:
                return False
        return True

    def girth(self, vertices=None) -> int:
        """Shortest cycle length through any of the given vertices."""
        best = np.inf
        verts = vertices if vertices is not None else list(self.adj)
        for s in verts:
            dist = {s: 0}
            parent = {s: None}
            frontier = [s]
            while frontier:
                nxt = []
                for u in frontier:
                    for w in self.adj[u]:
                        if w not in dist:
                            dist[w] = dist[u] + 1
                            parent[w] = u
                            nxt.append(w)
                        elif parent[u] != w and parent[w] != u:
                            best = min(best, dist[u] + dist[w] + 1)
                frontier = nxt
        return int(best)

    def distance(self, u, w) -> int:
        dist = {u: 0}
        frontier = [u]
        while frontier:
            nxt = []
            for a in frontier:
                for b in self.adj[a]:
                    if b not in dist:
                        dist[b] = dist[a] + 1
                        if b == w:
                            return dist[b]
                        nxt.append(b)
            frontier = nxt
        return -1


@dataclass
class SectorEdgeMap:
    """Region id -> link edge, for exterior sectors and the yellow pair."""

    exterior: dict
    yellow: dict

    def edge_of(self, rid):
        if rid in self.exterior:
            return self.exterior[rid]
        return self.yellow.get(rid)


def octagon_seed(pb: PreBuilding):
    """Read the cyclic order of unbounded sector germs at o into a seed cycle.

    A single-apartment link (six sectors) is returned flagged complete.
    """
    decomp = pb.decomp
    ext = [r for r in decomp.regions if r.unbounded]
    ext.sort(key=lambda r: r.far_angle)
    n = len(ext)
    link = LinkGraph()
    verts = [f"v{k}" for k in range(n)]
    for k, v in enumerate(verts):
        link.add_vertex(v, k % 2)
    if n % 2 != 0:
        raise DegeneracyError("odd exterior sector count cannot be bipartite")
    for k in range(n):
        u, v = verts[k], verts[(k + 1) % n]
        link.add_edge(u, v, 0)
        rid = ext[(k + 1) % n].region_id if False else ext[k].region_id
        link.edge_region[frozenset((u, v))] = ext[k].region_id
    # vertex between edge k-1 and k separates regions ext[k-1], ext[k]
    for k in range(n):
        r1 = ext[(k - 1) % n].region_id
        r2 = ext[k].region_id
        key = (min(r1, r2), max(r1, r2))
        wids = decomp.adjacency.get(key, [])
        link.vertex_wall[verts[k]] = wids[0] if wids else None
    link.seed_cycle = tuple(verts)
    sector_map = SectorEdgeMap(
        exterior={ext[k].region_id: frozenset((verts[k], verts[(k + 1) % n]))
                  for k in range(n)},
        yellow={})
    return link, sector_map


def _four_paths(link: LinkGraph):
    """All 4-edge simple paths, as vertex tuples, up to reversal."""
    out = set()
    for v0 in link.adj:
        stack = [(v0,)]
        while stack:
            path = stack.pop()
            if len(path) == 5:
                if path[0] <= path[-1]:
                    out.add(path)
                else:
                    out.add(tuple(reversed(path)))
                continue
            for w in link.adj[path[-1]]:
                if w not in path:
                    stack.append(path + (w,))
    return sorted(out)


def _in_hexagon(link: LinkGraph, path) -> bool:
    """Is the 4-path (5 vertices) contained in some 6-cycle?"""
    u, a, b, c, w = path
    common = link.adj[u] & link.adj[w]
    return bool(common - {a, b, c})


def complete(link: LinkGraph, pb_or_sector_map=None, generations: int = 1):
    """Glue a 2-edge bridge into every 4-path not contained in a hexagon.

    Rounds use set semantics: all qualifying 4-paths of the current graph
    are collected first, then at most one bridge per endpoint pair is added.
    Returns the updated sector map when one is supplied (the first round's
    bridge between the two branch-point panels carries the yellow sectors).
    """
    sector_map = pb_or_sector_map
    start = max(link.edge_gen.values(), default=0)
    for round_no in range(start + 1, start + generations + 1):
        todo = {}
        for path in _four_paths(link):
            if _in_hexagon(link, path):
                continue
            u, w = path[0], path[-1]
            key = frozenset((u, w))
            if key in link.bridges:
                continue
            todo.setdefault(key, path)
        if not todo:
            break
        for key in sorted(todo, key=lambda k: tuple(sorted(k))):
            u, w = sorted(key)
            m = f"g{round_no}m{len(link.bridges)}"
            link.add_vertex(m, 1 - link.color[u])
            link.add_edge(u, m, round_no)
            link.add_edge(m, w, round_no)
            link.bridges[key] = m
    return link


def assign_yellow_sectors(pb: PreBuilding, link: LinkGraph, sector_map: SectorEdgeMap):
    """Map the bounded (yellow) regions onto the first bridge's two edges.

    The bridge between the two panels that contain the branch-point images
    is the pair of sectors carrying the central regions; each yellow region
    attaches to the panel whose branch point it touches.
    """
    decomp = pb.decomp
    net = pb.network
    bp_vertex = {}
    from .network import _mask_distance
    cell0 = (decomp.extent[0][1] - decomp.extent[0][0]) / decomp.grid_n
    for k0, v in enumerate(link.seed_cycle):
        wid = link.vertex_wall.get(v)
        if wid is None:
            continue
        wall = net.walls[wid]
        if not wall.origin.startswith("bp:"):
            continue
        k = int(wall.origin.split(":")[1])
        # the two regions this panel separates must touch the branch point,
        # which singles out the straight wall germ anchored there
        n = len(link.seed_cycle)
        r1 = link.edge_region[frozenset((link.seed_cycle[(k0 - 1) % n], v))]
        r2 = link.edge_region[frozenset((v, link.seed_cycle[(k0 + 1) % n]))]
        if all(_mask_distance(decomp, decomp.region(r).cells, net.branch[k].x) < 4 * cell0
               for r in (r1, r2)):
            bp_vertex[k] = v
    if len(bp_vertex) < 2:
        raise GluingError("could not locate the two branch-point panels in the link")
    ks = sorted(bp_vertex)
    key = frozenset((bp_vertex[ks[0]], bp_vertex[ks[1]]))
    if key not in link.bridges:
        raise GluingError("the yellow bridge is missing; complete the link first")
    m = link.bridges[key]
    from .network import _mask_distance
    cell = (decomp.extent[0][1] - decomp.extent[0][0]) / decomp.grid_n
    for reg in decomp.regions:
        if reg.unbounded:
            continue
        touching = [k for k in ks
                    if _mask_distance(decomp, reg.cells, net.branch[k].x) < 4 * cell]
        if len(touching) != 1:
            raise GluingError(f"yellow region {reg.region_id} touches {len(touching)} panels")
        v = bp_vertex[touching[0]]
        sector_map.yellow[reg.region_id] = frozenset((v, m))
    # the middle panel is the germ of the backward collision line between
    # the two yellow regions
    yellows = sorted(sector_map.yellow)
    if len(yellows) == 2:
        key = (min(yellows), max(yellows))
        for wid in decomp.adjacency.get(key, []):
            if net.walls[wid].backward:
                link.vertex_wall[m] = wid
                break
    return sector_map


def verify_spherical(link: LinkGraph, report_pairs: bool = True) -> dict:
    """Spherical-building checks on the closed core of the completed graph.

    The core holds the vertices all of whose 4-paths already lie in
    hexagons; on it the graph must be bipartite of girth 6 and diameter 3,
    with every vertex in at least two edges and every edge pair sharing a
    hexagon.
    """
    core = set(link.adj)
    for path in _four_paths(link):
        if not _in_hexagon(link, path):
            core.discard(path[0])
            core.discard(path[-1])
    report = {"core_size": len(core), "bipartite": link.is_bipartite()}
    report["min_degree_ok"] = all(link.degree(v) >= 2 for v in core)
    report["girth"] = link.girth(sorted(core))
    diam = 0
    for u in core:
        dist = {u: 0}
        frontier = [u]
        while frontier:
            nxt = []
            for a in frontier:
                for b in link.adj[a]:
                    if b not in dist:
                        dist[b] = dist[a] + 1
                        nxt.append(b)
            frontier = nxt
        diam = max(diam, max(dist[v] for v in core if v in dist))
    report["diameter"] = diam
    if report_pairs:
        core_edges = [e for e in link.edges() if set(e) <= core]
        ok = True
        for e1, e2 in itertools.combinations(core_edges, 2):
            if not hexagons_through(link, e1, e2, max_count=1):
                ok = False
                break
        report["edge_pairs_in_hexagons"] = ok
    report["passed"] = bool(
        report["bipartite"] and report["min_degree_ok"] and report["girth"] == 6
        and report["diameter"] == 3 and report.get("edge_pairs_in_hexagons", True))
    return report


def _paths_of_length(link, a, b, length, banned):
    """Simple paths from a to b with `length` edges avoiding banned vertices."""
    out = []
    stack = [(a,)]
    while stack:
        p = stack.pop()
        if len(p) == length + 1:
            if p[-1] == b:
                out.append(p)
            continue
        for w in link.adj[p[-1]]:
            if w in p or (w in banned and w != b):
                continue
            if len(p) == length and w != b:
                continue
            stack.append(p + (w,))
    return out


def hexagons_through(link: LinkGraph, e1, e2, max_count: int = 8):
    """All 6-cycles containing both edges, as ordered vertex 6-tuples."""
    (a, b), (c, d) = tuple(sorted(e1)), tuple(sorted(e2))
    if e1 == e2:
        hexes = []
        for p in _paths_of_length(link, a, b, 5, {a, b}):
            hexes.append(p[:-1] + (p[-1],))
        # simpler: any 6-cycle through the edge
        out = []
        for p in _paths_of_length(link, b, a, 5, set()):
            if len(set(p)) == 6:
                out.append((a,) + p[:-1])
                if len(out) >= max_count:
                    break
        return out
    out = []
    seen = set()
    for (u1, u2) in ((a, b), (b, a)):
        for (w1, w2) in ((c, d), (d, c)):
            for len1 in (1, 2, 3):
                len2 = 4 - len1
                if len1 == 0 or len2 == 0:
                    continue
                for p1 in _paths_of_length(link, u2, w1, len1, {u1, w2}):
                    for p2 in _paths_of_length(link, w2, u1, len2, set(p1) - {w2}):
                        cyc = (u1, u2) + p1[1:] + (w2,) + p2[1:-1]
                        if len(cyc) != 6 or len(set(cyc)) != 6:
                            continue
                        canon = _canon_cycle(cyc)
                        if canon in seen:
                            continue
                        seen.add(canon)
                        out.append(cyc)
                        if len(out) >= max_count:
                            return out
    return out


def _canon_cycle(cyc):
    n = len(cyc)
    best = None
    for s in range(n):
        for direction in (1, -1):
            cand = tuple(cyc[(s + direction * k) % n] for k in range(n))
            if best is None or cand < best:
                best = cand
    return best


# ---------------------------------------------------------------------------
# Developing points into a hexagon apartment
# ---------------------------------------------------------------------------

def _plane_basis(r: int) -> np.ndarray:
    """The 2r(r-1)/2... canonical wall half-line directions for A_2 (r=3)."""
    if r != 3:
        raise DegeneracyError("hexagon development implemented for r = 3 only")
    dirs = {}
    for (i, j) in itertools.combinations(range(3), 2):
        v = np.zeros(3)
        v[i] = v[j] = 1.0
        v[3 - i - j] = -2.0
        v /= np.linalg.norm(v)
        dirs[(i, j, +1)] = v
        dirs[(i, j, -1)] = -v
    return dirs


def _snap_ray(direction: np.ndarray):
    """Snap an approximate panel ray direction onto an exact wall half-line."""
    d = np.asarray(direction, dtype=float)
    d = d - d.mean()
    norm = np.linalg.norm(d)
    if norm < 1e-12:
        raise DegeneracyError("vanishing panel direction")
    d /= norm
    best, best_key = None, None
    for key, v in _plane_basis(d.size).items():
        score = float(np.dot(d, v))
        if best is None or score > best:
            best, best_key = score, key
    if best < 1.0 - SNAP_TOL:
        raise GluingError(f"panel ray {d} is not close to any reflection wall direction")
    return best_key


def _ray_vector(key) -> np.ndarray:
    return _plane_basis(3)[(key[0], key[1], +1)] * key[2]


def _reflect_perm(key) -> tuple:
    """Weyl reflection fixing the wall containing the given half-line."""
    i, j, _ = key
    perm = list(range(3))
    perm[i], perm[j] = perm[j], perm[i]
    return tuple(perm)


def _apply_perm(perm, vec):
    return np.asarray(vec)[list(perm)]


def _compose(p2, p1):
    """p2 after p1."""
    return tuple(p1[i] for i in p2)


def _chart_point(pb: PreBuilding, chart, q: complex) -> np.ndarray:
    """Develop an arbitrary plane point inside (or on the edge of) a chart."""
    from .prebuilding import _nearest_mar_region
    rid = pb.decomp.region_of(q)
    if rid not in chart.mar.region_ids:
        rid = _nearest_mar_region(pb.decomp, chart.mar, q)
    a0, coords, sheets = chart.anchors[rid]
    if abs(q - a0) < 1e-15:
        return coords
    leg, _ = _leg_quad(pb.curve, sheets, a0, q)
    return coords + leg


def _separating_sample(pb: PreBuilding, rid1: int, rid2: int, wid: int) -> complex:
    """A point on the wall stretch that actually separates the two regions."""
    decomp = pb.decomp
    from .network import _mask_distance
    wall = pb.network.walls[wid]
    cell = (decomp.extent[0][1] - decomp.extent[0][0]) / decomp.grid_n
    m1 = decomp.region(rid1).cells
    m2 = decomp.region(rid2).cells
    good = [k for k, pt in enumerate(wall.points)
            if _mask_distance(decomp, m1, pt) < 3 * cell
            and _mask_distance(decomp, m2, pt) < 3 * cell]
    if not good:
        return wall.points[len(wall.points) // 2]
    return wall.points[good[len(good) // 2]]


def _panel_ray(pb: PreBuilding, link: LinkGraph, ch, anchor, vertex, rid: int):
    """Snapped half-line key of one panel of a sector, seen in a chart."""
    wid = link.vertex_wall.get(vertex)
    if wid is None:
        raise GluingError(f"link vertex {vertex} has no separating wall recorded")
    wall = pb.network.walls[wid]
    target = None
    if wall.origin.startswith("bp:"):
        k = int(wall.origin.split(":")[1])
        target = ch.vertex_images.get(f"bp:{k}")
    if target is None:
        edge = None
        for (a, b), wids in pb.decomp.adjacency.items():
            if wid in wids and rid in (a, b):
                edge = (a, b)
                break
        if edge is None:
            sample = wall.points[len(wall.points) // 2]
        else:
            sample = _separating_sample(pb, edge[0], edge[1], wid)
        target = _chart_point(pb, ch, sample)
    return _snap_ray(np.asarray(target) - np.asarray(anchor))


def _sector_frame(pb: PreBuilding, link: LinkGraph, sector_map: SectorEdgeMap,
                  rid: int):
    """Chart realization of one sector: (chart, anchor coords, vertex->ray key)."""
    cids = pb.charts_of_region(rid)
    if not cids:
        raise GluingError(f"region {rid} has no chart")
    ch = pb.chart(cids[0])
    anchor = ch.region_anchor_vertex(rid)
    edge = sector_map.edge_of(rid)
    rays = {v: _panel_ray(pb, link, ch, anchor, v, rid) for v in edge}
    return ch, anchor, rays


_PLANE_2D = None


def _angle_of(key) -> float:
    global _PLANE_2D
    if _PLANE_2D is None:
        b1 = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
        b2 = np.array([1.0, 1.0, -2.0]) / np.sqrt(6.0)
        _PLANE_2D = (b1, b2)
    v = _ray_vector(key)
    return float(np.arctan2(np.dot(v, _PLANE_2D[1]), np.dot(v, _PLANE_2D[0])))


def _key_at_angle(angle: float):
    best, best_key = None, None
    for (i, j) in itertools.combinations(range(3), 2):
        for s in (+1, -1):
            key = (i, j, s)
            d = (_angle_of(key) - angle + np.pi) % (2 * np.pi) - np.pi
            if best is None or abs(d) < best:
                best, best_key = abs(d), key
    return best_key


def _weyl_matching(src_keys, dst_keys):
    """The Weyl permutation sending both source rays onto the target rays."""
    for perm in itertools.permutations(range(3)):
        ok = True
        for ks, kd in zip(src_keys, dst_keys):
            moved = _apply_perm(perm, _ray_vector(ks))
            if np.max(np.abs(moved - _ray_vector(kd))) > 1e-9:
                ok = False
                break
        if ok:
            return perm
    return None


def universal_distance(pb: PreBuilding, link: LinkGraph, sector_map: SectorEdgeMap,
                       p: complex, q: complex) -> VectorDistance:
    """Vector distance between h(p) and h(q) in the completed building.

    Locates the sector edges carrying the two points, develops both points
    into the apartment of every common hexagon via the shared-panel chain,
    and checks that all hexagons agree on the answer.
    """
    rid_p = pb.decomp.region_of(p)
    rid_q = pb.decomp.region_of(q)
    if rid_p is None or rid_q is None:
        raise DegeneracyError("points must lie off the network")
    e_p = sector_map.edge_of(rid_p)
    e_q = sector_map.edge_of(rid_q)
    if e_p is None or e_q is None:
        raise DegeneracyError("no sector edge for one of the regions")
    if e_p == e_q or rid_p == rid_q:
        ch, anchor, _ = _sector_frame(pb, link, sector_map, rid_p)
        x_p = _chart_point(pb, ch, p)
        x_q = _chart_point(pb, ch, q)
        return vector_distance(x_p, x_q)
    hexes = hexagons_through(link, e_p, e_q, max_count=6)
    if not hexes:
        raise BudgetError("no common hexagon at this generation budget")
    results = []
    for cyc in hexes:
        val = _distance_through_hexagon(pb, link, sector_map, cyc, e_p, e_q, p, q)
        if val is not None:
            results.append(val.values)
    if not results:
        raise BudgetError("no usable hexagon placement")
    for v in results[1:]:
        if np.max(np.abs(v - results[0])) > 1e-4 * max(1.0, float(np.max(np.abs(results[0])))):
            raise GluingError("hexagons disagree on the distance")
    return VectorDistance(results[0])


def _edge_slot(cyc, edge):
    n = len(cyc)
    for k in range(n):
        if frozenset((cyc[k], cyc[(k + 1) % n])) == edge:
            return k
    return None


def _distance_through_hexagon(pb, link, sector_map, cyc, e_p, e_q, p, q):
    k_p = _edge_slot(cyc, e_p)
    k_q = _edge_slot(cyc, e_q)
    if k_p is None or k_q is None:
        return None
    rid_p = pb.decomp.region_of(p)
    rid_q = pb.decomp.region_of(q)
    ch_p, anchor_p, rays_p = _sector_frame(pb, link, sector_map, rid_p)
    ch_q, anchor_q, rays_q = _sector_frame(pb, link, sector_map, rid_q)
    x_p = _chart_point(pb, ch_p, p) - np.asarray(anchor_p)
    x_q = _chart_point(pb, ch_q, q) - np.asarray(anchor_q)

    n = len(cyc)
    v_in, v_out = cyc[k_p], cyc[(k_p + 1) % n]
    placement = {v_in: rays_p[v_in], v_out: rays_p[v_out]}
    # rotation direction of the walk, +-60 degrees per panel
    d_ang = (_angle_of(placement[v_out]) - _angle_of(placement[v_in]) + np.pi) \
        % (2 * np.pi) - np.pi
    step = np.sign(d_ang) * np.pi / 3.0
    ang = _angle_of(placement[v_out])
    for j in range(2, n):
        v = cyc[(k_p + j) % n]
        ang += step
        placement[v] = _key_at_angle(ang)
    w_in, w_out = cyc[k_q], cyc[(k_q + 1) % n]
    perm = _weyl_matching((rays_q[w_in], rays_q[w_out]),
                          (placement[w_in], placement[w_out]))
    if perm is None:
        return None
    x_q_placed = _apply_perm(perm, x_q)
    return vector_distance(x_p, x_q_placed)
