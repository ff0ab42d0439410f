"""Plane spectral covers p^r + a_2(x) p^{r-2} + ... + a_r(x) = 0.

Root solving, branch points, analytic continuation of the sheets along
paths, non-criticality tests, and integrals of the multi-valued form
``lambda_i dx`` which feed the developing maps into the apartment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate
from scipy.optimize import linear_sum_assignment

from .errors import DegeneracyError, DimensionError, IntegrationError, PathError

DEFAULT_CLEARANCE = 1e-6
MATCH_MARGIN = 0.4


def _poly(coeffs) -> Polynomial:
    return Polynomial(np.asarray(coeffs, dtype=complex))


@dataclass(frozen=True)
class SpectralCurveSpec:
    """Degree-r plane curve with polynomial coefficients, trace zero.

    ``coeffs[k]`` is the polynomial a_{k+2}(x) (low degree first), so the
    p^{r-1} coefficient is identically absent and the sheets sum to zero.
    """

    r: int
    coeffs: tuple = field(default=())

    def __post_init__(self):
        polys = tuple(_poly(c) for c in self.coeffs)
        object.__setattr__(self, "coeffs", polys)
        if len(polys) != self.r - 1:
            raise DimensionError(
                f"need {self.r - 1} coefficient polynomials a_2..a_{self.r}, got {len(polys)}"
            )

    def char_coeffs(self, x: complex) -> np.ndarray:
        """Monic coefficient vector [1, 0, a_2(x), ..., a_r(x)] (high first)."""
        vals = [p(x) for p in self.coeffs]
        return np.array([1.0, 0.0] + vals, dtype=complex)

    def q_x(self, x: complex, p: complex) -> complex:
        """d/dx of the defining polynomial at (x, p)."""
        return sum(c.deriv()(x) * p ** (self.r - 2 - k) for k, c in enumerate(self.coeffs))

    def q_p(self, x: complex, p: complex) -> complex:
        """d/dp of the defining polynomial at (x, p)."""
        out = self.r * p ** (self.r - 1)
        for k, c in enumerate(self.coeffs):
            deg = self.r - 2 - k
            if deg > 0:
                out += deg * c(x) * p ** (deg - 1)
        return out

    def q_pp(self, x: complex, p: complex) -> complex:
        out = self.r * (self.r - 1) * p ** (self.r - 2)
        for k, c in enumerate(self.coeffs):
            deg = self.r - 2 - k
            if deg > 1:
                out += deg * (deg - 1) * c(x) * p ** (deg - 2)
        return out

    def discriminant_poly(self) -> Polynomial:
        """Discriminant of the fiber polynomial as a polynomial in x.

        Computed as the resultant of q and dq/dp via symbolic-in-x Sylvester
        elimination done with numpy polynomial arithmetic.
        """
        zero = Polynomial([0.0])
        one = Polynomial([1.0])
        q = [one, zero] + list(self.coeffs)  # degree r, high first
        dq = []
        for i, c in enumerate(q[:-1]):
            dq.append(c * (self.r - i))
        n, m = self.r, self.r - 1
        size = n + m
        sylv = [[zero] * size for _ in range(size)]
        for i in range(m):
            for j, c in enumerate(q):
                sylv[i][i + j] = c
        for i in range(n):
            for j, c in enumerate(dq):
                sylv[m + i][i + j] = c
        res = _poly_det(sylv)
        if np.allclose(res.coef, 0.0):
            raise DegeneracyError("discriminant vanishes identically: cover is not reduced")
        return res


def _poly_det(mat) -> Polynomial:
    """Determinant of a small matrix of Polynomials by fraction-free expansion."""
    n = len(mat)
    if n == 1:
        return mat[0][0]
    det = Polynomial([0.0])
    sign = 1.0
    for j in range(n):
        entry = mat[0][j]
        if entry.degree() == 0 and entry.coef[0] == 0:
            sign = -sign
            continue
        minor = [[mat[i][k] for k in range(n) if k != j] for i in range(1, n)]
        det = det + entry * _poly_det(minor) * sign
        sign = -sign
    return det


def bnr_curve() -> SpectralCurveSpec:
    """The Berk-Nevins-Roberts cover p^3 - 3p + x = 0."""
    return SpectralCurveSpec(r=3, coeffs=([-3.0], [0.0, 1.0]))


def gmn_curve() -> SpectralCurveSpec:
    """The Gaiotto-Moore-Neitzke snake cover p^3 + 4xp + 1 = 0."""
    return SpectralCurveSpec(r=3, coeffs=([0.0, 4.0], [1.0]))


def airy_curve() -> SpectralCurveSpec:
    """Two-sheet cover p^2 - x = 0."""
    return SpectralCurveSpec(r=2, coeffs=([0.0, -1.0],))


def roots_at(curve: SpectralCurveSpec, x: complex, polish: bool = True) -> np.ndarray:
    """The r fiber roots at x, Newton-polished, in no particular order."""
    roots = np.roots(curve.char_coeffs(x))
    if polish:
        coeffs = curve.char_coeffs(x)
        dcoeffs = np.polyder(coeffs)
        for _ in range(3):
            vals = np.polyval(coeffs, roots)
            dvals = np.polyval(dcoeffs, roots)
            ok = np.abs(dvals) > 1e-8
            step = np.where(ok, vals / np.where(ok, dvals, 1.0), 0.0)
            roots = roots - step
    return roots


@dataclass(frozen=True)
class BranchPoint:
    """A zero of the discriminant with its colliding sheet pair."""

    x: complex
    colliding_pair: tuple  # indices into the canonically sorted fiber at x
    double_root: complex


def _canonical_order(roots: np.ndarray) -> np.ndarray:
    return np.lexsort((-roots.imag, -roots.real))


_BRANCH_CACHE: dict = {}


def branch_points(curve: SpectralCurveSpec, search_box=((-10.0, 10.0), (-10.0, 10.0)),
                  tol: float = 1e-12) -> list:
    """All discriminant zeros in the box, each with its colliding pair.

    Roots come from companion-matrix eigenvalues of the discriminant
    polynomial, then Newton polishing.
    """
    key = (curve.r, tuple(tuple(p.coef.tolist()) for p in curve.coeffs),
           tuple(map(tuple, search_box)), tol)
    if key in _BRANCH_CACHE:
        return _BRANCH_CACHE[key]
    disc = curve.discriminant_poly()
    raw = disc.roots()
    dd = disc.deriv()
    out = []
    (re_lo, re_hi), (im_lo, im_hi) = search_box
    for x0 in raw:
        x = complex(x0)
        for _ in range(50):
            d = dd(x)
            if abs(d) < 1e-14:
                break
            step = disc(x) / d
            x -= step
            if abs(step) < tol * max(1.0, abs(x)):
                break
        if not (re_lo - 1e-9 <= x.real <= re_hi + 1e-9 and im_lo - 1e-9 <= x.imag <= im_hi + 1e-9):
            continue
        if any(abs(x - b.x) < 1e-8 for b in out):
            continue
        roots = roots_at(curve, x)
        order = _canonical_order(roots)
        roots = roots[order]
        gaps = np.abs(roots[:, None] - roots[None, :]) + np.eye(curve.r) * 1e18
        i, j = np.unravel_index(np.argmin(gaps), gaps.shape)
        pair = (min(i, j), max(i, j))
        out.append(BranchPoint(x=x, colliding_pair=pair, double_root=(roots[i] + roots[j]) / 2))
    out.sort(key=lambda b: (round(b.x.real, 9), round(b.x.imag, 9)))
    _BRANCH_CACHE[key] = out
    return out


@dataclass(frozen=True)
class PathSpec:
    """A polyline path in the x-plane avoiding branch points."""

    points: tuple

    def __post_init__(self):
        pts = tuple(complex(p) for p in self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < 2:
            raise PathError("a path needs at least two points")
        for a, b in zip(pts, pts[1:]):
            if a == b:
                raise PathError("consecutive path points must be distinct")

    @property
    def length(self) -> float:
        return sum(abs(b - a) for a, b in zip(self.points, self.points[1:]))

    def reversed(self) -> "PathSpec":
        return PathSpec(tuple(reversed(self.points)))

    def check_clearance(self, curve: SpectralCurveSpec, clearance: float = DEFAULT_CLEARANCE):
        for b in branch_points(curve):
            for a, c in zip(self.points, self.points[1:]):
                if _point_segment_distance(b.x, a, c) < clearance:
                    raise PathError(
                        f"path passes within {clearance:g} of branch point {b.x:.6g}"
                    )


def _point_segment_distance(p: complex, a: complex, b: complex) -> float:
    ab = b - a
    t = ((p - a) * ab.conjugate()).real / abs(ab) ** 2
    t = min(1.0, max(0.0, t))
    return abs(a + t * ab - p)


@dataclass
class SheetTrack:
    """Ordered fiber roots continued along a path from the initial ordering.

    ``s`` holds the global arclength-like parameter in [0, 1]; ``xs`` the
    sampled positions; ``sheets`` the (n_samples, r) continued root values.
    """

    path: PathSpec
    s: np.ndarray
    xs: np.ndarray
    sheets: np.ndarray
    segment_of: np.ndarray  # segment index per sample

    @property
    def r(self) -> int:
        return self.sheets.shape[1]

    def end_permutation(self) -> tuple:
        """perm[i] = initial-sheet index nearest to final sheet i."""
        start, end = self.sheets[0], self.sheets[-1]
        cost = np.abs(end[:, None] - start[None, :])
        rows, cols = linear_sum_assignment(cost)
        perm = [0] * self.r
        for i, j in zip(rows, cols):
            perm[i] = int(j)
        return tuple(perm)

    def sheets_at(self, curve: SpectralCurveSpec, s: float) -> np.ndarray:
        """Continued sheet values at an arbitrary parameter, Newton-polished."""
        idx = int(np.searchsorted(self.s, s))
        idx = max(0, min(idx, len(self.s) - 1))
        if idx > 0 and abs(self.s[idx - 1] - s) < abs(self.s[idx] - s):
            idx -= 1
        x = _path_point(self.path, s)
        vals = self.sheets[idx].copy()
        for _ in range(6):
            num = np.polyval(curve.char_coeffs(x), vals)
            den = np.array([curve.q_p(x, v) for v in vals])
            bad = np.abs(den) < 1e-13
            vals = vals - np.where(bad, 0.0, num / np.where(bad, 1.0, den))
        return vals


def _path_point(path: PathSpec, s: float) -> complex:
    """Point at global parameter s in [0,1], proportional to arclength."""
    lens = np.array([abs(b - a) for a, b in zip(path.points, path.points[1:])])
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    target = s * cum[-1]
    k = int(np.searchsorted(cum[1:], target, side="right"))
    k = min(k, len(lens) - 1)
    local = (target - cum[k]) / lens[k]
    return path.points[k] + local * (path.points[k + 1] - path.points[k])


def continue_sheets(curve: SpectralCurveSpec, path: PathSpec,
                    samples_per_unit: float = 40.0,
                    clearance: float = DEFAULT_CLEARANCE,
                    check: bool = True,
                    initial_sheets=None) -> SheetTrack:
    """Track the fiber roots along the path by nearest matching.

    The step is bisected adaptively whenever the matching margin (0.4 times
    the minimal root gap) fails.  ``initial_sheets`` fixes the starting
    labeling (e.g. a section transported from elsewhere); by default the
    roots at the start are put in canonical order.
    """
    if check:
        path.check_clearance(curve, clearance)
    lens = np.array([abs(b - a) for a, b in zip(path.points, path.points[1:])])
    total = lens.sum()
    cum = np.concatenate([[0.0], np.cumsum(lens)]) / total

    s_list = [0.0]
    x0 = path.points[0]
    if initial_sheets is None:
        current = roots_at(curve, x0)[_canonical_order(roots_at(curve, x0))]
    else:
        fresh = roots_at(curve, x0)
        init = np.asarray(initial_sheets, dtype=complex)
        cost = np.abs(init[:, None] - fresh[None, :])
        rows, cols = linear_sum_assignment(cost)
        current = fresh[cols]
    xs_list = [x0]
    sheet_list = [current.copy()]
    seg_list = [0]

    for k, (a, b) in enumerate(zip(path.points, path.points[1:])):
        n0 = max(2, int(np.ceil(samples_per_unit * abs(b - a))))
        sub = list(np.linspace(0.0, 1.0, n0 + 1)[1:])
        prev_t = 0.0
        prev_vals = sheet_list[-1].copy()
        depth_limit = 48
        while sub:
            t = sub[0]
            x = a + t * (b - a)
            new = roots_at(curve, x)
            cost = np.abs(prev_vals[:, None] - new[None, :])
            rows, cols = linear_sum_assignment(cost)
            matched = new[cols]
            move = float(np.max(np.abs(matched - prev_vals)))
            gaps = np.abs(prev_vals[:, None] - prev_vals[None, :]) + np.eye(curve.r) * 1e18
            margin = MATCH_MARGIN * float(gaps.min())
            if move > margin and depth_limit > 0:
                sub.insert(0, (prev_t + t) / 2.0)
                depth_limit -= 1
                continue
            if move > margin:
                raise PathError(
                    f"sheet matching failed near x = {x:.6g}; path too close to a branch point"
                )
            sub.pop(0)
            prev_t = t
            prev_vals = matched
            s_list.append(cum[k] + t * (cum[k + 1] - cum[k]))
            xs_list.append(x)
            sheet_list.append(matched.copy())
            seg_list.append(k)
    return SheetTrack(
        path=path,
        s=np.array(s_list),
        xs=np.array(xs_list),
        sheets=np.array(sheet_list),
        segment_of=np.array(seg_list),
    )


def is_noncritical(curve: SpectralCurveSpec, path: PathSpec, track: SheetTrack | None = None):
    """Check distinctness of Re<lambda_i - lambda_j, gamma'> along the path.

    Returns (flag, report) where the report carries the minimal pullback gap
    and the per-sample ordering witness of Re(lambda_i * gamma').
    """
    if track is None:
        track = continue_sheets(curve, path)
    lens = np.array([abs(b - a) for a, b in zip(path.points, path.points[1:])])
    dirs = np.array([(b - a) for a, b in zip(path.points, path.points[1:])])
    if np.any(lens == 0.0):
        return False, {"reason": "stationary tangent", "min_gap": 0.0, "ordering": None}
    dirs = dirs / lens

    min_gap = np.inf
    orderings = []
    for sheets, seg in zip(track.sheets, track.segment_of):
        pulled = (sheets * dirs[seg]).real
        order = tuple(int(i) for i in np.argsort(-pulled))
        orderings.append(order)
        diffs = np.abs(pulled[:, None] - pulled[None, :]) + np.eye(curve.r) * 1e18
        min_gap = min(min_gap, float(diffs.min()))
    constant = all(o == orderings[0] for o in orderings)
    flag = bool(min_gap > 0.0 and constant)
    return flag, {"min_gap": min_gap, "ordering": orderings[0] if constant else None,
                  "constant_ordering": constant}


def _complex_quad(f, a: float, b: float, epsabs: float) -> complex:
    re, re_err = integrate.quad(lambda t: f(t).real, a, b, epsabs=epsabs, limit=200)
    im, im_err = integrate.quad(lambda t: f(t).imag, a, b, epsabs=epsabs, limit=200)
    if max(re_err, im_err) > max(1e4 * epsabs, 1e-7):
        raise IntegrationError(f"quadrature error estimate too large: {re_err:g}, {im_err:g}")
    return re + 1j * im


def integrate_forms(curve: SpectralCurveSpec, path: PathSpec,
                    track: SheetTrack | None = None,
                    epsabs: float = 1e-10) -> np.ndarray:
    """The r complex integrals of lambda_i dx along the path, per tracked sheet.

    Adaptive Gauss-Kronrod quadrature per polyline segment; the sheet values
    at quadrature nodes are polished from the nearest track sample.
    """
    if track is None:
        track = continue_sheets(curve, path)
    lens = np.array([abs(b - a) for a, b in zip(path.points, path.points[1:])])
    cum = np.concatenate([[0.0], np.cumsum(lens)]) / lens.sum()

    out = np.zeros(curve.r, dtype=complex)
    for k, (a, b) in enumerate(zip(path.points, path.points[1:])):
        dx = b - a

        def sheet_val(t, i, _k=k, _a=a, _dx=dx):
            s = cum[_k] + t * (cum[_k + 1] - cum[_k])
            return track.sheets_at(curve, s)[i]

        for i in range(curve.r):
            out[i] += _complex_quad(lambda t, _i=i: sheet_val(t, _i) * dx, 0.0, 1.0, epsabs)
    total = out.sum()
    if abs(total) > 1e-8 * max(1.0, float(np.max(np.abs(out)))):
        raise IntegrationError(f"trace-zero violated: sum of integrals = {total:g}")
    return out


def integral_tail_to_branch_point(curve: SpectralCurveSpec, bp: BranchPoint,
                                  x_near: complex, sheets_near: np.ndarray,
                                  eps: float = 1e-5) -> np.ndarray:
    """Integral of each sheet over the last straight step onto the branch point.

    Near the branch point the colliding pair behaves like a +- c sqrt(x-b)
    correction around the analytic mean; the explicit sqrt tail keeps the
    result accurate to O(eps^{5/2}) without tracking through the collision.
    """
    dx = bp.x - x_near
    vals_mid = None
    # fit lambda_i(x) ~ m_i + c_i * sqrt(1-t) over the step, t in [0,1]
    t_fit = 1.0 - eps
    x_fit = x_near + t_fit * dx
    vals_fit = roots_at(curve, x_fit)
    cost = np.abs(sheets_near[:, None] - vals_fit[None, :])
    rows, cols = linear_sum_assignment(cost)
    vals_fit = vals_fit[cols]
    s0, s1 = np.sqrt(1.0), np.sqrt(1.0 - t_fit)
    # lambda(t) = m + c*sqrt(1-t): solve from samples at t=0 and t=t_fit
    c = (sheets_near - vals_fit) / (s0 - s1)
    m = sheets_near - c * s0
    # integral over t in [0,1] of (m + c sqrt(1-t)) dx dt = (m + 2c/3) dx
    del vals_mid
    return (m + 2.0 * c / 3.0) * dx
