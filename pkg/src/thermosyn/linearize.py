"""Piecewise-linear machinery for curves and bilinear products.

Two jobs: 1D interpolation of sampled component characteristics, and the
2D triangulated-grid linearization of the bilinear product w = c·v·t.
Every rectangle of a grid is split along its main diagonal (the one from the
low-v/low-t corner to the high-v/high-t corner), and v = 0 is always a
breakpoint line so inactive components (v = 0, w = 0) are representable
exactly.

Encodings come in two flavours selected per call:

* convex-combination: one multiplier per grid vertex plus one selection
  binary per simplex;
* logarithmic: ⌈log₂(#simplices)⌉ selection binaries.  In 1D the multipliers
  stay aggregated (one per breakpoint) with a Gray-code segment labelling; in
  2D the multipliers are disaggregated per (triangle, corner) incidence,
  since an aggregated labelling is not sound for a main-diagonal
  triangulation.

Both flavours admit exactly the graph of the interpolant once the binaries
are integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .milp import MilpModel


@dataclass(frozen=True)
class Curve1D:
    """Piecewise-linear curve through sampled (x, y) breakpoints."""

    xs: Tuple[float, ...]
    ys: Tuple[float, ...]

    def __post_init__(self):
        if len(self.xs) < 2:
            raise ValueError("curve needs at least 2 points")
        if any(b <= a for a, b in zip(self.xs, self.xs[1:])):
            raise ValueError("curve x values must be strictly increasing")

    @property
    def domain(self) -> Tuple[float, float]:
        return self.xs[0], self.xs[-1]

    def eval(self, x: float) -> float:
        lo, hi = self.domain
        if not (lo - 1e-12 <= x <= hi + 1e-12):
            raise ValueError(f"x = {x} outside curve domain [{lo}, {hi}]")
        return float(np.interp(x, self.xs, self.ys))


def make_curve(points: Sequence[Tuple[float, float]]) -> Curve1D:
    """Build a Curve1D from (x, y) pairs; exact at every breakpoint."""
    return Curve1D(xs=tuple(float(p[0]) for p in points), ys=tuple(float(p[1]) for p in points))


@dataclass(frozen=True)
class BilinearGrid:
    """Triangulated grid supporting w = scale·v·t over [0, v_max] × [0, t_max].

    Axes hold sorted breakpoints starting at 0.  A degenerate axis (a single
    breakpoint 0) collapses the product to w ≡ 0.  Grid vertices are indexed
    iv·(n_t+1) + it; triangles are numbered cell by cell, lower (below the
    main diagonal) before upper.
    """

    v_axis: Tuple[float, ...]
    t_axis: Tuple[float, ...]
    scale: float

    def __post_init__(self):
        for name, axis in (("v_axis", self.v_axis), ("t_axis", self.t_axis)):
            if len(axis) < 1 or axis[0] != 0.0:
                raise ValueError(f"{name} must start at 0")
            if any(b <= a for a, b in zip(axis, axis[1:])):
                raise ValueError(f"{name} must be strictly increasing")
        if self.scale <= 0:
            raise ValueError("scale must be > 0")

    @property
    def v_max(self) -> float:
        return self.v_axis[-1]

    @property
    def t_max(self) -> float:
        return self.t_axis[-1]

    @property
    def n_cells(self) -> Tuple[int, int]:
        return len(self.v_axis) - 1, len(self.t_axis) - 1

    @property
    def n_vertices(self) -> int:
        return len(self.v_axis) * len(self.t_axis)

    @property
    def n_triangles(self) -> int:
        n_v, n_t = self.n_cells
        return 2 * n_v * n_t

    def vertex_index(self, iv: int, it: int) -> int:
        return iv * len(self.t_axis) + it

    def vertex_coords(self) -> np.ndarray:
        """(n_vertices, 3) array of (v, t, w) with w exact at each vertex."""
        out = np.empty((self.n_vertices, 3))
        k = 0
        for v in self.v_axis:
            for t in self.t_axis:
                out[k] = (v, t, self.scale * v * t)
                k += 1
        return out

    def triangles(self) -> List[Tuple[int, int, int]]:
        """Corner indices per triangle: lower (A,B,C) then upper (A,C,D) per cell.

        A = (iv, it), B = (iv+1, it), C = (iv+1, it+1), D = (iv, it+1).
        """
        tris: List[Tuple[int, int, int]] = []
        n_v, n_t = self.n_cells
        for iv in range(n_v):
            for it in range(n_t):
                a = self.vertex_index(iv, it)
                b = self.vertex_index(iv + 1, it)
                c = self.vertex_index(iv + 1, it + 1)
                d = self.vertex_index(iv, it + 1)
                tris.append((a, b, c))
                tris.append((a, c, d))
        return tris


def build_bilinear_grid(
    v_max: float, t_max: float, c: float, resolution: Tuple[int, int]
) -> BilinearGrid:
    """Uniform grid over [0, v_max] × [0, t_max] with the given cell counts.

    A zero extent on either axis yields the degenerate single-breakpoint
    axis (w ≡ 0 over the box).
    """
    n_v, n_t = resolution
    if n_v < 1 or n_t < 1:
        raise ValueError("resolution must be ≥ 1 on both axes")
    if v_max < 0 or t_max < 0:
        raise ValueError("axis extents must be ≥ 0")
    v_axis = tuple(np.linspace(0.0, v_max, n_v + 1)) if v_max > 0 else (0.0,)
    t_axis = tuple(np.linspace(0.0, t_max, n_t + 1)) if t_max > 0 else (0.0,)
    return BilinearGrid(v_axis=v_axis, t_axis=t_axis, scale=c)


def with_breakpoint(grid: BilinearGrid, axis: str, x: float) -> BilinearGrid:
    """Copy of the grid with one extra breakpoint inserted on the named axis."""
    if axis not in ("v", "t"):
        raise ValueError("axis must be 'v' or 't'")
    old = grid.v_axis if axis == "v" else grid.t_axis
    if x in old:
        return grid
    if not (0.0 < x < old[-1]):
        raise ValueError("breakpoint must lie strictly inside the axis range")
    new = tuple(sorted(old + (x,)))
    if axis == "v":
        return BilinearGrid(v_axis=new, t_axis=grid.t_axis, scale=grid.scale)
    return BilinearGrid(v_axis=grid.v_axis, t_axis=new, scale=grid.scale)


def error_bound(grid: BilinearGrid) -> float:
    """Max over cells of max |scale·v·t − interpolant| over the cell.

    Per cell the deviation of the bilinear surface from the triangle planes
    is scale·Δv·Δt/4: the affine part of the product is interpolated exactly,
    and the residual (v−v0)(t−t0) on the unit triangle peaks at 1/4 on the
    diagonal midpoint.  The test suite re-establishes this value by dense
    sampling.
    """
    n_v, n_t = grid.n_cells
    if n_v == 0 or n_t == 0:
        return 0.0
    dv = np.diff(grid.v_axis)
    dt = np.diff(grid.t_axis)
    return float(grid.scale * np.max(np.outer(dv, dt)) / 4.0)


def eval_pwl(grid: BilinearGrid, v: float, t: float) -> float:
    """Value of the triangulated interpolant at (v, t); exact at grid vertices."""
    if not (-1e-12 <= v <= grid.v_max + 1e-12) or not (-1e-12 <= t <= grid.t_max + 1e-12):
        raise ValueError(f"point ({v}, {t}) outside grid box [0, {grid.v_max}] × [0, {grid.t_max}]")
    n_v, n_t = grid.n_cells
    if n_v == 0 or n_t == 0:
        return 0.0
    v_axis = np.asarray(grid.v_axis)
    t_axis = np.asarray(grid.t_axis)
    iv = min(max(int(np.searchsorted(v_axis, v, side="right") - 1), 0), n_v - 1)
    it = min(max(int(np.searchsorted(t_axis, t, side="right") - 1), 0), n_t - 1)
    dv = v_axis[iv + 1] - v_axis[iv]
    dt = t_axis[it + 1] - t_axis[it]
    x = (v - v_axis[iv]) / dv
    y = (t - t_axis[it]) / dt

    def w(a: int, b: int) -> float:
        return grid.scale * float(v_axis[a]) * float(t_axis[b])

    wa, wb = w(iv, it), w(iv + 1, it)
    wc, wd = w(iv + 1, it + 1), w(iv, it + 1)
    if y <= x:  # lower triangle (A, B, C)
        return wa + x * (wb - wa) + y * (wc - wb)
    return wa + x * (wc - wd) + y * (wd - wa)  # upper triangle (A, C, D)


@dataclass(frozen=True)
class PwlEncoding:
    """Handle to one emitted piecewise-linear encoding.

    lambda_vars are the convex multipliers (one per point in aggregated form,
    one per simplex corner in the disaggregated logarithmic 2D form);
    binary_vars are the simplex-selection binaries.  points holds one
    coordinate row per point, column k paired with tie_vars[k].  active_var
    is the owning on/off variable, None for always-on encodings.
    """

    lambda_vars: Tuple[int, ...]
    binary_vars: Tuple[int, ...]
    tie_vars: Tuple[int, ...]
    points: np.ndarray
    simplices: Tuple[Tuple[int, ...], ...]
    logarithmic: bool
    aggregated: bool
    active_var: Optional[int] = None

    def expected_binaries(self) -> int:
        n = len(self.simplices)
        if self.logarithmic:
            return int(math.ceil(math.log2(n))) if n > 1 else 0
        return n


def _gray(i: int) -> int:
    return i ^ (i >> 1)


def _closest_on_simplex(corners: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Point of the simplex spanned by corners (rows) nearest to p.

    Handles the three shapes in use: single corner, segment, triangle.  The
    triangle case clamps barycentric coordinates region by region, which
    works in any ambient dimension because only dot products are involved.
    """
    if len(corners) == 1:
        return corners[0]
    if len(corners) == 2:
        a, b = corners
        ab = b - a
        denom = ab @ ab
        t = 0.0 if denom <= 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
        return a + t * ab
    a, b, c = corners
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0.0 and d2 <= 0.0:
        return a
    bp = p - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0.0 and d4 <= d3:
        return b
    cp = p - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0.0 and d5 <= d6:
        return c
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        return a + ab * (d1 / (d1 - d3))
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        return a + ac * (d2 / (d2 - d6))
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)))
    denom = va + vb + vc
    return a + ab * (vb / denom) + ac * (vc / denom)


def ranked_bit_fixes(
    enc: PwlEncoding,
    x: np.ndarray,
    weights: Optional[Sequence[float]] = None,
    limit: int = 2,
    point: Optional[Sequence[float]] = None,
) -> List[dict]:
    """Binary assignments for the simplices nearest the tied coordinates of
    the point x, best match first.

    Each coordinate column is normalized by its span over the encoding's
    points before measuring Euclidean distance, so flows, heads, and heat
    fluxes weigh in comparably.  weights, one per column, let the caller
    discount coordinates it does not trust (a relaxation point can park a
    hull-interior output far off the surface; zero its weight and the match
    runs on the reliable columns alone).  point substitutes explicit
    coordinates for x entirely, for callers that reconstruct the operating
    point rather than read it off a relaxation.  Several simplices can fit
    the trusted columns equally well while only one admits the completion
    the caller needs, so up to limit choices come back for it to try in
    order.  Each dict maps binary var to 0.0/1.0 consistent with the
    encoding's labelling scheme (plain index for disaggregated, Gray code
    for aggregated logarithmic, one-hot otherwise).  Ties break to the
    lowest simplex index so the ranking is deterministic.
    """
    if not enc.binary_vars:
        return [{}]
    span = enc.points.max(axis=0) - enc.points.min(axis=0)
    scale = 1.0 / np.where(span > 0.0, span, 1.0)
    if weights is not None:
        scale = scale * np.asarray(weights, dtype=float)
    pts = enc.points * scale
    raw = np.asarray(point, dtype=float) if point is not None else x[list(enc.tie_vars)]
    p = raw * scale
    dists = np.empty(len(enc.simplices))
    for s_idx, simp in enumerate(enc.simplices):
        q = _closest_on_simplex(pts[list(simp)], p)
        dists[s_idx] = (q - p) @ (q - p)
    order = np.argsort(dists, kind="stable")[: max(1, limit)]

    def bits(best: int) -> dict:
        if enc.logarithmic:
            code = _gray(best) if enc.aggregated else best
            return {y: float((code >> l) & 1) for l, y in enumerate(enc.binary_vars)}
        return {y: (1.0 if s == best else 0.0) for s, y in enumerate(enc.binary_vars)}

    return [bits(int(s_idx)) for s_idx in order]


def encode_union_on_model(
    model: "MilpModel",
    points: np.ndarray,
    simplices: Sequence[Tuple[int, ...]],
    tie_vars: Sequence[int],
    active_var: Optional[int],
    *,
    logarithmic: bool = True,
    aggregated_log: bool = False,
    name: str = "pwl",
    tag: str = "pwl",
) -> PwlEncoding:
    """Emit constraints restricting tie_vars to the union of simplex graphs.

    points: (n_points, n_ties) coordinate matrix.  With active_var given, the
    convex-multiplier sum equals that variable, so an inactive owner forces
    every tied variable to 0; with active_var None the sum is the constant 1.
    aggregated_log selects the Gray-code labelling over aggregated
    multipliers, which is sound only when the simplices form a 1D chain.
    """
    pts = np.asarray(points, dtype=float)
    n_points, n_ties = pts.shape
    if len(tie_vars) != n_ties:
        raise ValueError("one tie variable per coordinate column required")
    simplices = tuple(tuple(s) for s in simplices)
    n_simp = len(simplices)
    if n_simp == 0:
        raise ValueError("need at least one simplex")

    def rhs_active(coeffs: List[Tuple[int, float]], sense: str, const: float, row_tag: str):
        # rows of the form  expr {sense} const·active  (active may be literal 1)
        if active_var is None:
            model.add_constr(coeffs, sense, const, tag=row_tag)
        else:
            model.add_constr(coeffs + [(active_var, -const)], sense, 0.0, tag=row_tag)

    n_bits = int(math.ceil(math.log2(n_simp))) if (logarithmic and n_simp > 1) else 0
    binaries: List[int] = []
    if logarithmic:
        binaries = [model.add_var(f"{name}.y[{l}]", 0.0, 1.0, kind="binary") for l in range(n_bits)]
        if active_var is not None:
            # pin selection bits to 0 on inactive owners so B&B never
            # branches on dead bit patterns
            for yl in binaries:
                rhs_active([(yl, 1.0)], "<=", 1.0, tag)

    if logarithmic and not aggregated_log:
        # Disaggregated multipliers: one per (simplex, corner) incidence.
        gam: List[List[int]] = []
        for p_idx, simp in enumerate(simplices):
            gam.append(
                [model.add_var(f"{name}.g[{p_idx},{k}]", 0.0, 1.0) for k in range(len(simp))]
            )
        lam_all = tuple(g for row in gam for g in row)
        for k, tv in enumerate(tie_vars):
            coeffs = [(tv, -1.0)]
            for p_idx, simp in enumerate(simplices):
                for g, pt in zip(gam[p_idx], simp):
                    coeffs.append((g, pts[pt, k]))
            model.add_constr(coeffs, "=", 0.0, tag=tag)
        rhs_active([(g, 1.0) for g in lam_all], "=", 1.0, tag)
        for l in range(n_bits):
            ones = [(g, 1.0) for p_idx in range(n_simp) if (p_idx >> l) & 1 for g in gam[p_idx]]
            zeros = [(g, 1.0) for p_idx in range(n_simp) if not (p_idx >> l) & 1 for g in gam[p_idx]]
            if ones:
                model.add_constr(ones + [(binaries[l], -1.0)], "<=", 0.0, tag=tag)
            if zeros:
                rhs_active(zeros + [(binaries[l], 1.0)], "<=", 1.0, tag)
        return PwlEncoding(
            lambda_vars=lam_all,
            binary_vars=tuple(binaries),
            tie_vars=tuple(tie_vars),
            points=pts,
            simplices=simplices,
            logarithmic=True,
            aggregated=False,
            active_var=active_var,
        )

    # Aggregated multipliers: one per point.
    lam = [model.add_var(f"{name}.lam[{i}]", 0.0, 1.0) for i in range(n_points)]
    for k, tv in enumerate(tie_vars):
        coeffs = [(tv, -1.0)] + [(lam[i], pts[i, k]) for i in range(n_points)]
        model.add_constr(coeffs, "=", 0.0, tag=tag)
    rhs_active([(l, 1.0) for l in lam], "=", 1.0, tag)

    if logarithmic:
        # Gray-code labelling over a 1D chain of segments.
        codes = [_gray(s) for s in range(n_simp)]
        incident: List[List[int]] = [[] for _ in range(n_points)]
        for s_idx, simp in enumerate(simplices):
            for pt in simp:
                incident[pt].append(s_idx)
        for l in range(n_bits):
            plus = [i for i in range(n_points) if incident[i] and all((codes[s] >> l) & 1 for s in incident[i])]
            minus = [i for i in range(n_points) if incident[i] and all(not (codes[s] >> l) & 1 for s in incident[i])]
            if plus:
                model.add_constr([(lam[i], 1.0) for i in plus] + [(binaries[l], -1.0)], "<=", 0.0, tag=tag)
            if minus:
                rhs_active([(lam[i], 1.0) for i in minus] + [(binaries[l], 1.0)], "<=", 1.0, tag)
    else:
        binaries = [model.add_var(f"{name}.y[{s}]", 0.0, 1.0, kind="binary") for s in range(n_simp)]
        rhs_active([(y, 1.0) for y in binaries], "=", 1.0, tag)
        incident = [[] for _ in range(n_points)]
        for s_idx, simp in enumerate(simplices):
            for pt in simp:
                incident[pt].append(s_idx)
        for i in range(n_points):
            if not incident[i]:
                continue
            model.add_constr(
                [(lam[i], 1.0)] + [(binaries[s], -1.0) for s in incident[i]], "<=", 0.0, tag=tag
            )
    return PwlEncoding(
        lambda_vars=tuple(lam),
        binary_vars=tuple(binaries),
        tie_vars=tuple(tie_vars),
        points=pts,
        simplices=simplices,
        logarithmic=logarithmic,
        aggregated=True,
        active_var=active_var,
    )


def encode_curve_on_model(
    model: "MilpModel",
    curve: Curve1D,
    x_var: int,
    y_var: int,
    active_var: Optional[int],
    *,
    logarithmic: bool = True,
    name: str = "curve",
    tag: str = "pwl",
) -> PwlEncoding:
    """Force (x_var, y_var) onto the curve when active; both to 0 when not.

    The x variable's bounds must not exceed the curve domain unless the
    domain starts at 0 is unavailable; inactivity parks (x, y) at the origin,
    which is admissible because all multipliers drop to zero.
    """
    lo, hi = curve.domain
    xlb, xub = model.var_bounds(x_var)
    if active_var is None and (xlb < lo - 1e-9 or xub > hi + 1e-9):
        raise ValueError(f"x bounds [{xlb}, {xub}] outside curve domain [{lo}, {hi}]")
    if xub > hi + 1e-9:
        raise ValueError(f"x upper bound {xub} outside curve domain [{lo}, {hi}]")
    pts = np.column_stack([curve.xs, curve.ys])
    segs = [(i, i + 1) for i in range(len(curve.xs) - 1)]
    return encode_union_on_model(
        model,
        pts,
        segs,
        (x_var, y_var),
        active_var,
        logarithmic=logarithmic,
        aggregated_log=True,
        name=name,
        tag=tag,
    )


def encode_bilinear_on_model(
    model: "MilpModel",
    grid: BilinearGrid,
    v_var: int,
    t_var: int,
    w_var: int,
    active_var: Optional[int],
    *,
    logarithmic: bool = True,
    name: str = "bil",
    tag: str = "pwl",
) -> Optional[PwlEncoding]:
    """Tie w_var to the triangulated interpolant of scale·v·t.

    With active_var given, inactivity forces v = t = w = 0 (the origin is a
    grid vertex by construction).  Degenerate grids (either axis collapsed to
    the single breakpoint 0) are emitted as the exact linear facts they
    imply, with no multipliers, and None is returned.
    """
    n_v, n_t = grid.n_cells
    if n_v == 0 or n_t == 0:
        model.add_constr([(w_var, 1.0)], "=", 0.0, tag=tag)
        if n_v == 0:
            model.add_constr([(v_var, 1.0)], "=", 0.0, tag=tag)
        if n_t == 0:
            model.add_constr([(t_var, 1.0)], "=", 0.0, tag=tag)
        return None
    for var, hi_box, label in ((v_var, grid.v_max, "v"), (t_var, grid.t_max, "t")):
        _, ub = model.var_bounds(var)
        if ub > hi_box + 1e-9:
            raise ValueError(f"{label} bound {ub} exceeds grid box {hi_box}")
    return encode_union_on_model(
        model,
        grid.vertex_coords(),
        grid.triangles(),
        (v_var, t_var, w_var),
        active_var,
        logarithmic=logarithmic,
        aggregated_log=False,
        name=name,
        tag=tag,
    )
