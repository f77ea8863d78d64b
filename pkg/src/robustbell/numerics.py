"""Shared numerical kernels: quadrature, 1-d minimization, QMC, convex hulls.

Everything here is deterministic given its inputs (and, for mc_expect, the
generator passed in).  The solver leans on four pieces:

* a fixed quadrature rule replacing E[f(Z)], Z ~ N(0,1), by sum w_i f(z_i);
* a bounded derivative-free scalar minimizer (golden section + parabolic
  interpolation, in the style of fminbnd) with an optional warm-start point;
* unscrambled Sobol points for space-filling designs;
* convex hulls of simulated state clouds, with membership tests and
  quasi-random interior fill.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy import spatial
from scipy.stats import qmc

_SQRT_EPS = math.sqrt(np.finfo(float).eps)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Knots and weights approximating the standard normal expectation.

    Invariants checked on construction: weights positive and summing to 1
    within 1e-12, knots strictly increasing and symmetric about zero.
    """

    knots: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if knots.ndim != 1 or knots.shape != weights.shape or knots.size == 0:
            raise ValueError("knots and weights must be equal-length nonempty 1-d arrays")
        if np.any(weights <= 0):
            raise ValueError("quadrature weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"quadrature weights must sum to 1, got {weights.sum()!r}")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("quadrature knots must be strictly increasing")
        if np.max(np.abs(knots + knots[::-1])) > 1e-12 or np.max(np.abs(weights - weights[::-1])) > 1e-12:
            raise ValueError("quadrature rule must be symmetric about zero")
        knots.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.knots.size


def gaussian_rule(size: int) -> QuadratureRule:
    """Gauss-Hermite rule for N(0,1) with the given number of knots.

    Probabilists' rescaling of numpy's physicists' nodes: knots = sqrt(2)*x,
    weights = w/sqrt(pi).  Exact for polynomials up to degree 2*size - 1.
    size = 1 gives ({0}, {1}); size = 2 gives ({-1, 1}, {1/2, 1/2}).
    """
    if size < 1:
        raise ValueError(f"rule size must be >= 1, got {size}")
    if size == 1:
        return QuadratureRule(np.array([0.0]), np.array([1.0]))
    if size == 2:
        return QuadratureRule(np.array([-1.0, 1.0]), np.array([0.5, 0.5]))
    x, w = hermgauss(size)
    knots = x * math.sqrt(2.0)
    weights = w / math.sqrt(math.pi)
    # symmetrize: the eigensolver behind hermgauss is symmetric only to round-off
    knots = 0.5 * (knots - knots[::-1])
    weights = 0.5 * (weights + weights[::-1])
    weights = weights / weights.sum()
    return QuadratureRule(knots, weights)


def load_rule(path) -> QuadratureRule:
    """Read a rule from a two-column text file (knot, weight per line).

    Comma or whitespace separated; blank lines, #-comments, and a non-numeric
    header line are skipped, so CSVs written by the quantizer command load back.
    """
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.replace(",", " ").split()
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                if not rows:  # header line
                    continue
                raise ValueError(f"{path}:{lineno}: unparseable rule line {text!r}")
            if len(vals) != 2:
                raise ValueError(f"{path}:{lineno}: expected two columns (knot, weight), got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no rule rows found")
    data = np.asarray(rows, dtype=float)
    return QuadratureRule(data[:, 0], data[:, 1])


def _eval_on(f: Callable, z: np.ndarray, what: str) -> np.ndarray:
    """Evaluate f on every entry of z, vectorizing when f supports it."""
    try:
        vals = np.asarray(f(z), dtype=float)
        if vals.shape != z.shape:
            raise TypeError
    except (TypeError, ValueError):
        vals = np.array([float(f(zi)) for zi in z])
    if not np.all(np.isfinite(vals)):
        bad = z[~np.isfinite(vals)][0]
        raise ValueError(f"{what}: integrand returned a non-finite value at z={bad!r}")
    return vals


def expect(rule: QuadratureRule, f: Callable) -> float:
    """Quadrature approximation of E[f(Z)] for Z ~ N(0,1)."""
    return float(rule.weights @ _eval_on(f, rule.knots, "expect"))


def mc_expect(f: Callable, size: int, rng: np.random.Generator) -> float:
    """Plain Monte Carlo approximation of E[f(Z)] with size i.i.d. draws.

    Unlike expect() the result varies from call to call (through rng); the
    integration error decays like 1/sqrt(size) instead of spectrally.
    """
    if size < 1:
        raise ValueError(f"sample size must be >= 1, got {size}")
    z = rng.standard_normal(size)
    return float(np.mean(_eval_on(f, z, "mc_expect")))


def minimize_scalar(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-6,
    x0: Optional[float] = None,
    max_iter: int = 500,
) -> Tuple[float, float]:
    """Minimize f on [lo, hi] by bounded Brent (golden section + parabolic).

    Returns (argmin, minimum).  f is never evaluated outside [lo, hi].  x0,
    when given, seeds the first probe (warm start); otherwise the golden point
    lo + 0.382*(hi - lo) is used.  Convergence is to within tol in x; callers
    wanting the global minimum on the interval should compare the result
    against the endpoint values themselves.
    """
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    golden = 0.3819660112501051
    a, b = float(lo), float(hi)
    if x0 is not None and lo < x0 < hi:
        x = float(x0)
    else:
        x = a + golden * (b - a)
    w = v = x
    fx = float(f(x))
    fw = fv = fx
    d = e = 0.0
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        tol1 = _SQRT_EPS * abs(x) + tol / 3.0
        tol2 = 2.0 * tol1
        if abs(x - m) <= tol2 - 0.5 * (b - a):
            break
        use_golden = True
        if abs(e) > tol1:
            # fit a parabola through (x, w, v); accept its vertex if usable
            rr = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * rr
            q = 2.0 * (q - rr)
            if q > 0.0:
                p = -p
            q = abs(q)
            e_prev, e = e, d
            if abs(p) < abs(0.5 * q * e_prev) and p > q * (a - x) and p < q * (b - x):
                d = p / q
                u = x + d
                # keep the probe a full tolerance away from the bounds
                if (u - a) < tol2 or (b - u) < tol2:
                    d = tol1 if x < m else -tol1
                use_golden = False
        if use_golden:
            e = (b if x < m else a) - x
            d = golden * e
        u = x + (d if abs(d) >= tol1 else (tol1 if d > 0 else -tol1))
        fu = float(f(u))
        if fu <= fx:
            if u < x:
                b = x
            else:
                a = x
            v, w, x = w, x, u
            fv, fw, fx = fw, fx, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, w = w, u
                fv, fw = fw, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
    return x, fx


_MAX_SOBOL_DIM = 8


def sobol(n: int, dim: int, skip: int = 1) -> np.ndarray:
    """First n points of the unscrambled Sobol sequence in [0,1)^dim.

    skip drops the leading points (the sequence starts at the origin, which
    is rarely wanted as a design site).  Deterministic: the same (n, dim,
    skip) always yields the same array.
    """
    if dim < 1 or dim > _MAX_SOBOL_DIM:
        raise ValueError(f"unsupported dimension {dim}: must be in [1, {_MAX_SOBOL_DIM}]")
    if n < 0 or skip < 0:
        raise ValueError("n and skip must be nonnegative")
    if n == 0:
        return np.empty((0, dim))
    total = skip + n
    m = max(0, int(math.ceil(math.log2(total))))
    pts = qmc.Sobol(d=dim, scramble=False).random_base2(m)
    return pts[skip : skip + n].copy()


@dataclass(frozen=True, eq=False)
class Hull:
    """Convex hull of a point cloud in dimension >= 2.

    vertices are hull-vertex coordinates; for planar hulls they are ordered
    counterclockwise.  equations are Qhull half-space rows (normal, offset)
    with normal . x + offset <= 0 inside.
    """

    points: np.ndarray
    vertices: np.ndarray
    equations: np.ndarray

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def contains(self, x, tol: float = 1e-9):
        """Membership test; accepts a single point or an (m, dim) array."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        if pts.shape[1] != self.dim:
            raise ValueError(f"point dimension {pts.shape[1]} != hull dimension {self.dim}")
        slack = pts @ self.equations[:, :-1].T + self.equations[:, -1]
        inside = np.all(slack <= tol, axis=1)
        return bool(inside[0]) if single else inside

    def fill(self, n: int, skip: int = 1) -> np.ndarray:
        """n quasi-random interior points: Sobol in the bounding box, rejected
        to the hull.  Reproducible; raises after 100*n candidate draws."""
        if n < 0:
            raise ValueError("n must be nonnegative")
        if n == 0:
            return np.empty((0, self.dim))
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        cap = 100 * n
        raw = sobol(cap, self.dim, skip=skip)
        cands = lo + raw * (hi - lo)
        keep = cands[self.contains(cands)]
        if keep.shape[0] < n:
            raise RuntimeError(
                f"hull fill rejected too many candidates ({keep.shape[0]}/{cap} inside, need {n})"
            )
        return keep[:n].copy()


def convex_hull(points) -> Hull:
    """Convex hull wrapper; rejects degenerate (lower-dimensional) input."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] < 2:
        raise ValueError(f"expected an (n, d>=2) array of points, got shape {pts.shape}")
    if pts.shape[0] < pts.shape[1] + 1:
        raise ValueError(f"need at least d+1 points for a {pts.shape[1]}-d hull")
    try:
        qh = spatial.ConvexHull(pts)
    except (spatial.QhullError, ValueError) as exc:
        raise ValueError(f"degenerate point cloud (collinear or coplanar): {exc}") from exc
    # for d = 2 Qhull already orders hull vertices counterclockwise
    return Hull(points=pts, vertices=pts[qh.vertices].copy(), equations=qh.equations.copy())
