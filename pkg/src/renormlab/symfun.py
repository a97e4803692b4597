"""Dense bivariate polynomial kernel: evaluation with exact derivatives, affine
substitution, least-squares fitting of linear relations, and a bracketed scalar
Newton solver.  Everything else in the package is built on these primitives."""

from __future__ import annotations

from dataclasses import dataclass
import json
import math

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import (DerivativeVanishes, NoConvergence, RankDeficient, ZeroScale)


# ---------------------------------------------------------------------------
# domain box
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned closed rectangle in the (x, u) plane."""
    x_lo: float
    x_hi: float
    u_lo: float
    u_hi: float

    def __post_init__(self):
        if not (self.x_lo < self.x_hi and self.u_lo < self.u_hi):
            raise ValueError("degenerate domain box")

    @property
    def x_span(self) -> float:
        return self.x_hi - self.x_lo

    @property
    def u_span(self) -> float:
        return self.u_hi - self.u_lo

    @property
    def scale(self) -> float:
        return max(self.x_span, self.u_span)

    def center(self) -> tuple[float, float]:
        return 0.5 * (self.x_lo + self.x_hi), 0.5 * (self.u_lo + self.u_hi)

    def contains(self, x, u, pad: float = 0.0) -> np.ndarray:
        x = np.asarray(x); u = np.asarray(u)
        return ((x >= self.x_lo - pad) & (x <= self.x_hi + pad)
                & (u >= self.u_lo - pad) & (u <= self.u_hi + pad))

    def grid(self, nx: int, nu: int, margin: float = 0.0):
        """Uniform interior grid, flattened to (nx*nu,) coordinate arrays."""
        dx = margin * self.x_span
        du = margin * self.u_span
        xs = np.linspace(self.x_lo + dx, self.x_hi - dx, nx)
        us = np.linspace(self.u_lo + du, self.u_hi - du, nu)
        X, U = np.meshgrid(xs, us, indexing="ij")
        return X.ravel(), U.ravel()

    def boundary(self, per_side: int):
        """per_side samples on each of the 4 sides, counterclockwise, no duplicates."""
        t = np.arange(per_side) / per_side
        xs = self.x_lo + t * self.x_span
        us = self.u_lo + t * self.u_span
        bx = np.concatenate([xs, np.full(per_side, self.x_hi),
                             xs[::-1] + 0.0, np.full(per_side, self.x_lo)])
        bu = np.concatenate([np.full(per_side, self.u_lo), us,
                             np.full(per_side, self.u_hi), us[::-1] + 0.0])
        return bx, bu

    def intersects(self, other: "DomainBox") -> bool:
        return not (self.x_hi < other.x_lo or other.x_hi < self.x_lo
                    or self.u_hi < other.u_lo or other.u_hi < self.u_lo)

    def contains_box(self, other: "DomainBox", tol: float = 0.0) -> bool:
        return (self.x_lo - tol <= other.x_lo and other.x_hi <= self.x_hi + tol
                and self.u_lo - tol <= other.u_lo and other.u_hi <= self.u_hi + tol)

    def distance(self, other: "DomainBox") -> float:
        dx = max(self.x_lo - other.x_hi, other.x_lo - self.x_hi, 0.0)
        du = max(self.u_lo - other.u_hi, other.u_lo - self.u_hi, 0.0)
        return math.hypot(dx, du)

    def as_list(self) -> list[float]:
        return [self.x_lo, self.x_hi, self.u_lo, self.u_hi]


# ---------------------------------------------------------------------------
# bivariate polynomials
# ---------------------------------------------------------------------------

class BivariatePoly:
    """Dense total-degree-bounded polynomial P(x, y) = sum c[i,j] x^i y^j.

    Coefficients are held in a (degree+1) x (degree+1) array with c[i, j] = 0
    for i + j > degree.  The symmetric flag asserts c[i, j] == c[j, i].
    """

    def __init__(self, coeffs, symmetric: bool = False, degree: int | None = None):
        c = np.array(coeffs, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("coefficient table must be square")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite coefficient")
        n = c.shape[0]
        if degree is None:
            degree = n - 1
        if degree > n - 1:
            cc = np.zeros((degree + 1, degree + 1))
            cc[:n, :n] = c
            c = cc
        i, j = np.indices(c.shape)
        c[i + j > degree] = 0.0
        if symmetric and not np.allclose(c, c.T, rtol=0.0, atol=0.0):
            # symmetrize exactly; callers constructing symmetric tables must agree
            if not np.allclose(c, c.T, rtol=1e-13, atol=1e-13 * max(1.0, np.abs(c).max())):
                raise ValueError("symmetric flag set but table is not symmetric")
            c = 0.5 * (c + c.T)
        self.coeffs = c
        self.degree = degree
        self.symmetric = symmetric

    # -- evaluation --------------------------------------------------------

    def __call__(self, x, y):
        return npoly.polyval2d(np.asarray(x, dtype=float), np.asarray(y, dtype=float), self.coeffs)

    def deriv(self, a: int = 0, b: int = 0) -> "BivariatePoly":
        """Exact partial-derivative polynomial d^a_x d^b_y P."""
        c = self.coeffs
        for _ in range(a):
            c = npoly.polyder(c, 1, axis=0) if c.shape[0] > 1 else np.zeros((1, c.shape[1]))
        for _ in range(b):
            c = npoly.polyder(c, 1, axis=1) if c.shape[1] > 1 else np.zeros((c.shape[0], 1))
        out = np.zeros_like(self.coeffs)
        out[:c.shape[0], :c.shape[1]] = c
        return BivariatePoly(out, symmetric=False, degree=self.degree)

    def to_json(self) -> dict:
        return {"degree": self.degree, "symmetric": self.symmetric,
                "coeffs": [list(row) for row in self.coeffs]}

    @classmethod
    def from_json(cls, obj: dict) -> "BivariatePoly":
        return cls(np.array(obj["coeffs"], dtype=float),
                   symmetric=bool(obj["symmetric"]), degree=int(obj["degree"]))

    def __repr__(self):
        return f"BivariatePoly(degree={self.degree}, symmetric={self.symmetric})"


def eval_with_derivatives(P: BivariatePoly, x: float, y: float, order: int = 1) -> dict:
    """All exact partials d^a_x d^b_y P(x, y) with a + b <= order, as {(a, b): value}."""
    if order not in (0, 1, 2, 3):
        raise ValueError("order must be 0..3")
    out = {}
    for a in range(order + 1):
        for b in range(order + 1 - a):
            out[(a, b)] = float(P.deriv(a, b)(x, y))
    return out


def affine_precompose(P: BivariatePoly, lam: float, p: float) -> BivariatePoly:
    """Q(x, y) = P(lam*x + p, lam*y + p), exact coefficient transform."""
    if lam == 0.0:
        raise ZeroScale("affine substitution with lambda = 0")
    n = P.degree + 1
    # M[i, a] = C(i, a) lam^a p^(i-a): row i gives coefficients of (lam t + p)^i
    M = np.zeros((n, n))
    for i in range(n):
        for a in range(i + 1):
            M[i, a] = math.comb(i, a) * lam ** a * p ** (i - a)
    Q = M.T @ P.coeffs @ M
    return BivariatePoly(Q, symmetric=P.symmetric, degree=P.degree)


def substitute_univariate(P: BivariatePoly, h: np.ndarray, out_degree: int) -> BivariatePoly:
    """Q(x, y) = P(h(x), h(y)) for a 1-D polynomial h given by its coefficient vector.

    Exact when out_degree >= deg(P) * deg(h); used for quadratic coordinate changes.
    """
    n = P.degree + 1
    hdeg = len(h) - 1
    need = P.degree * max(hdeg, 1)
    m = max(out_degree, need) + 1
    # rows of powers: H[i] = coefficients of h(t)^i, length m
    H = np.zeros((n, m))
    H[0, 0] = 1.0
    cur = np.array([1.0])
    for i in range(1, n):
        cur = np.convolve(cur, h)
        H[i, :len(cur)] = cur[:m]
    Q = H.T @ P.coeffs @ H
    return BivariatePoly(Q[:out_degree + 1, :out_degree + 1], symmetric=P.symmetric,
                         degree=out_degree)


# ---------------------------------------------------------------------------
# symmetric coefficient basis
# ---------------------------------------------------------------------------

def symmetric_basis(degree: int, pin_constant: bool = True, pin_linear: bool = True):
    """Index pairs (i, j), i <= j, i + j <= degree, of the free symmetric coefficients.

    pin_constant drops (0,0) (gauge S(0,0) = 0); pin_linear drops (0,1)
    (origin-fixing constraint dS(0,0) = 0 for generating functions).
    """
    pairs = []
    for s in range(degree + 1):
        for i in range(s // 2 + 1):
            j = s - i
            if pin_constant and (i, j) == (0, 0):
                continue
            if pin_linear and (i, j) == (0, 1):
                continue
            pairs.append((i, j))
    return pairs


def coeffs_to_vector(P: BivariatePoly, pairs) -> np.ndarray:
    c = P.coeffs
    return np.array([c[i, j] for (i, j) in pairs])


def vector_to_poly(vec, pairs, degree: int) -> BivariatePoly:
    c = np.zeros((degree + 1, degree + 1))
    for v, (i, j) in zip(vec, pairs):
        c[i, j] = v
        c[j, i] = v
    return BivariatePoly(c, symmetric=True, degree=degree)


def _falling(k: int, a: int) -> float:
    out = 1.0
    for t in range(a):
        out *= (k - t)
    return out


def basis_design_matrix(pairs, xs, ys, deriv=(0, 0)) -> np.ndarray:
    """Rows: values of d^a_x d^b_y of each symmetrized basis monomial at (xs, ys).

    Basis element for (i, j): x^i y^j + x^j y^i when i < j, else x^i y^i.
    """
    a, b = deriv
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    dmax = max(j for _, j in pairs) if pairs else 0
    XP = np.vander(xs, dmax + 1, increasing=True)
    YP = np.vander(ys, dmax + 1, increasing=True)

    def term(i, j):
        fa, fb = _falling(i, a), _falling(j, b)
        if fa == 0.0 or fb == 0.0:
            return np.zeros_like(xs)
        return fa * fb * XP[:, i - a] * YP[:, j - b]

    cols = []
    for (i, j) in pairs:
        v = term(i, j)
        if i != j:
            v = v + term(j, i)
        cols.append(v)
    return np.column_stack(cols)


def fit_linear_relations(rows: np.ndarray, targets: np.ndarray, pairs, degree: int,
                         rcond: float = 1e-13, residual_warn: float = 1e-8):
    """Least-squares solve rows @ coeffs = targets over the symmetric basis.

    Returns (poly, residual) with residual the max absolute equation defect.
    Raises RankDeficient when the system has a numerical null direction.
    """
    rows = np.asarray(rows, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if rows.shape[0] < rows.shape[1]:
        raise RankDeficient(f"{rows.shape[0]} relations for {rows.shape[1]} coefficients")
    sol, _, rank, _ = np.linalg.lstsq(rows, targets, rcond=rcond)
    if rank < rows.shape[1]:
        raise RankDeficient(f"rank {rank} < {rows.shape[1]} free coefficients")
    residual = float(np.abs(rows @ sol - targets).max()) if len(targets) else 0.0
    return vector_to_poly(sol, pairs, degree), residual


# ---------------------------------------------------------------------------
# scalar Newton
# ---------------------------------------------------------------------------

def newton_scalar(g, dg, seed: float, tol: float = 1e-12, max_iter: int = 50,
                  bracket: tuple[float, float] | None = None,
                  deriv_floor: float = 1e-14) -> float:
    """Root of g with derivative dg; safeguarded by bisection when a bracket is given.

    The bracket, when usable, must contain a sign change; the returned root
    satisfies |g(root)| <= tol.
    """
    a = b = ga = None
    if bracket is not None:
        a, b = float(bracket[0]), float(bracket[1])
        ga, gb = g(a), g(b)
        if abs(ga) <= tol:
            return a
        if abs(gb) <= tol:
            return b
        if ga * gb > 0:
            a = b = None  # unusable bracket; pure Newton
    x = float(seed)
    if a is not None:
        x = min(max(x, min(a, b)), max(a, b))
    for _ in range(max_iter):
        gx = g(x)
        if abs(gx) <= tol:
            return x
        if a is not None:
            # shrink the sign-change interval with the new evaluation
            if (gx < 0) == (ga < 0):
                a, ga = x, gx
            else:
                b = x
        d = dg(x)
        if abs(d) < deriv_floor:
            if a is None:
                raise DerivativeVanishes(f"|g'| = {abs(d):.2e} at x = {x}")
            x = 0.5 * (a + b)
            continue
        x_new = x - gx / d
        if a is not None and not (min(a, b) <= x_new <= max(a, b)):
            x_new = 0.5 * (a + b)
        if x_new == x:
            break
        x = x_new
    if abs(g(x)) <= tol:
        return x
    raise NoConvergence(f"no root to tol {tol} after {max_iter} iterations (|g| = {abs(g(x)):.2e})")


def bisect_scalar(g, lo: float, hi: float, tol: float = 1e-12, max_iter: int = 200) -> float:
    """Plain bisection; requires a sign change on [lo, hi]."""
    glo, ghi = g(lo), g(hi)
    if glo == 0.0:
        return lo
    if ghi == 0.0:
        return hi
    if glo * ghi > 0:
        raise NoConvergence("no sign change on bracket")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if abs(gm) <= tol or (hi - lo) < 1e-16 * max(1.0, abs(mid)):
            return mid
        if (gm < 0) == (glo < 0):
            lo, glo = mid, gm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def poly_json_roundtrip(P: BivariatePoly) -> BivariatePoly:
    """JSON-serialize and parse back; exact for finite doubles (shortest repr)."""
    return BivariatePoly.from_json(json.loads(json.dumps(P.to_json())))
