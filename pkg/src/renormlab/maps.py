"""Reversible exact-symplectic twist maps of the plane.

A map is represented by a symmetric generating function S(x, x') with
u = -d1 S(x, x') and u' = d2 S(x, x').  Symmetry of S makes T o F o T = F^-1
structural (T(x, u) = (x, -u)), and the Jacobian has determinant 1 identically.
Affine rescalings, the quadratic coordinate-change family, and composition
chains share one evaluatable-map contract: evaluate / jacobian on (N, 2) arrays.
"""

from __future__ import annotations

import numpy as np

from .errors import (FitResidualTooLarge, ImplicitSolveFailed, RankDeficient,
                     SingularChange, TwistLoss)
from .symfun import (BivariatePoly, DomainBox, affine_precompose, basis_design_matrix,
                     symmetric_basis, vector_to_poly)

T_MAT = np.diag([1.0, -1.0])


def reversor(z: np.ndarray) -> np.ndarray:
    """T(x, u) = (x, -u)."""
    out = np.array(z, dtype=float, copy=True)
    out[..., 1] *= -1.0
    return out


def as_points(z) -> np.ndarray:
    """Coerce a point or point list to an (N, 2) array."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[None, :]
    return z


class PlaneMap:
    """Evaluatable plane map: evaluate / jacobian on (N, 2) arrays, plus a domain box."""

    domain: DomainBox

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply_point(self, x: float, u: float) -> tuple[float, float]:
        w = self.evaluate(np.array([[x, u]]))
        return float(w[0, 0]), float(w[0, 1])

    def jacobian_point(self, x: float, u: float) -> np.ndarray:
        return self.jacobian(np.array([[x, u]]))[0]


# ---------------------------------------------------------------------------
# vectorized implicit solve
# ---------------------------------------------------------------------------

def _solve_monotone(g, dg, seed, lo, hi, tol, max_iter=60):
    """Vectorized safeguarded Newton for a per-point monotone function on [lo, hi].

    g and dg act elementwise; they must accept an optional integer index
    array as second argument selecting a subset of points (active-set
    iteration keeps the cost proportional to the unconverged points).
    Returns (roots, ok_mask); points whose bracket shows no sign change fail.
    """
    X = np.clip(np.array(seed, dtype=float), lo, hi)
    idx = np.arange(X.size)
    Xa = X.ravel()
    act = idx
    for _ in range(max_iter):
        gx = g(Xa[act], act)
        conv = np.abs(gx) <= tol
        if conv.any():
            act = act[~conv]
            gx = gx[~conv]
            if act.size == 0:
                break
        d = dg(Xa[act], act)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = gx / d
        step = np.where(np.isfinite(step), step, 0.0)
        Xn = np.clip(Xa[act] - step, lo, hi)
        if np.array_equal(Xn, Xa[act]):
            break
        Xa[act] = Xn
    ok = np.ones(X.size, dtype=bool)
    if act.size:
        ok[act] = np.abs(g(Xa[act], act)) <= tol
    if ok.all():
        return Xa.reshape(X.shape), ok.reshape(X.shape)
    # bisection rescue on the stragglers
    bad = np.where(~ok)[0]
    A = np.full(bad.size, lo, dtype=float)
    B = np.full(bad.size, hi, dtype=float)
    gA = g(A, bad)
    gB = g(B, bad)
    has_root = (gA * gB <= 0) & np.isfinite(gA) & np.isfinite(gB)
    span = hi - lo
    for _ in range(90):
        mid = 0.5 * (A + B)
        gm = g(mid, bad)
        left = (gm < 0) == (gA < 0)
        A = np.where(left, mid, A)
        gA = np.where(left, gm, gA)
        B = np.where(left, B, mid)
        span *= 0.5
        if span < 1e-17:
            break
    Xa[bad] = 0.5 * (A + B)
    gbad = g(Xa[bad], bad)
    dbad = dg(Xa[bad], bad)
    okb = (np.abs(gbad) <= np.maximum(tol, 1e3 * np.finfo(float).eps * np.abs(dbad)))
    ok[bad] = okb & has_root
    return Xa.reshape(X.shape), ok.reshape(X.shape)


# ---------------------------------------------------------------------------
# generating-function map
# ---------------------------------------------------------------------------

class GenFunMap(PlaneMap):
    """Map of the plane generated by a symmetric polynomial S(x, x').

    u = -d1 S(x, x'), u' = d2 S(x, x'); x' is found by a monotone implicit
    solve (the twist condition keeps d1 d2 S away from zero on the domain).
    """

    def __init__(self, S: BivariatePoly, domain: DomainBox, solve_tol: float = 1e-12,
                 twist_floor: float = 1e-6, trust_x: tuple[float, float] | None = None,
                 solve_pad: float = 0.12, origin_tol: float = 1e-8):
        if not S.symmetric:
            raise ValueError("generating function must be symmetric")
        c = S.coeffs.copy()
        if abs(c[0, 0]) > 0.0:
            c[0, 0] = 0.0  # gauge: S(0,0) = 0
        if abs(c[1, 0]) > origin_tol or abs(c[0, 1]) > origin_tol:
            raise ValueError("generating function does not fix the origin "
                             f"(linear coefficient {c[1, 0]:.3e})")
        c[1, 0] = 0.0
        c[0, 1] = 0.0
        self.S = BivariatePoly(c, symmetric=True, degree=S.degree)
        self.domain = domain
        self.solve_tol = float(solve_tol)
        # trust_x: x-interval of generating pairs where S is meaningful
        # (the fit square for fitted maps, wide for exact polynomials)
        if trust_x is None:
            pad0 = 0.25 * domain.x_span
            trust_x = (domain.x_lo - pad0, domain.x_hi + pad0)
        self.trust_x = (float(trust_x[0]), float(trust_x[1]))
        self.solve_pad = float(solve_pad)
        self.S1 = self.S.deriv(1, 0)
        self.S2 = self.S.deriv(0, 1)
        self.S11 = self.S.deriv(2, 0)
        self.S12 = self.S.deriv(1, 1)
        self.S22 = self.S.deriv(0, 2)
        # twist sign sampled over the (x, x') trust square
        xs = np.linspace(self.trust_x[0], self.trust_x[1], 12)
        XX, YY = np.meshgrid(xs, xs, indexing="ij")
        tv = self.S12(XX.ravel(), YY.ravel())
        if np.abs(tv).min() < twist_floor or len(np.unique(np.sign(tv))) != 1:
            raise TwistLoss("d1 d2 S vanishes or changes sign on the domain")
        self.twist_sign = int(np.sign(tv[0]))

    # -- solve bracket -------------------------------------------------------

    def _bracket(self):
        lo, hi = self.trust_x
        pad = self.solve_pad * (hi - lo)
        return lo - pad, hi + pad

    def solve_xprime(self, x: np.ndarray, u: np.ndarray, seed: np.ndarray | None = None,
                     raise_on_fail: bool = True):
        """Root X of -d1 S(x, X) = u for each point; seed defaults to the shear guess.

        With raise_on_fail=False returns (X, ok_mask) instead of raising."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        lo, hi = self._bracket()
        if seed is None:
            seed = x + u
        xf, uf = x.ravel(), u.ravel()

        def g(X, ii=None):
            return -self.S1(xf if ii is None else xf[ii], X) - (uf if ii is None else uf[ii])

        def dg(X, ii=None):
            return -self.S12(xf if ii is None else xf[ii], X)

        X, ok = _solve_monotone(g, dg, np.asarray(seed, dtype=float).ravel(),
                                lo, hi, self.solve_tol)
        X = X.reshape(x.shape)
        ok = ok.reshape(x.shape)
        if not raise_on_fail:
            return X, ok
        if not ok.all():
            bad = int((~ok).sum())
            raise ImplicitSolveFailed(f"{bad}/{ok.size} points have no generating root "
                                      f"in [{lo:.3g}, {hi:.3g}]")
        return X

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        z = as_points(z)
        X = self.solve_xprime(z[:, 0], z[:, 1])
        return np.column_stack([X, self.S2(z[:, 0], X)])

    def evaluate_masked(self, z: np.ndarray):
        """(images, ok_mask): failed points carry whatever the solver stopped at."""
        z = as_points(z)
        X, ok = self.solve_xprime(z[:, 0], z[:, 1], raise_on_fail=False)
        return np.column_stack([X, self.S2(z[:, 0], X)]), ok

    def step_with_jacobian(self, z: np.ndarray, seed: np.ndarray | None = None):
        """(F(z), DF(z)) with a single implicit solve per point."""
        z = as_points(z)
        x, u = z[:, 0], z[:, 1]
        X = self.solve_xprime(x, u, seed=seed)
        s11 = self.S11(x, X)
        s12 = self.S12(x, X)
        s22 = self.S22(x, X)
        J = np.empty((len(x), 2, 2))
        J[:, 0, 0] = -s11 / s12
        J[:, 0, 1] = -1.0 / s12
        J[:, 1, 0] = s12 - s11 * s22 / s12
        J[:, 1, 1] = -s22 / s12
        return np.column_stack([X, self.S2(x, X)]), J

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        z = as_points(z)
        x, u = z[:, 0], z[:, 1]
        X = self.solve_xprime(x, u)
        s11 = self.S11(x, X)
        s12 = self.S12(x, X)
        s22 = self.S22(x, X)
        J = np.empty((len(x), 2, 2))
        J[:, 0, 0] = -s11 / s12
        J[:, 0, 1] = -1.0 / s12
        J[:, 1, 0] = s12 - s11 * s22 / s12
        J[:, 1, 1] = -s22 / s12
        return J

    def inverse_apply(self, z: np.ndarray) -> np.ndarray:
        """F^-1 = T o F o T: exact reversibility-based inversion, one solve."""
        return reversor(self.evaluate(reversor(as_points(z))))

    def inverse(self) -> "InverseGenFun":
        return InverseGenFun(self)

    def to_json(self) -> dict:
        return {"kind": "genfun", "genfun": self.S.to_json(),
                "domain": self.domain.as_list(), "solve_tol": self.solve_tol,
                "twist_sign": self.twist_sign, "trust_x": list(self.trust_x)}

    @classmethod
    def from_json(cls, obj: dict) -> "GenFunMap":
        d = obj["domain"]
        trust = obj.get("trust_x")
        return cls(BivariatePoly.from_json(obj["genfun"]),
                   DomainBox(d[0], d[1], d[2], d[3]), solve_tol=obj["solve_tol"],
                   trust_x=tuple(trust) if trust else None)


class InverseGenFun(PlaneMap):
    """Inverse of a GenFunMap, computed exactly as T o F o T."""

    def __init__(self, F: GenFunMap):
        self.F = F
        self.domain = F.domain

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        return self.F.inverse_apply(z)

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        zt = reversor(as_points(z))
        J = self.F.jacobian(zt)
        # D(T F T)(z) = T . DF^-1(T z) ... with DF at the preimage of T z
        # F^-1 = TFT, so D(F^-1)(z) = T DF(Tz) T after replacing F by its own role:
        Jm = np.einsum("ij,njk,kl->nil", T_MAT, J, T_MAT)
        return Jm

    def inverse(self) -> GenFunMap:
        return self.F


class AffineScaling(PlaneMap):
    """Diagonal affine map (x, u) -> (lam * x + p, mu * u)."""

    def __init__(self, lam: float, p: float, mu: float, domain: DomainBox | None = None):
        if lam == 0.0 or mu == 0.0:
            raise ValueError("degenerate affine scaling")
        self.lam = float(lam)
        self.p = float(p)
        self.mu = float(mu)
        self.domain = domain if domain is not None else DomainBox(-1.0, 1.0, -1.0, 1.0)

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        z = as_points(z)
        return np.column_stack([self.lam * z[:, 0] + self.p, self.mu * z[:, 1]])

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        z = as_points(z)
        J = np.zeros((len(z), 2, 2))
        J[:, 0, 0] = self.lam
        J[:, 1, 1] = self.mu
        return J

    def inverse(self) -> "AffineScaling":
        return AffineScaling(1.0 / self.lam, -self.p / self.lam, 1.0 / self.mu, self.domain)


class CoordinateChange(PlaneMap):
    """h_t(x, u) = (x + t x^2, u / (1 + 2 t x)); unit Jacobian determinant, commutes with T."""

    def __init__(self, t: float, domain: DomainBox | None = None):
        self.t = float(t)
        self.domain = domain if domain is not None else DomainBox(-1.0, 1.0, -1.0, 1.0)
        if self.t != 0.0:
            for xe in (self.domain.x_lo, self.domain.x_hi):
                if 1.0 + 2.0 * self.t * xe <= 0.0:
                    raise SingularChange(f"1 + 2 t x vanishes on the domain (t = {self.t})")

    def _denom(self, x):
        d = 1.0 + 2.0 * self.t * x
        if np.any(d <= 0.0):
            raise SingularChange("coordinate change evaluated past its fold")
        return d

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        z = as_points(z)
        x, u = z[:, 0], z[:, 1]
        d = self._denom(x)
        return np.column_stack([x + self.t * x * x, u / d])

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        z = as_points(z)
        x, u = z[:, 0], z[:, 1]
        d = self._denom(x)
        J = np.zeros((len(z), 2, 2))
        J[:, 0, 0] = d
        J[:, 1, 0] = -2.0 * self.t * u / (d * d)
        J[:, 1, 1] = 1.0 / d
        return J

    def inverse(self) -> "InverseCoordinateChange":
        return InverseCoordinateChange(self)


class InverseCoordinateChange(PlaneMap):
    """Closed-form inverse of h_t on the branch with 1 + 2 t x > 0."""

    def __init__(self, h: CoordinateChange):
        self.h = h
        self.domain = h.domain

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        z = as_points(z)
        X, U = z[:, 0], z[:, 1]
        t = self.h.t
        if t == 0.0:
            return z.copy()
        disc = 1.0 + 4.0 * t * X
        if np.any(disc <= 0.0):
            raise SingularChange("point outside the image of h_t")
        x = 2.0 * X / (1.0 + np.sqrt(disc))
        return np.column_stack([x, U * (1.0 + 2.0 * t * x)])

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        pre = self.evaluate(z)
        J = self.h.jacobian(pre)
        # det = 1 exactly: inverse is the adjugate
        Ji = np.empty_like(J)
        Ji[:, 0, 0] = J[:, 1, 1]
        Ji[:, 0, 1] = -J[:, 0, 1]
        Ji[:, 1, 0] = -J[:, 1, 0]
        Ji[:, 1, 1] = J[:, 0, 0]
        return Ji

    def inverse(self) -> CoordinateChange:
        return self.h


class ChainMap(PlaneMap):
    """Composition of stages, applied in list order (stages[0] acts first)."""

    def __init__(self, stages, domain: DomainBox | None = None):
        self.stages = list(stages)
        if domain is not None:
            self.domain = domain
        elif self.stages:
            self.domain = self.stages[0].domain
        else:
            self.domain = DomainBox(-1.0, 1.0, -1.0, 1.0)

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        z = as_points(z)
        for st in self.stages:
            z = st.evaluate(z)
        return z

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        z = as_points(z)
        J = np.tile(np.eye(2), (len(z), 1, 1))
        for st in self.stages:
            J = np.einsum("nij,njk->nik", st.jacobian(z), J)
            z = st.evaluate(z)
        return J

    def inverse(self) -> "ChainMap":
        return ChainMap([st.inverse() for st in reversed(self.stages)], self.domain)

    def to_json(self) -> dict:
        tags = []
        for st in self.stages:
            if isinstance(st, GenFunMap):
                tags.append({"kind": "genfun", "genfun": st.S.to_json()})
            elif isinstance(st, InverseGenFun):
                tags.append({"kind": "inverse", "genfun": st.F.S.to_json()})
            elif isinstance(st, AffineScaling):
                tags.append({"kind": "lambda", "lam": st.lam, "p": st.p, "mu": st.mu})
            elif isinstance(st, CoordinateChange):
                tags.append({"kind": "ht", "t": st.t})
            elif isinstance(st, InverseCoordinateChange):
                tags.append({"kind": "ht_inv", "t": st.h.t})
            else:
                raise TypeError(f"unserializable stage {type(st).__name__}")
        return {"kind": "chain", "stages": tags, "domain": self.domain.as_list()}


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def check_reversibility(F: PlaneMap, grid_points: np.ndarray) -> float:
    """sup over the grid of |T F T F(z) - z| (zero for reversible maps)."""
    z = as_points(grid_points)
    w = reversor(F.evaluate(reversor(F.evaluate(z))))
    return float(np.abs(w - z).max())


def symplectic_defect(F: PlaneMap, grid_points: np.ndarray) -> float:
    """sup over the grid of |det DF - 1|."""
    J = F.jacobian(as_points(grid_points))
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    return float(np.abs(det - 1.0).max())


def conjugate_by_ht(F: PlaneMap, t: float, domain: DomainBox | None = None) -> ChainMap:
    """h_t^-1 o F o h_t as a chain (h_t acts first)."""
    dom = domain if domain is not None else F.domain
    h = CoordinateChange(t, dom)
    return ChainMap([h, F, h.inverse()], dom)


def genfun_scale(x_lo: float, x_hi: float) -> float:
    """x-scale used to condition monomial fits; keeps the origin fixed."""
    return max(abs(x_lo), abs(x_hi), 1e-9)


def fit_genfun(M: PlaneMap, degree: int, grid_points: np.ndarray,
               domain: DomainBox | None = None, solve_tol: float = 1e-12,
               fit_tol: float | None = None) -> tuple[GenFunMap, float]:
    """Least-squares generating function of a reversible symplectic map.

    Uses the relations u = -d1 S(x, x') and u' = d2 S(x, x') at the sampled
    orbit pairs.  The fit runs in origin-preserving scaled coordinates, so the
    gauge (S(0,0) = 0) and the origin-fixing constraint stay structural.
    Returns the fitted map and the max re-evaluation error on the sample grid.
    """
    z = as_points(grid_points)
    w = M.evaluate(z)
    x, u = z[:, 0], z[:, 1]
    xp, up = w[:, 0], w[:, 1]
    dom = domain if domain is not None else M.domain
    pairs = symmetric_basis(degree, pin_constant=True, pin_linear=True)
    lo = float(min(x.min(), xp.min()))
    hi = float(max(x.max(), xp.max()))
    s0 = genfun_scale(lo, hi)
    xs, xps = x / s0, xp / s0
    rows_u = -basis_design_matrix(pairs, xs, xps, deriv=(1, 0)) / s0
    rows_up = basis_design_matrix(pairs, xs, xps, deriv=(0, 1)) / s0
    rows = np.vstack([rows_u, rows_up])
    rhs = np.concatenate([u, up])
    sol, _, rank, _ = np.linalg.lstsq(rows, rhs, rcond=1e-13)
    if rank < rows.shape[1]:
        raise RankDeficient(f"rank {rank} < {rows.shape[1]} in generating-function fit")
    S_scaled = vector_to_poly(sol, pairs, degree)
    S = affine_precompose(S_scaled, 1.0 / s0, 0.0)
    Ffit = GenFunMap(S, dom, solve_tol=solve_tol, trust_x=(lo, hi))
    werr = Ffit.evaluate(z) - w
    resid = float(np.abs(werr).max())
    if fit_tol is not None and resid > fit_tol:
        raise FitResidualTooLarge(f"re-evaluation error {resid:.3e} > {fit_tol:.3e}")
    return Ffit, resid
