"""Period-doubling renormalization operator for reversible twist maps.

R F = Lambda^-1 o F o F o Lambda with Lambda(x, u) = (lambda x + p, mu u),
anchored at the period-2 orbit: (0,0) |-> (p,0) and (-1,0) |-> (q,0), where
(p,0) is the orbit point on the negative symmetry axis and (q,0) its image.
With lambda = p - q and mu = lambda / d_u pi_x F^2(p,0), the output is again
normalized: R F fixes (0,0) and (-1,0) and has unit twist at the origin.

The module provides the generating-function composition route, the pointwise
route, a sampled C^2 distance, the coefficient-space Newton solver for the
fixed point, the finite-difference spectrum of DR, and the period-doubling
cascade machinery used to seed and cross-check everything.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np

from .errors import (CascadeLost, DegenerateOrbit, IllConditioned, JacobianSingular,
                     MidpointSolveFailed, NewtonDiverged, NoPeriod2, TwistDegenerate,
                     WrongSign)
from .maps import (AffineScaling, ChainMap, GenFunMap, PlaneMap, _solve_monotone,
                   as_points, conjugate_by_ht, fit_genfun, genfun_scale)
from .symfun import (BivariatePoly, DomainBox, affine_precompose, basis_design_matrix,
                     coeffs_to_vector, symmetric_basis, vector_to_poly)


# ---------------------------------------------------------------------------
# configuration and scalings
# ---------------------------------------------------------------------------

DEFAULT_DOMAIN = DomainBox(-0.30, 0.16, -0.16, 0.16)


@dataclass(frozen=True)
class Scalings:
    """Affine rescaling data (p, lambda, mu) for Lambda(x,u) = (lambda x + p, mu u)."""
    p: float
    lam: float
    mu: float

    def __post_init__(self):
        if self.p >= 0.0:
            raise WrongSign(f"period-2 anchor p = {self.p:.6g} >= 0")
        if self.lam >= 0.0:
            raise WrongSign(f"lambda = {self.lam:.6g} >= 0")
        if self.mu <= 0.0:
            raise WrongSign(f"mu = {self.mu:.6g} <= 0")

    @property
    def q(self) -> float:
        return self.p - self.lam

    def to_map(self, domain: DomainBox) -> AffineScaling:
        return AffineScaling(self.lam, self.p, self.mu, domain)

    def to_json(self) -> dict:
        return {"p": self.p, "lam": self.lam, "mu": self.mu}


@dataclass(frozen=True)
class RenormConfig:
    """Knobs for one renormalization step and the fixed-point solver."""
    degree: int = 14
    domain: DomainBox = DEFAULT_DOMAIN
    fit_x: tuple[float, float] = (-0.52, 0.52)   # generating-pair fit square
    fit_grid: int = 18              # fit pairs per axis over the (x, x') square
    solve_tol: float = 1e-12
    period2_range: tuple[float, float] = (-0.85, -1e-4)
    period2_scan: int = 600
    twist_floor: float = 1e-8
    newton_tol: float = 5e-10       # coefficient-space residual target (fit-noise floor)
    newton_max_iter: int = 30
    fd_step: float = 1e-6           # finite-difference step in coefficient space
    distance_grid: tuple[int, int] = (20, 20)
    distance_margin: float = 0.03
    distance_fd_step: float = 1e-5

    def __post_init__(self):
        if self.degree < 4:
            raise ValueError("degree must be >= 4")

    def basis(self):
        return symmetric_basis(self.degree, pin_constant=True, pin_linear=True)

    def pair_grid(self, fit_x: tuple[float, float] | None = None):
        lo, hi = fit_x if fit_x is not None else self.fit_x
        xs = np.linspace(lo, hi, self.fit_grid)
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        return X.ravel(), Y.ravel()


def kicked_family(a: float, cfg: RenormConfig | None = None) -> GenFunMap:
    """Test family S_a(x, x') = (x'-x)^2/2 + V(x) + V(x'), V(y) = (a/2) y^2 - y^3/3.

    Symmetric (reversible), twist d1 d2 S = -1, fixes the origin, and is
    pre-normalized: d_u pi_x F(0,0) = 1.  Its period-doubling cascade
    accumulates near a = -2.2663 with the structure on the negative axis.
    """
    cfg = cfg or RenormConfig()
    c = np.zeros((cfg.degree + 1, cfg.degree + 1))
    c[2, 0] = c[0, 2] = 0.5 * (1.0 + a)
    c[1, 1] = -1.0
    c[3, 0] = c[0, 3] = -1.0 / 3.0
    # exact cubic: globally evaluable, wide trust interval
    return GenFunMap(BivariatePoly(c, symmetric=True, degree=cfg.degree),
                     cfg.domain, solve_tol=cfg.solve_tol, trust_x=(-3.0, 3.0))


# ---------------------------------------------------------------------------
# period-2 orbit and scalings
# ---------------------------------------------------------------------------

def find_period2(F: PlaneMap, x_range: tuple[float, float] | None = None,
                 n_scan: int = 600, tol: float = 1e-12) -> tuple[float, float]:
    """Period-2 orbit point (p, 0) on the negative symmetry axis, with partner q.

    Scans pi_u F(x, 0) for sign changes on the range, refines by bisection,
    and drops fixed points.  Among genuine orbits prefers the one whose
    partner lies to the right (the map class has q > p); ties break toward 0.
    """
    lo, hi = x_range if x_range is not None else (-1.05, -1e-4)
    if hi > 0.0:
        raise ValueError("period-2 search range must lie on the negative axis")
    xs = np.linspace(lo, hi, n_scan)
    pts = np.column_stack([xs, np.zeros_like(xs)])
    img = F.evaluate(pts)
    g = img[:, 1]
    scale = max(abs(lo), abs(hi))
    if np.abs(g).max() < tol:
        # symmetry line fixed pointwise (e.g. the shear): no genuine orbit
        raise DegenerateOrbit("pi_u F(x,0) vanishes identically on the range")

    def gfun(x):
        return float(F.evaluate(np.array([[x, 0.0]]))[0, 1])

    roots = []
    for i in range(n_scan - 1):
        if g[i] == 0.0 or g[i] * g[i + 1] < 0:
            a, b = xs[i], xs[i + 1]
            ga = g[i]
            for _ in range(80):
                mid = 0.5 * (a + b)
                gm = gfun(mid)
                if abs(gm) <= tol or (b - a) < 1e-16 * max(1.0, abs(mid)):
                    break
                if (gm < 0) == (ga < 0):
                    a, ga = mid, gm
                else:
                    b = mid
            roots.append(0.5 * (a + b))
    if not roots:
        raise NoPeriod2(f"no sign change of pi_u F(x,0) on [{lo}, {hi}]")
    candidates = []
    degenerate = 0
    for r in roots:
        q = float(F.evaluate(np.array([[r, 0.0]]))[0, 0])
        if abs(q - r) < 1e-8 * scale:
            degenerate += 1
            continue
        candidates.append((r, q))
    if not candidates:
        raise DegenerateOrbit(f"all {degenerate} axis roots are fixed points")
    preferred = [c for c in candidates if c[1] > c[0]]
    pool = preferred if preferred else candidates
    pool.sort(key=lambda c: abs(c[0]))
    return pool[0]


def scalings(F: PlaneMap, x_range: tuple[float, float] | None = None,
             tol: float = 1e-12, twist_floor: float = 1e-8) -> Scalings:
    """Rescaling triple for F: p from the negative-axis period-2 point,
    lambda = p - q, mu = lambda / M12 with M12 = d_u pi_x F^2(p, 0).

    The normalization pins R F(0,0) = (0,0), R F(-1,0) = (-1,0) and unit twist
    d_u pi_x R F(0,0) = 1.  Raises WrongSign outside the map class.
    """
    if x_range is None:
        x_range = (-0.85, -1e-4)
    trust = getattr(F, "trust_x", None)
    if trust is not None:
        x_range = (max(x_range[0], trust[0] * 0.98), x_range[1])
    p, q = find_period2(F, x_range, tol=tol)
    zp = np.array([[p, 0.0], [q, 0.0]])
    J = F.jacobian(zp)
    M2 = J[1] @ J[0]               # DF^2(p, 0) = DF(q,0) DF(p,0)
    M12 = float(M2[0, 1])
    if abs(M12) < twist_floor:
        raise TwistDegenerate(f"d_u pi_x F^2(p,0) = {M12:.3e}")
    lam = p - q
    mu = lam / M12
    return Scalings(p=p, lam=lam, mu=mu)


# ---------------------------------------------------------------------------
# renormalization: generating-function route
# ---------------------------------------------------------------------------

def _midpoints(F: GenFunMap, a: np.ndarray, b: np.ndarray, tol: float,
               sc: Scalings) -> np.ndarray:
    """Solve d2 S(a, Z) + d1 S(Z, b) = 0 for the composition midpoint Z.

    The equation can have several branches; the orbit branch is the analytic
    continuation of the exact midpoint Z(p, p) = q of the period-2 pair.
    Seeds come from the linearization around (p, p); solutions whose local
    slope flips sign (past the fold) count as failures.
    """
    p, q = sc.p, sc.q
    dgq = float(F.S22(p, q) + F.S11(q, p))
    if dgq == 0.0:
        raise MidpointSolveFailed("fold at the period-2 midpoint itself")
    clin = -float(F.S12(p, q)) / dgq
    Z = q + clin * (a - p) + clin * (b - p)
    g = lambda Z_: F.S2(a, Z_) + F.S1(Z_, b)
    dg = lambda Z_: F.S22(a, Z_) + F.S11(Z_, b)
    cap = 0.35 * F.domain.x_span
    ok = np.zeros(np.shape(a), dtype=bool)
    for _ in range(80):
        gz = g(Z)
        ok = np.abs(gz) <= tol
        if ok.all():
            break
        d = dg(Z)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = gz / d
        step = np.where(np.isfinite(step), step, 0.0)
        Z = Z - np.clip(step, -cap, cap)
    gz = g(Z)
    branch_ok = np.sign(dg(Z)) == np.sign(dgq)
    good = (np.abs(gz) <= 10 * tol) & branch_ok
    if not good.all():
        raise MidpointSolveFailed(f"{int((~good).sum())}/{good.size} midpoint equations "
                                  "unsolved or past the twist fold")
    return Z


def renormalize(F: GenFunMap, cfg: RenormConfig, sc: Scalings | None = None,
                shrink_retries: int = 4, shrink: float = 0.85
                ) -> tuple[GenFunMap, Scalings, float]:
    """One renormalization step through the generating function.

    S2(x, x'') = S(x, X) + S(X, x'') at the stationary midpoint X, then
    S_R(x, y) = (lambda mu)^-1 S2(lambda x + p, lambda y + p), projected back
    onto the symmetric polynomial class by a value+gradient least-squares fit.

    Far from the fixed point the squared map need not be a twist map over the
    whole reference box; on midpoint failure the output box is shrunk toward
    its center (up to shrink_retries times) and recorded as R F's domain.
    Returns (R F, scalings used, fit residual).
    """
    if sc is None:
        sc = scalings(F, cfg.period2_range, tol=cfg.solve_tol, twist_floor=cfg.twist_floor)
    lam, p, mu = sc.lam, sc.p, sc.mu
    inv = 1.0 / (lam * mu)
    pairs = cfg.basis()
    fit_x = cfg.fit_x
    last_exc: Exception | None = None
    for attempt in range(shrink_retries + 1):
        gx, gy = cfg.pair_grid(fit_x)
        a = lam * gx + p
        b = lam * gy + p
        try:
            Z = _midpoints(F, a, b, cfg.solve_tol, sc)
            vals = inv * (F.S(a, Z) + F.S(Z, b))
            # envelope derivatives: the midpoint term drops at stationarity
            dvx = F.S1(a, Z) / mu
            dvy = F.S2(Z, b) / mu
            # gauge: value at the origin pair
            Z0 = _midpoints(F, np.array([p]), np.array([p]), cfg.solve_tol, sc)
            v0 = inv * (F.S(np.array([p]), Z0) + F.S(Z0, np.array([p])))[0]
            vals = vals - v0
            s0 = genfun_scale(*fit_x)
            xs, ys = gx / s0, gy / s0
            rows = np.vstack([
                basis_design_matrix(pairs, xs, ys, deriv=(0, 0)),
                basis_design_matrix(pairs, xs, ys, deriv=(1, 0)) / s0,
                basis_design_matrix(pairs, xs, ys, deriv=(0, 1)) / s0,
            ])
            rhs = np.concatenate([vals, dvx, dvy])
            colscale = np.linalg.norm(rows, axis=0)
            colscale[colscale == 0.0] = 1.0
            sol, _, rank, _ = np.linalg.lstsq(rows / colscale, rhs, rcond=1e-13)
            sol = sol / colscale
            if rank < rows.shape[1]:
                raise JacobianSingular(f"fit rank {rank} < {rows.shape[1]}")
            resid = float(np.abs(rows @ sol - rhs).max())
            S_R = affine_precompose(vector_to_poly(sol, pairs, cfg.degree), 1.0 / s0, 0.0)
            RF = GenFunMap(S_R, cfg.domain, solve_tol=cfg.solve_tol,
                           trust_x=fit_x)   # may raise TwistLoss
            return RF, sc, resid
        except MidpointSolveFailed as exc:
            last_exc = exc
            mid = 0.5 * (fit_x[0] + fit_x[1])
            half = 0.5 * shrink * (fit_x[1] - fit_x[0])
            fit_x = (mid - half, mid + half)
    raise MidpointSolveFailed(f"midpoints unsolvable after {shrink_retries} shrinks: {last_exc}")


def renormalize_pointwise(M: PlaneMap, cfg: RenormConfig,
                          sc: Scalings | None = None) -> tuple[GenFunMap, Scalings, float]:
    """Pointwise route: evaluate Lambda^-1 o M o M o Lambda on a grid, fit a genfun."""
    if sc is None:
        sc = scalings(M, cfg.period2_range, tol=cfg.solve_tol, twist_floor=cfg.twist_floor)
    Lam = sc.to_map(cfg.domain)
    chain = ChainMap([Lam, M, M, Lam.inverse()], cfg.domain)
    gx, gu = cfg.domain.grid(cfg.fit_grid, cfg.fit_grid, margin=0.02)
    pts = np.column_stack([gx, gu])
    RF, resid = fit_genfun(chain, cfg.degree, pts, domain=cfg.domain,
                           solve_tol=cfg.solve_tol)
    return RF, sc, resid


def pointwise_double(F: PlaneMap, sc: Scalings, domain: DomainBox) -> ChainMap:
    """The chain Lambda^-1 o F o F o Lambda (no fitting)."""
    Lam = sc.to_map(domain)
    return ChainMap([Lam, F, F, Lam.inverse()], domain)


def route_agreement(F: GenFunMap, cfg: RenormConfig, grid: tuple[int, int] = (10, 10),
                    RF: GenFunMap | None = None, sc: Scalings | None = None) -> float:
    """Sup difference between the fitted generating-function route and the
    pointwise chain Lambda^-1 F^2 Lambda, over the (x, u) grid points of the
    domain where both routes succeed (far from the fixed point the squared
    map may not be a twist map at a few grid corners)."""
    if RF is None or sc is None:
        RF, sc, _ = renormalize(F, cfg)
    chain = pointwise_double(F, sc, RF.domain)
    gx, gu = RF.domain.grid(grid[0], grid[1], margin=cfg.distance_margin)
    pts = np.column_stack([gx, gu])
    w_fit, ok = RF.evaluate_masked(pts)
    w_chain = chain.evaluate(pts)
    if not ok.any():
        raise MidpointSolveFailed("no grid point evaluable through both routes")
    return float(np.abs(w_fit[ok] - w_chain[ok]).max())


# ---------------------------------------------------------------------------
# sampled C^2 distance
# ---------------------------------------------------------------------------

def map_distance(F: PlaneMap, G: PlaneMap, grid: tuple[int, int] = (20, 20),
                 order: int = 2, domain: DomainBox | None = None,
                 margin: float = 0.03, fd_step: float = 1e-5) -> float:
    """Sampled C^order distance: max discrepancy of values and derivatives up
    to the given order on a common grid (Jacobian derivatives by central
    finite differences).  Symmetric; zero iff the maps agree on the grid."""
    dom = domain if domain is not None else F.domain
    gx, gu = dom.grid(grid[0], grid[1], margin=margin)
    pts = np.column_stack([gx, gu])
    d = float(np.abs(F.evaluate(pts) - G.evaluate(pts)).max())
    if order >= 1:
        d = max(d, float(np.abs(F.jacobian(pts) - G.jacobian(pts)).max()))
    if order >= 2:
        h = fd_step * dom.scale
        for direction in (np.array([1.0, 0.0]), np.array([0.0, 1.0])):
            dz = h * direction
            DF2 = (F.jacobian(pts + dz) - F.jacobian(pts - dz)) / (2 * h)
            DG2 = (G.jacobian(pts + dz) - G.jacobian(pts - dz)) / (2 * h)
            d = max(d, float(np.abs(DF2 - DG2).max()))
    return d


def c2_norm(F: PlaneMap, G: PlaneMap, **kw) -> float:
    """Alias of map_distance: sampled C^2 norm of F - G."""
    return map_distance(F, G, **kw)


# ---------------------------------------------------------------------------
# renormalization tower
# ---------------------------------------------------------------------------

class RenormTower:
    """Levels F, RF, R^2 F, ... with their scalings and fit residuals.

    Beyond the computed depth the tower optionally continues with a fixed
    tail map (the renormalization fixed point); swap_depth records where.
    """

    def __init__(self, F0: GenFunMap, cfg: RenormConfig):
        self.cfg = cfg
        self.maps: list[GenFunMap] = [F0]
        self.scalings: list[Scalings] = []
        self.residuals: list[float] = []
        self.tail_map: GenFunMap | None = None
        self.tail_scalings: Scalings | None = None

    @property
    def depth(self) -> int:
        return len(self.scalings)

    @property
    def swap_depth(self) -> int | None:
        return self.depth if self.tail_map is not None else None

    def extend(self, depth: int):
        while self.depth < depth:
            RF, sc, resid = renormalize(self.maps[-1], self.cfg)
            self.maps.append(RF)
            self.scalings.append(sc)
            self.residuals.append(resid)
        return self

    def set_tail(self, Fstar: GenFunMap, sc: Scalings):
        self.tail_map = Fstar
        self.tail_scalings = sc
        return self

    def level(self, k: int) -> GenFunMap:
        if k < len(self.maps):
            return self.maps[k]
        if self.tail_map is not None:
            return self.tail_map
        from .errors import TowerTooShallow
        raise TowerTooShallow(f"level {k} beyond computed depth {self.depth} and no tail set")

    def scaling(self, k: int) -> Scalings:
        if k < len(self.scalings):
            return self.scalings[k]
        if self.tail_map is not None:
            if self.tail_scalings is None:
                raise ValueError("tail scalings missing")
            return self.tail_scalings
        from .errors import TowerTooShallow
        raise TowerTooShallow(f"scalings at level {k} unavailable (depth {self.depth})")

    def psi_stage(self, k: int, letter: int) -> ChainMap:
        """psi_0 = Lambda_{R^k F} (letter 0) or psi_1 = R^k F o Lambda (letter 1)."""
        Lam = self.scaling(k).to_map(self.cfg.domain)
        if letter == 0:
            return ChainMap([Lam], self.cfg.domain)
        return ChainMap([Lam, self.level(k)], self.cfg.domain)


def build_tower(F0: GenFunMap, depth: int, cfg: RenormConfig) -> RenormTower:
    return RenormTower(F0, cfg).extend(depth)


# ---------------------------------------------------------------------------
# fixed point Newton
# ---------------------------------------------------------------------------

def _coeff_map(cfg: RenormConfig):
    """Closure c -> coeffs(R(S_c)) on the pinned symmetric basis."""
    pairs = cfg.basis()

    def R_coeffs(c: np.ndarray) -> np.ndarray:
        S = vector_to_poly(c, pairs, cfg.degree)
        F = GenFunMap(S, cfg.domain, solve_tol=cfg.solve_tol)
        # no box shrinking inside the Newton: the coefficient map must stay
        # a fixed-grid operator
        RF, _, _ = renormalize(F, cfg, shrink_retries=0)
        return coeffs_to_vector(RF.S, pairs)

    return pairs, R_coeffs


def newton_fixed_point(seed: GenFunMap, cfg: RenormConfig,
                       verbose: bool = False) -> tuple[GenFunMap, dict]:
    """Coefficient-space Newton for R F = F with finite-difference Jacobian.

    Damped by step halving (up to 8) on residual increase.  Returns the fixed
    point and diagnostics: final residual norms, scalings, map distance of
    (R F*, F*).
    """
    pairs, R_coeffs = _coeff_map(cfg)
    c = coeffs_to_vector(seed.S, pairs)
    G = R_coeffs(c) - c
    gnorm = float(np.abs(G).max())
    history = [gnorm]
    for it in range(cfg.newton_max_iter):
        if gnorm <= cfg.newton_tol:
            break
        n = len(c)
        J = np.empty((n, n))
        h = cfg.fd_step
        for i in range(n):
            hi = h * max(1.0, abs(c[i]))
            e = np.zeros(n); e[i] = hi
            J[:, i] = (R_coeffs(c + e) - R_coeffs(c - e)) / (2 * hi)
        A = J - np.eye(n)
        try:
            step = np.linalg.solve(A, -G)
        except np.linalg.LinAlgError as exc:
            raise JacobianSingular(str(exc)) from None
        lam_d = 1.0
        for _ in range(9):
            c_try = c + lam_d * step
            try:
                G_try = R_coeffs(c_try) - c_try
            except Exception:
                lam_d *= 0.5
                continue
            gn_try = float(np.abs(G_try).max())
            if gn_try < gnorm:
                c, G, gnorm = c_try, G_try, gn_try
                break
            lam_d *= 0.5
        else:
            if gnorm <= 10 * cfg.newton_tol:
                break   # stalled on the fit-noise floor, close enough
            raise NewtonDiverged(f"no residual decrease at iteration {it} (|G| = {gnorm:.3e})")
        history.append(gnorm)
        if verbose:
            print(f"  newton iter {it}: |G|_inf = {gnorm:.3e}")
    if gnorm > cfg.newton_tol:
        raise NewtonDiverged(f"residual {gnorm:.3e} > {cfg.newton_tol:.3e} "
                             f"after {cfg.newton_max_iter} iterations")
    Fstar = GenFunMap(vector_to_poly(c, pairs, cfg.degree), cfg.domain,
                      solve_tol=cfg.solve_tol)
    RFstar, sc, resid = renormalize(Fstar, cfg)
    diag = {
        "coeff_residual": gnorm,
        "iterations": len(history) - 1,
        "history": history,
        "fit_residual": resid,
        "scalings": sc,
        "rf_distance": map_distance(RFstar, Fstar, grid=cfg.distance_grid,
                                    domain=cfg.domain, margin=cfg.distance_margin,
                                    fd_step=cfg.distance_fd_step),
        "route_agreement": route_agreement(Fstar, cfg, RF=RFstar, sc=sc),
    }
    return Fstar, diag


# ---------------------------------------------------------------------------
# spectrum of DR at the fixed point
# ---------------------------------------------------------------------------

def ht_tangent_vector(Fstar: GenFunMap, cfg: RenormConfig) -> np.ndarray:
    """Tangent of t -> coeffs(genfun(h_t^-1 F* h_t)) at t = 0.

    The conjugated generating function is S(H_t(x), H_t(y)) with
    H_t(x) = x + t x^2, so the exact tangent is x^2 S_1 + y^2 S_2, projected
    onto the truncated basis by least squares on the fit grid.
    """
    S1, S2 = Fstar.S1, Fstar.S2
    gx, gy = cfg.pair_grid()
    vals = gx * gx * S1(gx, gy) + gy * gy * S2(gx, gy)
    pairs = cfg.basis()
    s0 = genfun_scale(*cfg.fit_x)
    rows = basis_design_matrix(pairs, gx / s0, gy / s0, deriv=(0, 0))
    sol, _, _, _ = np.linalg.lstsq(rows, vals, rcond=1e-13)
    Pscaled = vector_to_poly(sol, pairs, cfg.degree)
    P = affine_precompose(Pscaled, 1.0 / s0, 0.0)
    return coeffs_to_vector(P, pairs)


def dr_spectrum(Fstar: GenFunMap, cfg: RenormConfig, step: float | None = None) -> dict:
    """Finite-difference Jacobian of R at the fixed point and its eigen-structure.

    Returns eigenvalues, the unstable eigenvalue delta, the coordinate-change
    tangent direction with its matched eigenvalue, and the spectral radius
    after deflating the unstable and tangent directions (nu estimate).
    """
    pairs, R_coeffs = _coeff_map(cfg)
    c = coeffs_to_vector(Fstar.S, pairs)
    h = step if step is not None else cfg.fd_step
    n = len(c)
    J = np.empty((n, n))
    for i in range(n):
        hi = h * max(1.0, abs(c[i]))
        e = np.zeros(n); e[i] = hi
        J[:, i] = (R_coeffs(c + e) - R_coeffs(c - e)) / (2 * hi)
    evals, evecs = np.linalg.eig(J)
    order = np.argsort(-np.abs(evals))
    evals, evecs = evals[order], evecs[:, order]
    unstable = [k for k, ev in enumerate(evals) if abs(ev) > 1.0]
    v_t = ht_tangent_vector(Fstar, cfg)
    v_t = v_t / np.linalg.norm(v_t)
    overlaps = np.abs(evecs.conj().T @ v_t) / np.linalg.norm(evecs, axis=0)
    it_match = int(np.argmax(overlaps))
    sigma_t = evals[it_match]
    rayleigh = float(np.real(v_t @ (J @ v_t)))
    tangent_residual = float(np.linalg.norm(J @ v_t - rayleigh * v_t))
    deflate = set(unstable) | {it_match}
    remaining = [abs(ev) for k, ev in enumerate(evals) if k not in deflate]
    nu_est = max(remaining) if remaining else 0.0
    delta_est = float(np.real(evals[unstable[0]])) if len(unstable) == 1 else None
    return {
        "eigenvalues": evals,
        "eigenvectors": evecs,
        "jacobian": J,
        "n_unstable": len(unstable),
        "delta_est": delta_est,
        "tangent_vector": v_t,
        "tangent_eigenvalue": complex(sigma_t),
        "tangent_overlap": float(overlaps[it_match]),
        "tangent_rayleigh": rayleigh,
        "tangent_residual": tangent_residual,
        "nu_est": float(nu_est),
        "step": h,
    }


# ---------------------------------------------------------------------------
# strong stable manifold member by shooting
# ---------------------------------------------------------------------------

def strong_stable_member(Fstar: GenFunMap, cfg: RenormConfig, spec: dict,
                         eps: float = 5e-3, shoot_depth: int = 6,
                         newton_iters: int = 12, tol: float = 1e-10) -> GenFunMap:
    """Map on the local strong stable manifold at coefficient distance ~eps.

    Starts from F* + eps * v_ss along the leading strong-stable eigadirection
    and shoots: tunes the unstable and tangent-direction coordinates so that
    after shoot_depth renormalizations those coordinates of R^N F - F* vanish.
    """
    pairs, R_coeffs = _coeff_map(cfg)
    cstar = coeffs_to_vector(Fstar.S, pairs)
    evals, evecs = spec["eigenvalues"], spec["eigenvectors"]
    unstable = [k for k, ev in enumerate(evals) if abs(ev) > 1.0]
    if len(unstable) != 1:
        raise IllConditioned(f"{len(unstable)} unstable directions")
    iu = unstable[0]
    overlaps = np.abs(evecs.conj().T @ spec["tangent_vector"])
    it_match = int(np.argmax(overlaps))
    # leading strong-stable direction: largest modulus not unstable/tangent
    rest = [k for k in range(len(evals)) if k not in (iu, it_match)]
    iss = rest[int(np.argmax([abs(evals[k]) for k in rest]))]
    v_ss = np.real(evecs[:, iss]); v_ss /= np.linalg.norm(v_ss)
    v_u = np.real(evecs[:, iu]); v_u /= np.linalg.norm(v_u)
    v_w = np.real(evecs[:, it_match]); v_w /= np.linalg.norm(v_w)
    # left eigen-coordinates for the shooting residual
    left = np.linalg.inv(evecs)

    def shot(st: np.ndarray) -> np.ndarray:
        c = cstar + eps * v_ss + st[0] * v_u + st[1] * v_w
        for _ in range(shoot_depth):
            c = R_coeffs(c)
        xi = left @ (c - cstar)
        return np.array([np.real(xi[iu]), np.real(xi[it_match])])

    st = np.zeros(2)
    r = shot(st)
    for _ in range(newton_iters):
        if np.abs(r).max() < tol:
            break
        h = 1e-9
        Jm = np.empty((2, 2))
        for i in range(2):
            e = np.zeros(2); e[i] = h
            Jm[:, i] = (shot(st + e) - r) / h
        try:
            dst = np.linalg.solve(Jm, -r)
        except np.linalg.LinAlgError as exc:
            raise JacobianSingular(f"shooting Jacobian singular: {exc}") from None
        lam_d = 1.0
        for _ in range(8):
            r_try = shot(st + lam_d * dst)
            if np.abs(r_try).max() < np.abs(r).max():
                st = st + lam_d * dst
                r = r_try
                break
            lam_d *= 0.5
        else:
            break
    c = cstar + eps * v_ss + st[0] * v_u + st[1] * v_w
    return GenFunMap(vector_to_poly(c, pairs, cfg.degree), cfg.domain,
                     solve_tol=cfg.solve_tol)


# ---------------------------------------------------------------------------
# orbit helpers for the cascade (generic over the map interface)
# ---------------------------------------------------------------------------

def _orbit_axis(F: PlaneMap, x0: float, m: int):
    """F^m(x0, 0) with the accumulated Jacobian."""
    z = np.array([[x0, 0.0]])
    J = np.eye(2)
    step = getattr(F, "step_with_jacobian", None)
    for _ in range(m):
        if step is not None:
            z, Js = step(z)
            J = Js[0] @ J
        else:
            Js = F.jacobian(z)[0]
            z = F.evaluate(z)
            J = Js @ J
    return z[0], J


def _axis_residual_vec(F: PlaneMap, xs: np.ndarray, m: int) -> np.ndarray:
    """pi_u F^m(x, 0) for an array of axis points."""
    Z = np.column_stack([xs, np.zeros_like(xs)])
    for _ in range(m):
        Z = F.evaluate(Z)
    return Z[:, 1]


def _newton_axis(F: PlaneMap, x0: float, m: int, tol: float = 5e-14,
                 itmax: int = 50) -> float | None:
    x = float(x0)
    for _ in range(itmax):
        z, J = _orbit_axis(F, x, m)
        r, rp = z[1], J[1, 0]
        if rp == 0.0 or not math.isfinite(r):
            return None
        dx = -r / rp
        lam = 1.0
        for _ in range(30):
            try:
                z2, _ = _orbit_axis(F, x + lam * dx, m)
            except Exception:
                lam *= 0.5
                continue
            if abs(z2[1]) <= abs(r):
                break
            lam *= 0.5
        x += lam * dx
        if abs(lam * dx) < tol * max(1.0, abs(x)):
            return x
    z, _ = _orbit_axis(F, x, m)
    return x if abs(z[1]) < 1e-9 else None


def _scan_axis_roots(F: PlaneMap, m: int, lo: float, hi: float, n_scan: int = 1501,
                     exclude=(), tol: float = 5e-14) -> list[float]:
    xs = np.linspace(lo, hi, n_scan)
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            U = _axis_residual_vec(F, xs, m)
        except Exception:
            # fall back to per-chunk evaluation, skipping escaping chunks
            U = np.full(n_scan, np.nan)
            for i in range(0, n_scan, 100):
                try:
                    U[i:i + 100] = _axis_residual_vec(F, xs[i:i + 100], m)
                except Exception:
                    pass
    roots = []
    for i in range(n_scan - 1):
        if not (np.isfinite(U[i]) and np.isfinite(U[i + 1])):
            continue
        if U[i] == 0.0 or U[i] * U[i + 1] < 0:
            r = _newton_axis(F, 0.5 * (xs[i] + xs[i + 1]), m)
            if r is None:
                continue
            if any(abs(r - e) < 1e-8 * max(1.0, abs(r)) for e in exclude):
                continue
            if not any(abs(r - rr) < 1e-11 * max(1.0, abs(rr)) for rr in roots):
                roots.append(r)
    return roots


class _OrbitTracker:
    """Tracks the axis pair (x, y) of a symmetric period-2^n orbit across parameters."""

    def __init__(self, family, n: int, x: float, a: float):
        self.family = family
        self.n = n
        self.half = 2 ** (n - 1)
        self.a = float(a)
        self.x = float(x)
        F = family(a)
        z, _ = _orbit_axis(F, self.x, self.half)
        self.y = float(z[0])

    def gap(self) -> float:
        return abs(self.y - self.x)

    def clone(self) -> "_OrbitTracker":
        t = _OrbitTracker.__new__(_OrbitTracker)
        t.family, t.n, t.half, t.a, t.x, t.y = (self.family, self.n, self.half,
                                                self.a, self.x, self.y)
        return t

    def _verify(self, F: PlaneMap, x: float) -> float | None:
        z, _ = _orbit_axis(F, x, self.half)
        if abs(z[1]) > 1e-8:
            return None
        if self.n > 1:
            zh, _ = _orbit_axis(F, x, self.half // 2)
            if abs(zh[1]) < 1e-10:
                return None  # collapsed onto the lower-period orbit
        return float(z[0])

    def goto(self, a_target: float) -> bool:
        a0, x0 = self.a, self.x
        steps = 3
        for _ in range(6):
            x, ok = x0, True
            for k in range(1, steps + 1):
                at = a0 + (a_target - a0) * k / steps
                xn = _newton_axis(self.family(at), x, self.half)
                if xn is None or abs(xn - x) > 0.45 * max(self.gap(), 1e-12):
                    ok = False
                    break
                x = xn
            if ok:
                F = self.family(a_target)
                y = self._verify(F, x)
                if y is not None:
                    self.x, self.y, self.a = x, y, a_target
                    return True
            steps *= 3
        return False

    def trace(self) -> float:
        _, J = _orbit_axis(self.family(self.a), self.x, 2 ** self.n)
        return float(J[0, 0] + J[1, 1])


def _born_pair(tr: _OrbitTracker, a_seed: float) -> _OrbitTracker | None:
    """Axis pair of the period-doubled orbit just past its birth, near tr's orbit."""
    t = tr.clone()
    if not t.goto(a_seed):
        return None
    F = tr.family(a_seed)
    m_child = 2 ** tr.n
    exclude = (t.x, t.y)
    gap = max(t.gap(), 1e-9)
    cands = []
    for wrel in (0.05, 0.15, 0.35):
        for base in (t.x, t.y):
            w = wrel * gap
            for r in _scan_axis_roots(F, m_child, base - w, base + w, 1201, exclude):
                if abs(r - base) > 0.45 * gap:
                    continue
                z, _ = _orbit_axis(F, r, m_child)
                if abs(z[1]) > 1e-8 or abs(z[0] - base) > 0.45 * gap:
                    continue
                _, J = _orbit_axis(F, r, 2 * m_child)
                trc = J[0, 0] + J[1, 1]
                if not math.isfinite(trc) or abs(trc) > 2.7:
                    continue
                cands.append((abs(r - base), r))
        if cands:
            break
    if not cands:
        return None
    cands.sort()
    return _OrbitTracker(tr.family, tr.n + 1, cands[0][1], a_seed)


@dataclass
class CascadeResult:
    """Period-doubling parameters with brackets, ratio table, and extrapolation."""
    params: list[float]
    widths: list[float]
    ratios: list[float]
    delta_est: float
    a_accumulation: float

    def to_json(self) -> dict:
        return {"params": self.params, "widths": self.widths, "ratios": self.ratios,
                "delta_est": self.delta_est, "a_accumulation": self.a_accumulation}


def cascade_bisection(family, n_max: int = 8, a_first: tuple[float, float] = (-2.4, -1.9),
                      bracket_tol: float = 1e-12, seed_scan: tuple[float, float] = (-0.9, -0.02),
                      delta_guess: float = 8.7) -> CascadeResult:
    """Parameters a_1 < ... (in cascade order) where period-2^n orbits are born.

    Each a_n is bracketed by bisection on the trace of the period-2^(n-1)
    symmetric orbit crossing -2.  The family must period-double over the
    first bracket.  Returns the parameter list, bracket widths, and the ratio
    table (a_n - a_(n-1)) / (a_(n+1) - a_n) with its extrapolated limit.
    """
    params = []
    widths = []
    # a_1: trace of the fixed point at the origin
    F_lo, F_hi = family(a_first[0]), family(a_first[1])
    z0 = np.array([[0.0, 0.0]])
    tr_lo = float(np.trace(F_lo.jacobian(z0)[0]))
    tr_hi = float(np.trace(F_hi.jacobian(z0)[0]))
    if not (tr_hi > -2.0 > tr_lo):
        raise CascadeLost(f"fixed-point trace does not cross -2 on {a_first}")
    lo, hi = a_first
    while hi - lo > bracket_tol:
        mid = 0.5 * (lo + hi)
        trm = float(np.trace(family(mid).jacobian(z0)[0]))
        if trm < -2.0:
            lo = mid
        else:
            hi = mid
    params.append(0.5 * (lo + hi))
    widths.append(hi - lo)

    # seed the period-2 orbit a bit past a_1
    gap_guess = abs(a_first[1] - a_first[0]) / 3.0
    a_seed = params[0] - 0.04
    F = family(a_seed)
    roots = _scan_axis_roots(F, 1, seed_scan[0], seed_scan[1], 1201, exclude=(0.0,))
    roots = [r for r in roots
             if abs(float(F.evaluate(np.array([[r, 0.0]]))[0, 0]) - r) > 1e-6]
    if not roots:
        raise CascadeLost("period-2 orbit not found past the first doubling")
    tracker = _OrbitTracker(family, 1, roots[0], a_seed)

    for n in range(1, n_max):
        if n == 1:
            lo_t, hi_t = params[0] - 3.0 * gap_guess, a_seed
        else:
            gp = params[-1] - params[-2]
            lo_t = params[-1] + 2.4 * gp / delta_guess
            hi_t = params[-1] + 0.1 * gp / delta_guess
        thi, tlo = tracker.clone(), tracker.clone()
        if not thi.goto(hi_t) or not tlo.goto(lo_t):
            raise CascadeLost(f"orbit tracking failed at level {n}")
        Thi, Tlo = thi.trace(), tlo.trace()
        if not (Thi > -2.0 > Tlo):
            # widen once
            lo_t = params[-1] + 4.5 * (params[-1] - params[-2]) / delta_guess if n > 1 \
                else params[0] - 5.0 * gap_guess
            tlo = tracker.clone()
            if not tlo.goto(lo_t) or not (thi.trace() > -2.0 > tlo.trace()):
                raise CascadeLost(f"no trace crossing at level {n}")
        lo, hi = lo_t, hi_t
        cur = thi
        while hi - lo > bracket_tol:
            mid = 0.5 * (lo + hi)
            t2 = cur.clone()
            if not t2.goto(mid):
                raise CascadeLost(f"bisection tracking failed at level {n}")
            if t2.trace() < -2.0:
                lo = mid
            else:
                hi = mid
                cur = t2
        params.append(0.5 * (lo + hi))
        widths.append(hi - lo)
        if n == n_max - 1:
            break
        gpn = params[-1] - params[-2]
        child = _born_pair(cur, params[-1] + 0.5 * gpn / delta_guess)
        if child is None:
            raise CascadeLost(f"could not seed the period-{2 ** (n + 1)} orbit")
        tracker = child

    d = np.diff(np.array(params))
    ratios = list(d[:-1] / d[1:])
    delta_est = float(ratios[-1])
    a_acc = float(params[-1] + d[-1] / (delta_est - 1.0))
    return CascadeResult(params=params, widths=widths, ratios=[float(r) for r in ratios],
                         delta_est=delta_est, a_accumulation=a_acc)


def cascade_geometry(family, a: float, n_levels: int = 8,
                     seed_scan: tuple[float, float] = (-0.9, -0.02)) -> dict:
    """Orbit-geometry oracle at the accumulation parameter.

    Measures, per level, the signed axis gap of the period-2^n orbit (ratios
    converge to lambda*) and the quarter-period u-coordinate (ratios converge
    to mu*), using nothing but orbits of the family map.
    """
    F = family(a)
    roots = _scan_axis_roots(F, 1, seed_scan[0], seed_scan[1], 1201, exclude=(0.0,))
    roots = [r for r in roots
             if abs(float(F.evaluate(np.array([[r, 0.0]]))[0, 0]) - r) > 1e-6]
    if not roots:
        raise CascadeLost("no period-2 orbit at the accumulation parameter")
    x1 = roots[0]
    z, _ = _orbit_axis(F, x1, 1)
    pairs = [(x1, float(z[0]))]
    known = [0.0, x1, float(z[0])]
    for n in range(2, n_levels + 1):
        half = 2 ** (n - 1)
        xp, yp = pairs[-1]
        gap = abs(xp - yp)
        cands = []
        for wrel in (0.08, 0.2, 0.4):
            for base in (xp, yp):
                w = wrel * gap
                for r in _scan_axis_roots(F, half, base - w, base + w, 1201, tuple(known)):
                    if abs(r - base) > 0.58 * gap:
                        continue
                    zz, _ = _orbit_axis(F, r, half)
                    if abs(zz[1]) > 1e-7 or abs(zz[0] - base) > 0.58 * gap:
                        continue
                    xl = _newton_axis(F, r, half // 2)
                    if xl is not None and abs(xl - r) < 1e-10 * max(1.0, abs(r)):
                        continue
                    cands.append((abs(r - base), r, float(zz[0])))
            if cands:
                break
        if not cands:
            break
        cands.sort()
        _, xn, yn = cands[0]
        pairs.append((xn, yn))
        known += [xn, yn]
    # designation: structure side = the point the next pair clusters toward
    struct = []
    for i in range(len(pairs) - 1):
        xp, yp = pairs[i]
        cx = 0.5 * (pairs[i + 1][0] + pairs[i + 1][1])
        struct.append(xp if abs(cx - xp) < abs(cx - yp) else yp)
    gaps = []
    for i, s in enumerate(struct):
        xp, yp = pairs[i]
        gaps.append((yp if s == xp else xp) - s)
    gaps = np.array(gaps)
    lam_ratios = list(gaps[1:] / gaps[:-1])
    uvals = []
    for i in range(1, len(struct)):
        n = i + 1
        zz, _ = _orbit_axis(F, struct[i], 2 ** (n - 2))
        uvals.append(float(zz[1]))
    uv = np.array(uvals)
    mu_ratios = list(uv[1:] / uv[:-1])
    return {
        "pairs": pairs,
        "structure_points": struct,
        "signed_gaps": [float(g) for g in gaps],
        "lambda_ratios": [float(r) for r in lam_ratios],
        "mu_ratios": [float(r) for r in mu_ratios],
        "lambda_oracle": float(lam_ratios[-1]) if lam_ratios else float("nan"),
        "mu_oracle": float(mu_ratios[-1]) if mu_ratios else float("nan"),
    }
