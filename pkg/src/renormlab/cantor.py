"""The period-doubling invariant Cantor set.

Pieces are indexed by dyadic words (least-significant bit first): the depth-n
family consists of 2^(n+1) topological disks B_w, images of the base pieces
of the n-th renormalization level under rescaling chains.  The map permutes
them like the add-one map on dyadic integers; diameters shrink geometrically;
the intersection over depths is the invariant Cantor set.

Hulls are axis-aligned bounding boxes of densely sampled base-piece
boundaries pushed through the chains and padded conservatively, so the
nesting / disjointness / permutation checks are meaningful at desk depths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import (ContainmentFailed, DisjointnessViolation, NestingViolation,
                     PermutationViolation, TowerTooShallow)
from .maps import ChainMap, as_points
from .renorm import RenormTower
from .symfun import DomainBox


# ---------------------------------------------------------------------------
# dyadic words
# ---------------------------------------------------------------------------

def word_value(bits) -> int:
    """Integer encoded by dyadic bits, least-significant first."""
    return sum(b << k for k, b in enumerate(bits))


def word_from_value(v: int, n: int) -> tuple:
    return tuple((v >> k) & 1 for k in range(n))


def word_add_one(bits) -> tuple:
    """Add-one map on dyadic words (wraps at 2^n)."""
    n = len(bits)
    return word_from_value((word_value(bits) + 1) % (1 << n), n)


def word_str(bits) -> str:
    return "".join(str(b) for b in bits)


def words_of_length(n: int):
    return [word_from_value(v, n) for v in range(1 << n)]


# ---------------------------------------------------------------------------
# base pieces
# ---------------------------------------------------------------------------

def _hull_of_cloud(pts: np.ndarray, pad: float) -> DomainBox:
    return DomainBox(float(pts[:, 0].min()) - pad, float(pts[:, 0].max()) + pad,
                     float(pts[:, 1].min()) - pad, float(pts[:, 1].max()) + pad)


def _cloud_pad(pts: np.ndarray, factor: float = 2.0) -> float:
    """Pad from the max consecutive boundary-sample displacement.

    The displacement is the local Lipschitz bound times the base spacing; the
    true hull defect of a sampled smooth arc is sagitta-sized (quadratic in
    the spacing), so a 2x linear pad stays strictly conservative while not
    swamping the genuine inter-piece gaps at depth 12.
    """
    d = np.linalg.norm(np.diff(pts, axis=0, append=pts[:1]), axis=1)
    return factor * float(d.max()) + 1e-300


@dataclass(frozen=True)
class BasePieces:
    """B0 (square at the period-2 point) and B1 (padded hull of its image)."""
    b0: DomainBox
    b1: DomainBox
    radius: float
    gap: float              # dist(B0, B1) > 0

    def union_contains(self, pts: np.ndarray, pad: float = 0.0) -> np.ndarray:
        in0 = self.b0.contains(pts[:, 0], pts[:, 1], pad)
        in1 = self.b1.contains(pts[:, 0], pts[:, 1], pad)
        return in0 | in1


def base_pieces(tower: RenormTower, level: int, radius: float,
                boundary_per_side: int = 128,
                next_pieces: BasePieces | None = None) -> BasePieces:
    """Base pieces of the level-th tower map at the given radius.

    Verifies: (i) B0 and B1 disjoint, (ii) Lambda(B0' u B1') inside B0 where
    the primed pieces belong to the next level (exact for the diagonal affine
    rescaling), (iii) the period-2 point is recurrent in B0.  Raises
    ContainmentFailed when the radius does not pass.
    """
    F = tower.level(level)
    sc = tower.scaling(level)
    b0 = DomainBox(sc.p - radius, sc.p + radius, -radius, radius)
    bx, bu = b0.boundary(boundary_per_side)
    img = F.evaluate(np.column_stack([bx, bu]))
    b1 = _hull_of_cloud(img, _cloud_pad(img))
    if b0.intersects(b1):
        raise ContainmentFailed(f"level {level}: B0 and B1 intersect at r = {radius}")
    gap = b0.distance(b1)
    # (ii): the rescaling is diagonal affine, so boxes map to boxes exactly
    if next_pieces is not None:
        lam_map = sc.to_map(tower.cfg.domain)
        for name, bb in (("B0'", next_pieces.b0), ("B1'", next_pieces.b1)):
            corners = lam_map.evaluate(np.array([
                [bb.x_lo, bb.u_lo], [bb.x_hi, bb.u_hi]]))
            xlo, xhi = sorted([corners[0, 0], corners[1, 0]])
            ulo, uhi = sorted([corners[0, 1], corners[1, 1]])
            if not b0.contains_box(DomainBox(xlo, xhi, ulo, uhi)):
                raise ContainmentFailed(
                    f"level {level}: Lambda({name}) escapes B0 at r = {radius}")
    # (iii): recurrence of the period-2 point
    if not bool(b0.contains(sc.p, 0.0)):
        raise ContainmentFailed("period-2 point outside B0")
    return BasePieces(b0=b0, b1=b1, radius=radius, gap=gap)


def base_piece_ladder(tower: RenormTower, depth: int, r0: float = 0.08,
                      shrink: float = 0.85, tries: int = 12,
                      boundary_per_side: int = 128) -> list[BasePieces]:
    """Base pieces for tower levels 0..depth, chosen from a geometric radius
    schedule, deepest level first (the containment check couples level k to
    level k+1).  Beyond the computed tower depth all levels share the fixed
    tail, so the ladder becomes self-consistent there."""
    swap = tower.swap_depth if tower.swap_depth is not None else depth + 1

    def choose(level: int, nxt: BasePieces | None) -> BasePieces:
        last = None
        for k in range(tries):
            try:
                return base_pieces(tower, level, r0 * shrink ** k,
                                   boundary_per_side, nxt)
            except ContainmentFailed as exc:
                last = exc
        raise ContainmentFailed(f"no radius in the schedule works: {last}")

    ladder: dict[int, BasePieces] = {}
    if depth >= swap:
        # self-consistent tail: next level's pieces equal this level's
        tail = None
        for k in range(tries):
            r = r0 * shrink ** k
            try:
                cand = base_pieces(tower, swap, r, boundary_per_side, None)
                cand = base_pieces(tower, swap, r, boundary_per_side, cand)
                tail = cand
                break
            except ContainmentFailed:
                continue
        if tail is None:
            raise ContainmentFailed("no self-consistent tail radius")
        for k in range(swap, depth + 1):
            ladder[k] = tail
    deepest = min(depth, swap - 1)
    for level in range(deepest, -1, -1):
        nxt = ladder.get(level + 1)
        ladder[level] = choose(level, nxt)
    return [ladder[k] for k in range(depth + 1)]


# ---------------------------------------------------------------------------
# piece hierarchy
# ---------------------------------------------------------------------------

@dataclass
class Piece:
    word: tuple           # (w_1 .. w_n, nu), outermost letter first
    depth: int
    box: DomainBox


@dataclass
class CantorApprox:
    depth: int
    pieces: dict                 # word tuple -> DomainBox
    clouds: dict                 # word tuple -> (M, 2) boundary image samples
    max_diameter: float
    min_gap: float
    unresolved_pairs: int = 0    # disjoint by the hierarchical certificate only
    measure: float = field(init=False)

    def __post_init__(self):
        self.measure = len(self.pieces) * 2.0 ** (-(self.depth + 1))

    def words(self):
        return sorted(self.pieces.keys(), key=word_value)


def build_pieces(tower: RenormTower, depth: int, ladder: list[BasePieces] | None = None,
                 boundary_per_side: int = 128, check: bool = True,
                 containment_tol: float = 1e-9) -> CantorApprox:
    """All 2^(depth+1) pieces of the depth-level family, with the nesting,
    disjointness (Lemma-style: the all-ones word is exempt) and adding-machine
    permutation checks.

    Pieces are built by one batched pullback per tower level: the boundary
    clouds of the base pieces at the deepest level are pushed through
    psi_0 = Lambda and psi_1 = F o Lambda of each shallower level.
    """
    if ladder is None:
        ladder = base_piece_ladder(tower, depth, boundary_per_side=boundary_per_side)
    if len(ladder) < depth + 1:
        raise TowerTooShallow(f"ladder has {len(ladder)} levels, need {depth + 1}")
    base = ladder[depth]
    clouds = []
    words = []
    for nu, bb in ((0, base.b0), (1, base.b1)):
        bx, bu = bb.boundary(boundary_per_side)
        clouds.append(np.column_stack([bx, bu]))
        words.append((nu,))
    C = np.stack(clouds)                     # (P, M, 2)
    for k in range(depth - 1, -1, -1):
        P, M, _ = C.shape
        flat = C.reshape(P * M, 2)
        lam_map = tower.scaling(k).to_map(tower.cfg.domain)
        zero_branch = lam_map.evaluate(flat)
        one_branch = tower.level(k).evaluate(zero_branch)
        C = np.concatenate([zero_branch.reshape(P, M, 2),
                            one_branch.reshape(P, M, 2)], axis=0)
        words = [(0,) + w for w in words] + [(1,) + w for w in words]

    pieces = {}
    cloud_map = {}
    diams = []
    for w, cloud in zip(words, C):
        box = _hull_of_cloud(cloud, _cloud_pad(cloud))
        pieces[w] = box
        cloud_map[w] = cloud
        diams.append(math.hypot(box.x_span, box.u_span))
    max_diam = max(diams)

    min_gap, unresolved = (np.inf, 0)
    if check or depth <= 13:
        min_gap, unresolved = check_disjointness(pieces, ladder, depth,
                                                 strict=check)
    approx = CantorApprox(depth=depth, pieces=pieces, clouds=cloud_map,
                          max_diameter=max_diam, min_gap=float(min_gap))
    approx.unresolved_pairs = unresolved
    if check and depth >= 1:
        check_nesting(tower, approx, ladder, boundary_per_side, containment_tol)
        check_permutation(tower, approx, containment_tol)
    return approx


def check_disjointness(pieces: dict, ladder, depth: int, strict: bool = True):
    """Pairwise disjointness per the Lemma (the all-ones word is exempt).

    Box hulls certify most pairs directly.  Pairs whose boxes cannot resolve
    the gap (deep pieces are exponentially thin across the contracted
    direction) are certified hierarchically, mirroring the inductive proof:
    the two words first differ at some letter k, the shared chain prefix is
    injective, and the level-k pieces land in the disjoint base pieces
    B_0 / B_1 of level k-1, whose gap the ladder verified.  A pair violates
    only when its branching level lacks that base gap.

    Returns (min box gap over box-resolved pairs, number of hierarchically
    certified pairs).
    """
    ones = tuple([1] * (depth + 1))
    keys = [w for w in pieces if w != ones]
    boxes = np.array([pieces[w].as_list() for w in keys])
    xlo, xhi, ulo, uhi = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    min_gap = np.inf
    unresolved = 0
    for i in range(len(keys)):
        dx = np.maximum(np.maximum(xlo[i] - xhi, xlo - xhi[i]), 0.0)
        du = np.maximum(np.maximum(ulo[i] - uhi, ulo - uhi[i]), 0.0)
        d = np.hypot(dx, du)
        d[i] = np.inf
        overlapping = np.where(d <= 0.0)[0]
        for j in overlapping:
            if j < i:
                continue
            wi, wj = keys[i], keys[j]
            k = next(t for t in range(len(wi)) if wi[t] != wj[t])
            # branching at letter k: the deeper-level images lie in the
            # disjoint base pieces of ladder level k
            bp = ladder[k]
            if bp.gap <= 0.0:
                if strict:
                    raise DisjointnessViolation(
                        f"pieces {word_str(wi)} and {word_str(wj)}: no base gap "
                        f"at branching level {k}")
                return 0.0, unresolved
            unresolved += 1
        resolved = d[np.isfinite(d) & (d > 0.0)]
        if len(resolved):
            min_gap = min(min_gap, float(resolved.min()))
    return min_gap, unresolved


def check_nesting(tower: RenormTower, approx: CantorApprox,
                  ladder: list[BasePieces], boundary_per_side: int = 128,
                  tol: float = 1e-9):
    """B^n_{w nu} inside B^(n-1)_w for every word (hull containment)."""
    parent = build_pieces(tower, approx.depth - 1, ladder=ladder[:approx.depth],
                          boundary_per_side=boundary_per_side, check=False)
    scale = max(abs(tower.cfg.domain.x_span), 1.0)
    for w, box in approx.pieces.items():
        pw = w[:-1]
        pbox = parent.pieces.get(pw)
        if pbox is None or not pbox.contains_box(box, tol=tol * scale):
            raise NestingViolation(f"piece {word_str(w)} escapes parent {word_str(pw)}")


def check_permutation(tower: RenormTower, approx: CantorApprox,
                      tol: float = 1e-9):
    """F(B_w) = B_{p(w)} through the sampled clouds; the wrap-around word is
    only required to meet the image of the zero word."""
    F = tower.level(0)
    n1 = approx.depth + 1
    ones = tuple([1] * n1)
    zeros = tuple([0] * n1)
    words = list(approx.pieces.keys())
    allpts = np.concatenate([approx.clouds[w] for w in words], axis=0)
    M = approx.clouds[words[0]].shape[0]
    img = F.evaluate(allpts)
    scale = max(abs(tower.cfg.domain.x_span), 1.0)
    for i, w in enumerate(words):
        chunk = img[i * M:(i + 1) * M]
        target = word_add_one(w)
        if target == zeros and w == ones:
            tb = approx.pieces[zeros]
            hull = _hull_of_cloud(chunk, 0.0)
            if not hull.intersects(tb):
                raise PermutationViolation(
                    f"wrap-around image of {word_str(w)} misses {word_str(zeros)}")
            continue
        tb = approx.pieces[target]
        ok = tb.contains(chunk[:, 0], chunk[:, 1], pad=tol * scale)
        if not ok.all():
            raise PermutationViolation(
                f"F(B_{word_str(w)}) not inside B_{word_str(target)} "
                f"({int((~ok).sum())} of {M} samples escape)")


# ---------------------------------------------------------------------------
# coding and chains
# ---------------------------------------------------------------------------

def build_chain(tower: RenormTower, word) -> ChainMap:
    """Psi_w^n = psi_{w_1}(F) o ... o psi_{w_n}(R^(n-1)F) as a ChainMap
    (stages stored in application order: the deepest letter acts first)."""
    n = len(word)
    if tower.tail_map is None and n > tower.depth:
        raise TowerTooShallow(f"chain of length {n} needs tower depth {n}")
    stages = []
    for k in range(n - 1, -1, -1):
        stages.extend(tower.psi_stage(k, word[k]).stages)
    return ChainMap(stages, tower.cfg.domain)


def code_to_point(tower: RenormTower, bits, ladder: list[BasePieces],
                  tol: float | None = None):
    """Cantor point coded by the word prefix: the chain image of the deepest
    base-piece center, together with a diameter bound of its piece."""
    n = len(bits) - 1
    if len(ladder) < n + 1:
        raise TowerTooShallow(f"ladder depth {len(ladder) - 1} < word depth {n}")
    base = ladder[n]
    bb = base.b0 if bits[-1] == 0 else base.b1
    cx, cu = bb.center()
    z = np.array([[cx, cu]])
    J = np.eye(2)
    for k in range(n - 1, -1, -1):
        stage = tower.psi_stage(k, bits[k])
        J = stage.jacobian(z)[0] @ J
        z = stage.evaluate(z)
    diam = math.hypot(bb.x_span, bb.u_span) * float(np.linalg.norm(J, 2))
    if tol is not None and diam > tol:
        raise TowerTooShallow(f"piece diameter bound {diam:.2e} > tol {tol:.2e}")
    return z[0], diam


# ---------------------------------------------------------------------------
# dimension and diameter law
# ---------------------------------------------------------------------------

def diameter_table(tower: RenormTower, depths, ladder=None,
                   boundary_per_side: int = 128):
    """(depth, count, max diameter, min gap) rows across the requested depths."""
    if ladder is None:
        ladder = base_piece_ladder(tower, max(depths),
                                   boundary_per_side=boundary_per_side)
    rows = []
    for n in depths:
        ca = build_pieces(tower, n, ladder=ladder[:n + 1],
                          boundary_per_side=boundary_per_side, check=False)
        rows.append({"depth": n, "count": len(ca.pieces),
                     "max_diam": ca.max_diameter, "min_gap": ca.min_gap})
    return rows


def box_dimension_from_table(rows) -> dict:
    """Box-counting slope of log N against log 1/eps with eps the max piece
    diameter per depth; least-squares with the residual reported."""
    eps = np.array([r["max_diam"] for r in rows])
    N = np.array([r["count"] for r in rows], dtype=float)
    x = np.log(1.0 / eps)
    y = np.log(N)
    A = np.column_stack([x, np.ones_like(x)])
    sol, res, _, _ = np.linalg.lstsq(A, y, rcond=None)
    fitted = A @ sol
    return {"dimension": float(sol[0]), "intercept": float(sol[1]),
            "residual": float(np.abs(fitted - y).max()),
            "log_inv_eps": [float(v) for v in x], "log_N": [float(v) for v in y]}


def box_dimension(tower: RenormTower, depths=range(4, 11), ladder=None) -> dict:
    rows = diameter_table(tower, list(depths), ladder=ladder)
    out = box_dimension_from_table(rows)
    out["rows"] = rows
    return out


def synthetic_ifs_dimension(rho: float, depths=range(4, 11)) -> float:
    """Validation harness: two affine line contractions of ratio rho run
    through the same regression; the exact answer is log 2 / log(1/rho)."""
    rows = []
    for n in depths:
        # intervals of generation n: 2^n pieces of length rho^n; the piece
        # count convention matches the dyadic family (2^(n+1) at depth n)
        rows.append({"depth": n, "count": 2 ** (n + 1), "max_diam": rho ** (n + 1)})
    return box_dimension_from_table(rows)["dimension"]


def diameter_decay_rate(rows) -> float:
    """Fitted per-level diameter decay factor over the table's depth span."""
    n0, n1 = rows[0]["depth"], rows[-1]["depth"]
    d0, d1 = rows[0]["max_diam"], rows[-1]["max_diam"]
    return float((d1 / d0) ** (1.0 / (n1 - n0)))


# ---------------------------------------------------------------------------
# Lyapunov exponent along adding-machine orbits
# ---------------------------------------------------------------------------

def lyapunov(F, x0, n: int) -> float:
    """chi = 2^-n log || DF^(2^n)(x0) ||, accumulated with periodic matrix
    renormalization so長 products never overflow."""
    z = as_points(x0)
    M = np.eye(2)
    acc = 0.0
    steps = 1 << n
    step = getattr(F, "step_with_jacobian", None)
    for _ in range(steps):
        if step is not None:
            z, J = step(z)
            M = J[0] @ M
        else:
            J = F.jacobian(z)[0]
            z = F.evaluate(z)
            M = J @ M
        nm = np.linalg.norm(M, 2)
        if nm > 1e12 or nm < 1e-12:
            acc += math.log(nm)
            M = M / nm
    return (acc + math.log(np.linalg.norm(M, 2))) / steps


def tower_log_norm_sup(tower: RenormTower, ladder, levels, grid: int = 12) -> float:
    """Observed sup of log ||DF_k|| over base pieces across tower levels."""
    sup = -np.inf
    for k in levels:
        F = tower.level(k)
        bp = ladder[k]
        for bb in (bp.b0, bp.b1):
            gx, gu = bb.grid(grid, grid)
            J = F.jacobian(np.column_stack([gx, gu]))
            norms = np.linalg.norm(J, 2, axis=(1, 2))
            sup = max(sup, float(np.log(norms).max()))
    return sup
