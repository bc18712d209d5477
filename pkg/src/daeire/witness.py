"""Real witness points on constraint varieties.

Critical points of the squared distance to a random point are computed by
total-degree homotopy continuation of the Lagrange system, or of a penalty
system when the Lagrange formulation gives nothing usable.  All paths are
tracked together as columns of one array.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyWitnessError, NonPolynomialError
from .expr import (Const, Jet, T, add, degree, evaluate, is_polynomial_in_jets,
                   lambdify, lambdify_jacobian, mul, partial_derivative,
                   substitute, Point)
from .numkernel import newton_refine, singular_values, svd_rank

log = logging.getLogger(__name__)

MULTIPLIER_BASE = 10_000  # jets with var >= this index are multipliers


@dataclass
class PolySystem:
    equations: list
    unknowns: list
    t0: float = 0.0

    def __post_init__(self):
        fixed = []
        for e in self.equations:
            e = substitute(e, {T: Const(self.t0)})
            if not is_polynomial_in_jets(e):
                raise NonPolynomialError(f"equation is not polynomial: {e}")
            fixed.append(e)
        self.equations = fixed
        self.unknowns = list(self.unknowns)

    @property
    def k(self) -> int:
        return len(self.equations)

    @property
    def n(self) -> int:
        return len(self.unknowns)

    def residual_fn(self):
        f = lambdify(self.equations, self.unknowns)
        return lambda x: f(self.t0, x)

    def jacobian_fn(self):
        J = lambdify_jacobian(self.equations, self.unknowns, self.unknowns)
        return lambda x: J(self.t0, x)

    def degrees(self) -> list:
        return [degree(e) for e in self.equations]


@dataclass
class WitnessSet:
    points: list
    unknowns: list
    residuals: list
    sigma_min: list
    ranks: list
    seed: int
    a: np.ndarray
    formulation: str = "lagrange"
    components: list = field(default_factory=list)
    failed_paths: int = 0
    t0: float = 0.0

    def __len__(self):
        return len(self.points)

    def as_point(self, i: int) -> Point:
        return Point(self.t0, dict(zip(self.unknowns, map(float, self.points[i]))))

    def representatives(self) -> list:
        """Index of the first point of each component label, label order."""
        seen = {}
        for i, lab in enumerate(self.components):
            seen.setdefault(lab, i)
        return [seen[lab] for lab in sorted(seen)]


# --------------------------------------------------------------- formulations

def _multipliers(k: int) -> list:
    return [Jet(MULTIPLIER_BASE + j, 0) for j in range(k)]


def lagrange_system(f: PolySystem, a) -> PolySystem:
    """{f, sum_j lambda_j grad f_j + x - a} in the unknowns (x, lambda)."""
    a = np.asarray(a, dtype=float)
    lam = _multipliers(f.k)
    eqs = list(f.equations)
    for i, xi in enumerate(f.unknowns):
        terms = [mul(lj, partial_derivative(fj, xi))
                 for lj, fj in zip(lam, f.equations)]
        eqs.append(add(*terms, xi, -float(a[i])))
    return PolySystem(eqs, list(f.unknowns) + lam, f.t0)


def penalty_system(f: PolySystem, a, beta: float = 1e5) -> PolySystem:
    """x - a + beta * sum_j f_j grad f_j: the gradient of the penalized distance."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    a = np.asarray(a, dtype=float)
    eqs = []
    for i, xi in enumerate(f.unknowns):
        terms = [mul(fj, partial_derivative(fj, xi)) for fj in f.equations]
        eqs.append(add(xi, -float(a[i]), mul(beta, add(*terms))))
    return PolySystem(eqs, list(f.unknowns), f.t0)


# ---------------------------------------------------------------- continuation

@dataclass
class TrackResult:
    endpoints: np.ndarray  # (paths, n) complex
    finished: np.ndarray   # bool per path
    failed: int


def _batched_solve(A, b):
    """Solve A[p] x[p] = b[p]; singular slices fall back to least squares."""
    try:
        return np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.empty_like(b)
        for p in range(A.shape[0]):
            out[p] = np.linalg.lstsq(A[p], b[p], rcond=None)[0]
        return out


def track_all_roots(sys: PolySystem, seed: int = 0, max_steps: int = 10_000,
                    h_min: float = 1e-6, h_max: float = 0.1,
                    tol: float = 1e-10) -> TrackResult:
    """All isolated roots reachable from the total-degree start system."""
    n = sys.n
    if sys.k != n:
        raise ValueError(f"homotopy needs a square system, got {sys.k}x{n}")
    degs = [max(dg, 1) for dg in sys.degrees()]
    rng = np.random.default_rng(seed)
    angle = rng.uniform(0, 2 * np.pi)
    gamma = np.exp(1j * angle)

    grids = np.meshgrid(*[np.exp(2j * np.pi * np.arange(dg) / dg) for dg in degs],
                        indexing="ij")
    x = np.stack([g.ravel() for g in grids]).astype(complex)  # (n, P)
    P = x.shape[1]
    F0, JF0 = sys.residual_fn(), sys.jacobian_fn()
    # balance each target equation against the unit-size start system
    probe = np.exp(2j * np.pi * rng.uniform(size=(n, 8)))
    weight = np.max(np.abs(F0(probe)), axis=1)
    weight = np.where(weight > 0, 1.0 / np.where(weight > 0, weight, 1.0), 1.0)

    def F(x):
        return weight.reshape((n,) + (1,) * (x.ndim - 1)) * F0(x)

    def JF(x):
        return weight.reshape((n, 1) + (1,) * (x.ndim - 1)) * JF0(x)

    dvec = np.array(degs)[:, None]

    def G(x):
        return x ** dvec - 1.0

    def JG(x):
        J = np.zeros((n, n) + x.shape[1:], dtype=complex)
        idx = np.arange(n)
        J[idx, idx] = dvec * x ** (dvec - 1)
        return J

    def H(x, s):
        return (1 - s) * gamma * G(x) + s * F(x)

    def Hx(x, s):
        return ((1 - s) * gamma * JG(x) + s * JF(x)).transpose(2, 0, 1)

    def Hs(x):
        return F(x) - gamma * G(x)

    s = np.zeros(P)
    h = np.full(P, 0.02)
    active = np.ones(P, dtype=bool)
    done = np.zeros(P, dtype=bool)
    steps = np.zeros(P, dtype=int)
    good = np.zeros(P, dtype=int)
    failed = 0

    while active.any():
        idx = np.flatnonzero(active)
        xa, sa, ha = x[:, idx], s[idx], h[idx]
        ha = np.minimum(ha, 1.0 - sa)
        # Euler predictor
        dx = _batched_solve(Hx(xa, sa), -Hs(xa).T).T
        s_new = sa + ha
        xp = xa + ha * dx
        # Newton corrector, three iterations; the first update must be small
        # relative to the point so that the path cannot jump
        for it in range(3):
            delta = _batched_solve(Hx(xp, s_new), -H(xp, s_new).T).T
            xp = xp + delta
            size = np.linalg.norm(delta, axis=0)
            scale = 1.0 + np.linalg.norm(xp, axis=0)
            if it == 0:
                first = size
        ok = (size <= 1e-8 * scale) & (first <= 0.1 * scale) \
            & np.all(np.isfinite(xp), axis=0)
        # accept
        acc = idx[ok]
        x[:, acc] = xp[:, ok]
        s[acc] = s_new[ok]
        good[acc] += 1
        grow = acc[good[acc] >= 3]
        h[grow] = np.minimum(h[grow] * 2.0, h_max)
        good[grow] = 0
        # reject
        rej = idx[~ok]
        h[rej] = h[rej] * 0.5
        good[rej] = 0
        steps[idx] += 1

        finished = idx[s[idx] >= 1.0]
        done[finished] = True
        active[finished] = False
        norms = np.linalg.norm(x[:, idx], axis=0)
        bad = idx[(h[idx] < h_min) | (steps[idx] > max_steps) | (norms > 1e8)
                  | ~np.all(np.isfinite(x[:, idx]), axis=0)]
        bad = bad[active[bad]]
        if bad.size:
            # a path stalled next to s = 1 is handed to Newton on the target
            near = bad[(s[bad] > 1.0 - 1e-3) & (norms[np.isin(idx, bad)] < 1e8)]
            if near.size:
                z = x[:, near]
                for _ in range(30):
                    z = z + _batched_solve(JF(z).transpose(2, 0, 1), -F(z).T).T
                x[:, near] = z
                done[near] = True
            failed += bad.size - near.size
            active[bad] = False

    # polish endpoints on the target system
    ends = x[:, done]
    for _ in range(5):
        if ends.size == 0:
            break
        delta = _batched_solve(JF(ends).transpose(2, 0, 1), -F(ends).T).T
        ends = ends + delta
    res = np.max(np.abs(F(ends)), axis=0) if ends.size else np.zeros(0)
    keep = np.isfinite(res) & (res <= tol * (1.0 + np.max(np.abs(ends), axis=0)
                                             if ends.size else 1.0))
    if failed:
        log.warning("%d of %d homotopy paths failed", failed, P)
    return TrackResult(ends[:, keep].T, done, failed)


# ------------------------------------------------------------- witness points

def _real_points(endpoints, n_keep: int, imag_tol: float = 1e-6):
    pts = []
    for z in endpoints:
        if np.all(np.abs(z.imag) < imag_tol):
            pts.append(z.real[:n_keep].copy())
    return pts


def _dedupe(points, tol: float = 1e-8):
    points = sorted(points, key=lambda p: tuple(p))
    out = []
    for p in points:
        if all(np.max(np.abs(p - q)) > tol for q in out):
            out.append(p)
    return out


def _refine_all(f: PolySystem, pts, abstol: float):
    if f.k == 0:
        return list(pts)
    F, J = f.residual_fn(), f.jacobian_fn()
    out = []
    for p in pts:
        try:
            q = newton_refine(F, J, p, abstol=abstol, max_iter=100, xtol=1e-13)
        except Exception:
            continue
        out.append(q)
    return out


def _candidates(f, sys, seed, abstol):
    tr = track_all_roots(sys, seed)
    real = _real_points(tr.endpoints, f.n)
    return _dedupe(_refine_all(f, real, abstol)), tr.failed


def witness_points(f: PolySystem, seed: int = 0, abstol: float = 1e-6,
                   beta: float = 1e5, classify: bool = True) -> WitnessSet:
    """At least one real point per component of the constraint variety."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(f.n)
    if f.k == 0:
        pts, failed, form = [a.copy()], 0, "empty"
    else:
        pts, failed = _candidates(f, lagrange_system(f, a), seed, abstol)
        form = "lagrange"
        ranks = [_rank(f, p, abstol) for p in pts]
        if not pts or all(r < f.k for r in ranks):
            log.info("Lagrange formulation unusable; retrying with penalty %g", beta)
            pts, failed = _candidates(f, penalty_system(f, a, beta), seed, abstol)
            form = "penalty"
    if not pts:
        raise EmptyWitnessError("no real witness points were found")
    ws = _build(f, pts, a, seed, form, failed, abstol)
    if classify:
        ws.components = classify_components(f, ws.points, a, abstol=abstol, seed=seed)
    return ws


def penalty_points(f: PolySystem, a, beta: float = 1e5, seed: int = 0,
                   abstol: float = 1e-6, refine: bool = True) -> list:
    """Real critical points of the penalized distance, optionally refined onto f."""
    sys = penalty_system(f, a, beta)
    tr = track_all_roots(sys, seed)
    real = _real_points(tr.endpoints, f.n)
    if refine:
        real = _refine_all(f, real, abstol)
    return _dedupe(real)


def _rank(f: PolySystem, p, abstol: float) -> int:
    if f.k == 0:
        return 0
    return svd_rank(f.jacobian_fn()(p), abstol)


def _build(f, pts, a, seed, form, failed, abstol) -> WitnessSet:
    F = f.residual_fn() if f.k else None
    J = f.jacobian_fn() if f.k else None
    # nearest to the random point first
    pts = sorted(pts, key=lambda p: float(np.linalg.norm(p - a)))
    res, smin, ranks = [], [], []
    for p in pts:
        if f.k:
            res.append(float(np.max(np.abs(F(p)))))
            sv = singular_values(J(p))
            smin.append(float(sv[-1]) if sv.size >= f.k else 0.0)
            ranks.append(svd_rank(J(p), abstol))
        else:
            res.append(0.0)
            smin.append(float("inf"))
            ranks.append(0)
    return WitnessSet(pts, list(f.unknowns), res, smin, ranks, seed, a, form,
                      [], failed, f.t0)


def membership_test(f, W: WitnessSet, abstol: float = 1e-6) -> bool:
    """True when every expression of f vanishes at every witness point."""
    if len(W) == 0:
        raise EmptyWitnessError("witness set is empty")
    for i in range(len(W)):
        p = W.as_point(i)
        for e in f:
            if abs(evaluate(substitute(e, {T: Const(W.t0)}), p)) > abstol:
                return False
    return True


# ---------------------------------------------------------- component labels

def _walk(F, J, p, q, abstol, rng, max_steps=400):
    """Try to move from p to q inside the zero set without meeting a singular point."""
    x = np.array(p, dtype=float)
    k = len(F(x))
    J0 = J(x)
    scale = max(1.0, float(np.linalg.norm(J0)))
    h = 0.1 * max(1.0, float(np.linalg.norm(q - p)))
    kicks = 0
    for _ in range(max_steps):
        d = q - x
        dist = float(np.linalg.norm(d))
        if dist < 1e-7 * (1.0 + np.linalg.norm(q)):
            return True
        Jx = J(x)
        pinv = np.linalg.pinv(Jx)
        v = d - pinv @ (Jx @ d)
        vn = float(np.linalg.norm(v))
        if vn < 1e-3 * dist:
            if dist < 1e-3:
                v, vn = d, dist
            elif kicks < 3:
                kicks += 1
                w = rng.standard_normal(x.size)
                w -= pinv @ (Jx @ w)
                v = w / max(np.linalg.norm(w), 1e-300) * min(dist, 1.0)
                vn = float(np.linalg.norm(v))
            else:
                return False
        if vn == 0.0:
            # no tangent directions: isolated points are never joined
            return False
        step = v * min(1.0, h / vn)
        target = x + step
        try:
            y = newton_refine(F, J, target, abstol=abstol * 1e-3, max_iter=20)
        except Exception:
            h *= 0.5
            if h < 1e-8:
                return False
            continue
        jump = float(np.linalg.norm(y - target))
        if jump > 0.5 * float(np.linalg.norm(step)) + 1e-9:
            h *= 0.5
            if h < 1e-8:
                return False
            continue
        Jy = J(y)
        sv = singular_values(Jy)
        if sv.size < k or sv[-1] < 1e-6 * scale:
            return False
        if np.linalg.det(Jx @ Jy.T) <= 0:
            return False
        x = y
        h = min(h * 1.5, 0.25 * max(1.0, dist))
    return False


def classify_components(f: PolySystem, points, a=None, abstol: float = 1e-6,
                        seed: int = 0) -> list:
    """Label points so that points joined by a regular path share a label.

    Rank-deficient points get their own labels unless every point is
    rank-deficient.  Labels are numbered in the order of ``points``.
    """
    if f.k == 0 or len(points) <= 1:
        return [0] * len(points)
    F, J = f.residual_fn(), f.jacobian_fn()
    rng = np.random.default_rng(seed + 7919)
    regular = [svd_rank(J(p), abstol) == f.k for p in points]
    labels = [-1] * len(points)
    reps = []
    for i, p in enumerate(points):
        if regular[i]:
            for lab, j in enumerate(reps):
                if regular[j] and (_walk(F, J, p, points[j], abstol, rng)
                                   or _walk(F, J, points[j], p, abstol, rng)):
                    labels[i] = lab
                    break
        if labels[i] < 0:
            labels[i] = len(reps)
            reps.append(i)
    return labels


def drop_singular(ws: WitnessSet) -> WitnessSet:
    """Remove rank-deficient points when regular ones exist."""
    full = [i for i, r in enumerate(ws.ranks) if r == max(ws.ranks)]
    if len(full) == len(ws.points):
        return ws
    keep = full
    return WitnessSet([ws.points[i] for i in keep], ws.unknowns,
                      [ws.residuals[i] for i in keep], [ws.sigma_min[i] for i in keep],
                      [ws.ranks[i] for i in keep], ws.seed, ws.a, ws.formulation,
                      [ws.components[i] for i in keep] if ws.components else [],
                      ws.failed_paths, ws.t0)
