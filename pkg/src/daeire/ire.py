"""Degeneration detection and index reduction by embedding.

When the top-block Jacobian has rank r < n on a constraint component, the
leading jets are split into r replaced ones (s) and n - r frozen ones (y).
The embedded square system is

    {f(s, y, z), f(u, xi, z), g(u, xi, z)}

where f are the first r sorted top-block rows, g the remaining ones, u fresh
dependent variables and xi random constants.  The old constraints are
carried along.  Passes repeat until the Jacobian is nonsingular.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (ConvergenceError, MaxPassesError, NoPerfectMatchingError,
                     NoSolutionError)
from .expr import Const, Jet, Point, evaluate, lambdify, lambdify_jacobian, substitute
from .numkernel import hqr_permutations, newton_refine, svd_rank
from .structural import (NEG_INF, ProlongedSystem, StructuralSolution,
                         delta_of_prolonged, max_transversal, prolong,
                         signature_matrix, solve_assignment, top_jacobian)

log = logging.getLogger(__name__)


@dataclass
class EmbeddingRecord:
    replaced: list  # (u jet, replaced leading jet)
    frozen: list    # (frozen leading jet, xi value)
    generation: int


@dataclass
class IrePassLog:
    n: int
    r: int
    delta_before: int
    delta_after: int
    used_shortcut_duals: bool
    redundancy_suspected: bool = False
    row_perm: list = field(default_factory=list)
    col_perm: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"n": self.n, "r": self.r, "delta": self.delta_after,
                "delta_before": self.delta_before,
                "used_shortcut_duals": self.used_shortcut_duals,
                "redundancy_suspected": self.redundancy_suspected}


@dataclass
class IreResult:
    system: ProlongedSystem
    point: Point
    passes: list
    records: list
    n_original: int

    @property
    def delta(self) -> int:
        return delta_of_prolonged(self.system)


# ------------------------------------------------------------ numeric views

class NumericSystem:
    """Compiled residuals and Jacobians of a prolonged system.

    Coordinates are split into state jets (every jet below the leading layer,
    plus any jet the constraints mention) and the leading jets.
    """

    def __init__(self, ps: ProlongedSystem):
        self.ps = ps
        self.leading = ps.leading
        lead = set(self.leading)
        jets = set(ps.state_jets())
        for e in ps.top + ps.constraints:
            jets |= e.jets
        self.state = sorted(jets - lead)
        self.slots = self.state + self.leading
        self.ns = len(self.state)
        top, cons = ps.top, ps.constraints
        self.n_cons = len(cons)
        self._top_f = lambdify(top, self.slots)
        self._top_J = lambdify_jacobian(top, self.leading, self.slots)
        self._con_f = lambdify(cons, self.slots)
        self._con_J = lambdify_jacobian(cons, self.state, self.slots)

    def vector(self, p: Point, fill: float = 0.0) -> np.ndarray:
        return np.array([p.values.get(v, fill) for v in self.slots], dtype=float)

    def to_point(self, t: float, x: np.ndarray, base: Point | None = None) -> Point:
        vals = dict(base.values) if base is not None else {}
        vals.update(zip(self.slots, map(float, x)))
        return Point(t, vals)

    def top_residual(self, t, x):
        return self._top_f(t, x)

    def top_jacobian(self, t, x):
        return self._top_J(t, x)

    def con_residual(self, t, x):
        return self._con_f(t, x)

    def con_jacobian(self, t, x):
        return self._con_J(t, x)

    def solve_leading(self, t, x, abstol=1e-10, max_iter=50, strict=True):
        """Newton on the top block for the leading jets, state held fixed."""
        x = np.array(x, dtype=float)
        ns = self.ns

        def F(z):
            x[ns:] = z
            return self._top_f(t, x)

        def J(z):
            x[ns:] = z
            return self._top_J(t, x)

        try:
            z = newton_refine(F, J, x[ns:].copy(), abstol=abstol, max_iter=max_iter)
        except ConvergenceError:
            if strict:
                raise
            # inconsistent top block: keep the least-squares iterate
            z = x[ns:].copy()
            for _ in range(max_iter):
                step, *_ = np.linalg.lstsq(J(z), -F(z), rcond=None)
                z = z + step
                if np.linalg.norm(step) <= 1e-13 * (1 + np.linalg.norm(z)):
                    break
        x[ns:] = z
        return x

    def project(self, t, x, abstol=1e-6, max_iter=100, xtol=1e-12, free=None):
        """Minimum-norm Newton projection of the state onto the constraints.

        With ``free`` (a collection of state jets) only those coordinates move.
        """
        x = np.array(x, dtype=float)
        if self.n_cons == 0:
            return x
        ns = self.ns
        idx = np.arange(ns) if free is None else \
            np.array([i for i, v in enumerate(self.state) if v in free], dtype=int)
        if idx.size == 0:
            raise ConvergenceError("no free coordinates to project")

        def F(z):
            x[idx] = z
            return self._con_f(t, x)

        def J(z):
            x[idx] = z
            return self._con_J(t, x)[:, idx]

        x[idx] = newton_refine(F, J, x[idx].copy(), abstol=abstol,
                               max_iter=max_iter, xtol=xtol)
        return x

    def constraint_rank(self, t, x, abstol=1e-6) -> int:
        if self.n_cons == 0:
            return 0
        return svd_rank(self._con_J(t, x), abstol)


def complete_point(ps: ProlongedSystem, p: Point, abstol: float = 1e-6,
                   project: bool = True, prefer=None) -> Point:
    """Project p onto the constraints and supply missing leading values.

    When ``prefer`` is given, the projection first tries to move only those
    jets (plus any the point lacks), so coordinates that were already
    consistent stay put; near multiple roots a full minimum-norm step would
    drift off the variety by the square root of the residual tolerance.
    """
    num = NumericSystem(ps)
    x = num.vector(p)
    if project:
        done = False
        if prefer is not None:
            free = set(prefer) | {v for v in num.state if v not in p}
            try:
                x = num.project(p.t, x, abstol=abstol, free=free)
                done = True
            except ConvergenceError:
                x = num.vector(p)
        if not done:
            x = num.project(p.t, x, abstol=abstol)
    if not all(v in p for v in num.leading):
        x = num.solve_leading(p.t, x, strict=False)
    return num.to_point(p.t, x, base=p)


# ------------------------------------------------------------ IRE operations

def numeric_jacobian(J, p: Point) -> np.ndarray:
    return np.array([[evaluate(e, p) for e in row] for row in J], dtype=float)


def detect_rank(J, p: Point, abstol: float = 1e-6) -> int:
    """Numerical rank of the symbolic Jacobian J evaluated at p."""
    if not J:
        return 0
    return svd_rank(numeric_jacobian(J, p), abstol)


def sort_top_block(ps: ProlongedSystem, p: Point, r: int,
                   abstol: float = 1e-6) -> ProlongedSystem:
    """Permute top rows and leading columns so J[:r, :r] is nonsingular at p."""
    base = replace(ps, row_perm=None, col_perm=None)
    Jn = numeric_jacobian(top_jacobian(base), p)
    rows, cols = hqr_permutations(Jn, r, abstol)
    return replace(ps, row_perm=rows, col_perm=cols)


def _fresh_names(names, count):
    out, k = [], 1
    taken = set(names)
    while len(out) < count:
        cand = f"u{k}"
        if cand not in taken:
            out.append(cand)
            taken.add(cand)
        k += 1
    return out


def embed(ps: ProlongedSystem, r: int, seed: int = 0, generation: int = 1):
    """Build the embedded system; returns (equations, names, carried, record)."""
    n = ps.n
    top, lead = ps.top, ps.leading
    s, y = lead[:r], lead[r:]
    rng = np.random.default_rng(seed)
    xi = rng.uniform(-1.0, 1.0, n - r)
    base = len(ps.names)
    u = [Jet(base + i, 0) for i in range(r)]
    sub = {sj: ui for sj, ui in zip(s, u)}
    sub.update({yj: Const(float(v)) for yj, v in zip(y, xi)})
    eqs = list(top[:r]) + [substitute(e, sub) for e in top]
    names = list(ps.names) + _fresh_names(ps.names, r)
    rec = EmbeddingRecord(list(zip(u, s)), [(yj, float(v)) for yj, v in zip(y, xi)],
                          generation)
    return eqs, names, ps.constraints, rec


def shortcut_duals(sol: StructuralSolution, r: int, equations, ps=None):
    """Offsets (c, d) = ((0_r, 1_n), (d, 1_r)) for an embedded system, if valid.

    Valid when every old top-block row mentions some x_j^(d_j - 1) and the
    entries attaining the bound d_j - c_i admit a perfect matching.
    """
    n = len(sol.d)
    if ps is not None:
        below = {Jet(j, sol.d[j] - 1) for j in range(n) if sol.d[j] >= 1}
        if any(not (e.jets & below) for e in ps.top):
            return None
    c = (0,) * r + (1,) * n
    d = tuple(sol.d) + (1,) * r
    N = n + r
    if len(equations) != N:
        return None
    sigma = signature_matrix(equations, N)
    tight = []
    for i in range(N):
        row = []
        for j in range(N):
            sij = sigma[i][j]
            if sij != NEG_INF and sij > d[j] - c[i]:
                return None
            row.append(0 if sij != NEG_INF and sij == d[j] - c[i] else NEG_INF)
        tight.append(row)
    try:
        tr = max_transversal(tight)
    except NoPerfectMatchingError:
        return None
    return StructuralSolution(c, d, tuple(tr))


def lift_point(p: Point, rec: EmbeddingRecord) -> Point:
    """Give each u the value of the leading jet it replaced."""
    if rec is None or not rec.replaced:
        return p
    return p.with_values({u: p[s] for u, s in rec.replaced})


# ------------------------------------------------------------------ the loop

def ire_loop(equations, names, p: Point, abstol: float = 1e-6, seed: int = 0,
             max_passes: int = 10, sol: StructuralSolution | None = None,
             project: bool = True) -> IreResult:
    """Embed until the top-block Jacobian is nonsingular at the tracked point."""
    n_orig = len(names)
    if sol is None:
        sol = solve_assignment(signature_matrix(equations, len(names)))
    ps = prolong(equations, names, sol)
    p = complete_point(ps, p, abstol, project=project)
    delta = delta_of_prolonged(ps)
    passes, records = [], []
    for gen in range(1, max_passes + 2):
        n = ps.n
        J = top_jacobian(ps)
        r = detect_rank(J, p, abstol)
        log.info("pass %d: n=%d r=%d delta=%d", gen - 1, n, r, delta)
        if r == n:
            return IreResult(ps, p, passes, records, n_orig)
        if gen > max_passes:
            raise MaxPassesError(f"still singular after {max_passes} passes "
                                 f"(n={n}, r={r})")
        num = NumericSystem(ps)
        redundant = num.constraint_rank(p.t, num.vector(p), abstol) < num.n_cons
        # delta - (n - r) == 0 still allows isolated trajectories
        if delta - (n - r) < 0 and not redundant:
            raise NoSolutionError(
                f"delta - (n - r) = {delta} - {n - r} < 0: "
                "this DAE does not have a solution on this component")
        ps = sort_top_block(ps, p, r, abstol)
        eqs, new_names, carried, rec = embed(ps, r, seed + gen - 1, gen)
        new_sol = shortcut_duals(ps.sol, r, eqs, ps)
        shortcut = new_sol is not None
        if not shortcut:
            new_sol = solve_assignment(signature_matrix(eqs, len(new_names)))
        new_ps = prolong(eqs, new_names, new_sol, carried)
        fresh = {v for v in NumericSystem(new_ps).state if v.var >= len(ps.names)}
        p = complete_point(new_ps, lift_point(p, rec), abstol, prefer=fresh)
        new_delta = delta_of_prolonged(new_ps)
        suspect = new_delta > delta - (n - r)
        if suspect:
            log.warning("redundancy_suspected: delta %d -> %d with n-r=%d",
                        delta, new_delta, n - r)
        passes.append(IrePassLog(n, r, delta, new_delta, shortcut, suspect,
                                 list(ps.row_perm), list(ps.col_perm)))
        records.append(rec)
        ps, delta = new_ps, new_delta
    raise MaxPassesError(f"still singular after {max_passes} passes")
