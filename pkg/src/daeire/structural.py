"""Signature matrix, offsets from the assignment problem, and prolongation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoPerfectMatchingError, NonSquareError
from .expr import (NEG_INF, Jet, highest_order, partial_derivative,
                   total_derivative)


def signature_matrix(equations, n: int) -> list:
    """sigma[i][j] = highest order of x_j in equation i, or -inf."""
    return [[highest_order(e, j) for j in range(n)] for e in equations]


@dataclass(frozen=True)
class StructuralSolution:
    c: tuple
    d: tuple
    transversal: tuple  # transversal[i] = column matched to row i

    @property
    def delta(self) -> int:
        return sum(self.d) - sum(self.c)

    @property
    def kc(self) -> int:
        return max(self.c, default=0)

    @property
    def kd(self) -> int:
        return max(self.d, default=0)


def _finite(v) -> bool:
    return v != NEG_INF


def _hungarian_min(cost):
    """Minimum-cost perfect matching; entries of None are forbidden.

    Shortest augmenting path with potentials, exact on Python integers.
    Returns row -> column, or None when no perfect matching exists.
    """
    n = len(cost)
    inf = float("inf")
    u = [0] * (n + 1)
    v = [0] * (n + 1)
    match = [0] * (n + 1)  # match[col] = row, 1-based, 0 = free
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta, j1 = inf, -1
            row = cost[i0 - 1]
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cij = row[j - 1]
                if cij is not None:
                    cur = cij - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                if minv[j] < delta:
                    delta, j1 = minv[j], j
            if j1 < 0 or delta == inf:
                return None
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    if minv[j] != inf:
                        minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    out = [0] * n
    for j in range(1, n + 1):
        out[match[j] - 1] = j - 1
    return out


def max_transversal(sigma):
    """Maximum-weight transversal, lexicographically smallest among ties.

    Ties are broken exactly by appending base-(n+1) digits below the weight
    scale, which Python integers carry without rounding.
    """
    n = len(sigma)
    if n == 0:
        return []
    base = n + 1
    scale = base ** n
    cost = []
    for i, row in enumerate(sigma):
        if len(row) != n:
            raise NonSquareError(n, len(row))
        digit = base ** (n - 1 - i)
        cost.append([None if not _finite(s) else -(int(s) * scale) + j * digit
                     for j, s in enumerate(row)])
    match = _hungarian_min(cost)
    if match is None:
        raise NoPerfectMatchingError()
    return match


def solve_assignment(sigma) -> StructuralSolution:
    """Transversal plus the elementwise-smallest offsets (c, d)."""
    n = len(sigma)
    if n == 0:
        raise NonSquareError(0, 0)
    tr = max_transversal(sigma)
    c = [0] * n
    while True:
        d = []
        for j in range(n):
            col = [sigma[i][j] + c[i] for i in range(n) if _finite(sigma[i][j])]
            d.append(int(max(col)) if col else 0)
        new_c = [d[tr[i]] - int(sigma[i][tr[i]]) for i in range(n)]
        if new_c == c:
            break
        c = new_c
    return StructuralSolution(tuple(c), tuple(d), tuple(tr))


def delta_bruteforce(sigma) -> int:
    """Largest transversal sum by enumeration; small n only."""
    from itertools import permutations
    n = len(sigma)
    best = None
    for perm in permutations(range(n)):
        vals = [sigma[i][perm[i]] for i in range(n)]
        if all(_finite(v) for v in vals):
            s = sum(vals)
            best = s if best is None else max(best, s)
    return best


# ---------------------------------------------------------------- prolongation

@dataclass
class ProlongedSystem:
    """A square DAE prolonged by its offsets, plus constraints carried along.

    ``rows[p]`` lists ``(equation index, times differentiated, expression)``
    for block p.  The top block ``rows[kc]`` has one row per equation, in
    equation order unless ``row_perm`` says otherwise.
    """

    equations: list
    names: list
    sol: StructuralSolution
    blocks: list
    carried: list = field(default_factory=list)
    row_perm: list | None = None
    col_perm: list | None = None

    @property
    def n(self) -> int:
        return len(self.equations)

    @property
    def kc(self) -> int:
        return self.sol.kc

    @property
    def top(self) -> list:
        rows = [e for (_, _, e) in self.blocks[-1]]
        if self.row_perm is not None:
            rows = [rows[i] for i in self.row_perm]
        return rows

    @property
    def top_rows(self) -> list:
        rows = list(self.blocks[-1])
        if self.row_perm is not None:
            rows = [rows[i] for i in self.row_perm]
        return rows

    @property
    def leading(self) -> list:
        cols = [Jet(j, self.sol.d[j]) for j in range(self.n)]
        if self.col_perm is not None:
            cols = [cols[j] for j in self.col_perm]
        return cols

    @property
    def lower(self) -> list:
        return [e for block in self.blocks[:-1] for (_, _, e) in block]

    @property
    def constraints(self) -> list:
        return list(self.carried) + self.lower

    def state_jets(self) -> list:
        """Jets x_j^(k) with k < d_j: the free coordinates of a point."""
        return [Jet(j, k) for j in range(self.n) for k in range(self.sol.d[j])]

    def all_equations(self) -> list:
        return [e for block in self.blocks for (_, _, e) in block]


def prolong(equations, names, sol: StructuralSolution, carried=()) -> ProlongedSystem:
    n = len(equations)
    kc = sol.kc
    derivs = []
    for i, e in enumerate(equations):
        seq = [e]
        for _ in range(sol.c[i]):
            seq.append(total_derivative(seq[-1]))
        derivs.append(seq)
    blocks = []
    for p in range(kc + 1):
        block = []
        for i in range(n):
            k = p + sol.c[i] - kc
            if k >= 0:
                block.append((i, k, derivs[i][k]))
        blocks.append(block)
    return ProlongedSystem(list(equations), list(names), sol, blocks, list(carried))


def top_jacobian(ps: ProlongedSystem, extra=()) -> list:
    """Symbolic Jacobian of the top block over the leading jets."""
    cols = ps.leading + list(extra)
    return [[partial_derivative(e, v) for v in cols] for e in ps.top]


def delta_of_prolonged(ps: ProlongedSystem) -> int:
    return sum(ps.sol.d) - len(ps.constraints)


def analyze(equations, names, carried=()):
    """Signature, offsets and prolongation in one call."""
    n = len(names)
    if len(equations) != n or n == 0:
        raise NonSquareError(len(equations), n)
    sigma = signature_matrix(equations, n)
    sol = solve_assignment(sigma)
    return sigma, sol, prolong(equations, names, sol, carried)


def sigma_array(sigma) -> np.ndarray:
    return np.array(sigma, dtype=float)
