import itertools
import math
from dataclasses import replace

import numpy as np
import pytest

from daeire.errors import MaxPassesError, NoSolutionError
from daeire.expr import Const, Jet, Point, evaluate
from daeire.ire import (NumericSystem, complete_point, detect_rank, embed,
                        ire_loop, lift_point, numeric_jacobian, shortcut_duals,
                        sort_top_block)
from daeire.model_io import parse_model
from daeire.solver import initial_points
from daeire.structural import (analyze, prolong, signature_matrix,
                               solve_assignment, top_jacobian)

from conftest import model, start_point


def witness_starts(name, seed=0):
    m = model(name)
    _, _, ps = analyze(m.equations, m.names)
    _, starts = initial_points(m, ps, m.t0, seed)
    return m, ps, starts


def fixture_start(name):
    m = model(name)
    _, _, ps = analyze(m.equations, m.names)
    return m, ps, complete_point(ps, start_point(name, m))


def pass_shape(res):
    return [(lg.n, lg.r) for lg in res.passes]


# ------------------------------------------------------------ rank detection

def test_example4_jacobian_degenerates_on_the_parabola():
    m, ps, starts = witness_starts("example4")
    J = top_jacobian(ps)
    for _, p in starts:
        p = complete_point(ps, p)
        assert np.linalg.svd(numeric_jacobian(J, p), compute_uv=False)[-1] < 1e-8
        assert detect_rank(J, p) == 1
    # det = 2y - 2x^2 is not identically zero
    off = Point(0.0, {Jet(0, 0): 1.0, Jet(1, 0): 3.0})
    assert abs(np.linalg.det(numeric_jacobian(J, off))) > 1


def test_beam_rank_depends_on_component():
    m, ps, starts = witness_starts("beam")
    J = top_jacobian(ps)
    seen = set()
    for _, p in starts:
        p = complete_point(ps, p)
        same_sign = p[Jet(0, 0)] * p[Jet(1, 0)] > 0
        assert detect_rank(J, p) == (2 if same_sign else 1)
        seen.add(same_sign)
    assert seen == {True, False}


def test_identity_jacobian_has_full_rank():
    J = [[Const(1), Const(0)], [Const(0), Const(1)]]
    assert detect_rank(J, Point(0.0)) == 2
    assert detect_rank([], Point(0.0)) == 0


@pytest.mark.parametrize("name, n, r", [("amplifier", 8, 5), ("pendulum", 5, 4),
                                        ("ring", 15, 14)])
def test_rank_at_fixture_points(name, n, r):
    m, ps, p = fixture_start(name)
    assert ps.n == n
    assert detect_rank(top_jacobian(ps), p) == r


# ------------------------------------------------------------ sorting

def test_sorting_an_already_sorted_block_is_identity():
    m = parse_model("var x, y;\nx' - y = 0;\ny' + x = 0;")
    _, _, ps = analyze(m.equations, m.names)
    s = sort_top_block(ps, Point(0.0, {Jet(0, 0): 0.0, Jet(1, 0): 1.0}), 2)
    assert s.row_perm == [0, 1] and s.col_perm == [0, 1]


def test_amplifier_sorted_block_is_nonsingular():
    m, ps, p = fixture_start("amplifier")
    s = sort_top_block(ps, p, 5)
    lead = numeric_jacobian(top_jacobian(s), p)[:5, :5]
    assert np.linalg.matrix_rank(lead, tol=1e-6 * max(1, np.abs(lead).max())) == 5


def test_ring_sorting_drops_a_row_of_the_dependency():
    m, ps, p = fixture_start("ring")
    J = numeric_jacobian(top_jacobian(ps), p)
    U, _, Vt = np.linalg.svd(J)
    rows_dep = set(np.flatnonzero(np.abs(U[:, -1]) > 1e-3))
    cols_dep = set(np.flatnonzero(np.abs(Vt[-1]) > 1e-3))
    assert rows_dep == {2, 3, 4, 5}
    s = sort_top_block(ps, p, 14)
    assert s.row_perm[14] in rows_dep and s.col_perm[14] in cols_dep
    lead = numeric_jacobian(top_jacobian(s), p)[:14, :14]
    assert np.linalg.svd(lead, compute_uv=False)[-1] > 1e-6
    # dropping the third row and the x11' column is an equally valid choice
    rows = [0, 1] + list(range(3, 15))
    cols = list(range(10)) + list(range(11, 15))
    assert np.linalg.svd(J[np.ix_(rows, cols)], compute_uv=False)[-1] > 1e-6


# ------------------------------------------------------------ embedding

def test_example4_embedding_reproduces_the_printed_block():
    m, ps, starts = witness_starts("example4")
    sorted_ps = replace(ps, row_perm=[0, 1], col_perm=[0, 1])
    eqs, names, carried, rec = embed(sorted_ps, 1, seed=0)
    assert names == ["x", "y", "u1"] and len(eqs) == 3
    (u, s), = rec.replaced
    (yv, xi), = rec.frozen
    assert (u, s, yv) == (Jet(2, 0), Jet(0, 2), Jet(1, 2))
    assert -1 <= xi <= 1
    rng = np.random.default_rng(0)
    for _ in range(5):
        q = Point(rng.uniform(0, 5), {Jet(v, k): rng.uniform(-2, 2)
                                      for v in range(3) for k in range(3)})
        X, Xp, Y, U = q[Jet(0, 0)], q[Jet(0, 1)], q[Jet(1, 0)], q[Jet(2, 0)]
        printed = [
            2 * q[Jet(1, 0)] * q[Jet(0, 2)] - X * q[Jet(1, 2)] + 2 * X * Xp ** 2 - Xp + math.sin(q.t),
            2 * U * Y - xi * X + 2 * X * Xp ** 2 - Xp + math.sin(q.t),
            xi - 2 * U * X - 2 * Xp ** 2,
        ]
        assert [evaluate(e, q) for e in eqs] == pytest.approx(printed, abs=1e-12)
    # new Jacobian, matched up to row and column order
    sol = solve_assignment(signature_matrix(eqs, 3))
    G = prolong(eqs, names, sol, carried)
    q = Point(0.3, {Jet(0, 0): 0.7, Jet(0, 1): -0.4, Jet(1, 0): 0.2, Jet(2, 0): 1.1})
    X, Xt, Y = 0.7, -0.4, 0.2
    want = np.array([[4 * X * Xt - 1, 0, 2 * Y], [-4 * Xt, 0, -2 * X], [2 * Y, -X, 0]])
    got = numeric_jacobian(top_jacobian(G), q)
    assert any(np.allclose(got[np.ix_(rp, cp)], want)
               for rp in itertools.permutations(range(3))
               for cp in itertools.permutations(range(3)))


def test_ire_on_example4_is_equivalent_to_the_printed_block():
    m, ps, starts = witness_starts("example4")
    res = ire_loop(m.equations, m.names, starts[0][1])
    assert pass_shape(res) == [(2, 1)]
    (u, s), = res.records[0].replaced
    assert s == Jet(0, 2)
    # whichever row was pivoted, the lifted point satisfies every equation
    num = NumericSystem(res.system)
    x = num.vector(res.point)
    assert np.max(np.abs(num.top_residual(0.0, x))) < 1e-8
    assert np.max(np.abs(num.con_residual(0.0, x))) < 1e-6


@pytest.mark.parametrize("name, n_eq, n_u, n_xi", [("amplifier", 13, 5, 3),
                                                   ("pendulum", 9, 4, 1)])
def test_first_embedding_sizes(name, n_eq, n_u, n_xi):
    m = model(name)
    res = ire_loop(m.equations, m.names, start_point(name, m), max_passes=10)
    rec = res.records[0]
    assert len(rec.replaced) == n_u and len(rec.frozen) == n_xi
    first_names = len(m.names) + n_u
    assert res.passes[0].n + res.passes[0].r == n_eq
    assert len(res.system.names) >= first_names


def test_xi_comes_from_the_seed():
    m, ps, starts = witness_starts("example4")
    sorted_ps = replace(ps, row_perm=[0, 1], col_perm=[0, 1])
    a = embed(sorted_ps, 1, seed=4)[3].frozen
    b = embed(sorted_ps, 1, seed=4)[3].frozen
    c = embed(sorted_ps, 1, seed=5)[3].frozen
    assert a == b and a != c


# ------------------------------------------------------------ lifting

def test_lift_copies_replaced_values():
    from daeire.ire import EmbeddingRecord
    p = Point(0.0, {Jet(0, 1): 0.3})
    rec = EmbeddingRecord([(Jet(1, 0), Jet(0, 1))], [], 1)
    assert lift_point(p, rec)[Jet(1, 0)] == 0.3
    assert lift_point(p, EmbeddingRecord([], [], 1)) is p


def test_pendulum_lift_then_correction_satisfies_the_embedded_system():
    m, ps, p = fixture_start("pendulum")
    r = detect_rank(top_jacobian(ps), p)
    s = sort_top_block(ps, p, r)
    eqs, names, carried, rec = embed(s, r, seed=0)
    q = lift_point(p, rec)
    assert len(rec.replaced) == 4
    for u, sj in rec.replaced:
        assert q[u] == p[sj]
    assert {sj for _, sj in rec.replaced} | {yj for yj, _ in rec.frozen} == set(ps.leading)
    # the copies are a starting guess; u is then solved with xi in place of y
    sol = shortcut_duals(s.sol, r, eqs, s)
    G = prolong(eqs, names, sol, carried)
    fresh = {u for u, _ in rec.replaced}
    q = complete_point(G, q, prefer=fresh)
    assert max(abs(evaluate(e, q)) for e in eqs) <= 1e-6
    for v in ps.state_jets():
        assert q[v] == pytest.approx(p[v], abs=1e-12)


# ------------------------------------------------------------ shortcut duals

def test_amplifier_shortcut_duals():
    m = model("amplifier")
    res = ire_loop(m.equations, m.names, start_point("amplifier", m))
    lg = res.passes[0]
    assert lg.used_shortcut_duals
    assert res.system.sol.c == (0,) * 5 + (1,) * 8
    assert res.system.sol.d == (1,) * 8 + (1,) * 5
    assert lg.delta_after == 5


def test_shortcut_agrees_with_assignment_on_fixtures():
    for name in ["amplifier", "pendulum"]:
        m, ps, p = fixture_start(name)
        r = detect_rank(top_jacobian(ps), p)
        s = sort_top_block(ps, p, r)
        eqs, names, carried, rec = embed(s, r, seed=0)
        short = shortcut_duals(s.sol, r, eqs, s)
        assert short is not None
        full = solve_assignment(signature_matrix(eqs, len(names)))
        assert short.delta == full.delta
        sigma = signature_matrix(eqs, len(names))
        for i, row in enumerate(sigma):
            for j, v in enumerate(row):
                if v != float("-inf"):
                    assert short.d[j] - short.c[i] >= v


def test_shortcut_refuses_when_a_row_lacks_the_layer_below():
    # the first row has no first-derivative jet at all
    m = parse_model("var x, y;\nx'' - y'' = 0;\ny - x^2 = 0;")
    sig, sol, ps = analyze(m.equations, m.names)
    s = replace(ps, row_perm=[0, 1], col_perm=[0, 1])
    eqs, names, carried, rec = embed(s, 1, seed=0)
    assert shortcut_duals(s.sol, 1, eqs, s) is None


# ------------------------------------------------------------ the loop

def test_pass_counts_and_delta_ledger():
    m = model("amplifier")
    res = ire_loop(m.equations, m.names, start_point("amplifier", m))
    assert pass_shape(res) == [(8, 5)] and res.delta == 5

    m = model("pendulum")
    res = ire_loop(m.equations, m.names, start_point("pendulum", m))
    assert pass_shape(res) == [(5, 4), (9, 8)]
    assert [lg.delta_after for lg in res.passes] == [3, 2] and res.delta == 2

    m, ps, starts = witness_starts("example4")
    res = ire_loop(m.equations, m.names, starts[0][1])
    assert res.passes[0].delta_before == 2 and res.delta == 1


def test_delta_drops_by_rank_deficiency():
    for name in ["amplifier", "pendulum"]:
        m = model(name)
        res = ire_loop(m.equations, m.names, start_point(name, m))
        for lg in res.passes:
            assert lg.delta_after == lg.delta_before - (lg.n - lg.r)
            assert not lg.redundancy_suspected


def test_linear_recombination_from_a_consistent_point():
    m = model("linear_recombination")
    res = ire_loop(m.equations, m.names, start_point("linear_recombination", m))
    assert pass_shape(res) == [(2, 1), (3, 2), (5, 4)]


def test_beam_components():
    m, ps, starts = witness_starts("beam")
    for _, p in starts:
        res = ire_loop(m.equations, m.names, p)
        if p[Jet(0, 0)] * p[Jet(1, 0)] > 0:
            assert res.passes == []
        else:
            assert pass_shape(res) == [(2, 1), (3, 2)] and res.delta == 0


def test_negative_remaining_freedom_means_no_solution():
    # x*y = 0, x - y = 0 at the origin: delta = 0 but the Jacobian has rank 1
    m = parse_model("var x, y;\nx*y = 0;\nx - y = 0;")
    p = Point(0.0, {Jet(0, 0): 0.0, Jet(1, 0): 0.0})
    with pytest.raises(NoSolutionError):
        ire_loop(m.equations, m.names, p)


def test_pass_cap():
    m = model("linear_recombination")
    with pytest.raises(MaxPassesError):
        ire_loop(m.equations, m.names, start_point("linear_recombination", m),
                 max_passes=2)
