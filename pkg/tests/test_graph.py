import io

import numpy as np
import pytest

from spatialfactor.graph import (AdjacencyError, adjacency_to_text, conditional_mean,
                                 from_edges, lattice, load_adjacency, path,
                                 precision_quadform)


def _random_connected(n, rng):
    edges = {(i, i + 1) for i in range(n - 1)}
    for _ in range(n):
        i, j = rng.choice(n, size=2, replace=False)
        edges.add((int(i), int(j)))
    return from_edges(edges, n)


def test_path_from_edges_has_expected_degrees():
    g = from_edges([(0, 1), (1, 2)], 3)
    assert g.degrees.tolist() == [1, 2, 1]
    assert g.n_edges == 2


def test_reversed_duplicate_collapses():
    g = from_edges([(0, 1), (1, 0)], 2)
    assert g.n_edges == 1
    assert g.degrees.tolist() == [1, 1]


def test_self_loop_rejected():
    with pytest.raises(AdjacencyError, match="self-loop"):
        from_edges([(0, 0)], 1)


@pytest.mark.parametrize("text,needle", [
    ("from,to\n0,1\n1,1\n", "line 3: self-loop"),
    ("from,to\n0,1\n1,5\n", "line 3: index out of range"),
    ("from,to\n0,1\n1,x\n", "line 3: non-integer"),
    ("0,1\n1,2,3\n", "line 2: expected 2 fields"),
])
def test_load_errors_carry_line_numbers(text, needle):
    with pytest.raises(AdjacencyError, match=needle):
        load_adjacency(io.StringIO(text), 3)


def test_isolated_unit_rejected():
    with pytest.raises(AdjacencyError, match="isolated"):
        load_adjacency(io.StringIO("from,to\n0,1\n"), 3)


def test_text_round_trip():
    g = lattice(3, 4)
    h = load_adjacency(io.StringIO(adjacency_to_text(g)), g.n)
    assert np.array_equal(g.edge_list, h.edge_list)


def test_load_collapses_duplicates():
    g = load_adjacency(io.StringIO("from,to\n0,1\n1,0\n1,2\n2,1\n"), 3)
    assert g.n_edges == 2


def test_quadform_examples():
    g = path(3)
    assert precision_quadform(g, np.ones(3), np.zeros(3)) == 0.0
    assert precision_quadform(g, np.array([0.0, 1.0, 0.0]), np.zeros(3)) == 2.0
    u = np.array([0.3, -1.2, 4.0])
    assert precision_quadform(g, u, u) == 0.0


def test_quadform_length_mismatch():
    with pytest.raises(ValueError):
        precision_quadform(path(3), np.zeros(4))


def test_quadform_matches_dense_on_random_graphs(rng):
    for n in range(2, 21):
        g = _random_connected(n, rng)
        Q = g.dense_precision()
        u, m = rng.normal(size=n), rng.normal(size=n)
        r = u - m
        assert precision_quadform(g, u, m) == pytest.approx(r @ Q @ r, rel=1e-12)


def test_quadform_shift_invariant(rng):
    g = lattice(3, 3)
    u, m = rng.normal(size=9), rng.normal(size=9)
    base = precision_quadform(g, u, m)
    assert precision_quadform(g, u + 2.5, m + 2.5) == pytest.approx(base, rel=1e-12)


def test_dense_precision_rows_sum_to_zero_and_basis_pairs():
    g = lattice(3, 3)
    Q = g.dense_precision()
    assert np.allclose(Q.sum(axis=1), 0.0)
    e = np.eye(g.n)
    for i in range(g.n):
        assert precision_quadform(g, e[i]) == g.degrees[i]
        for j in range(i + 1, g.n):
            # (e_i + e_j)' Q (e_i + e_j) = d_i + d_j + 2 Q_ij
            assert precision_quadform(g, e[i] + e[j]) == g.degrees[i] + g.degrees[j] + 2 * Q[i, j]


def test_conditional_mean_examples():
    g = path(3)
    assert conditional_mean(g, 1, np.array([0.0, 9.0, 4.0]), np.zeros(3)) == 2.0
    vals = np.array([1.0, 2.0, 3.0])
    assert conditional_mean(g, 1, vals, vals) == 2.0
    g2 = lattice(2, 2)
    assert set(g2.neighbors(0)) == {1, 2}
    assert conditional_mean(g2, 0, np.array([7.0, 1.0, 3.0, 7.0]), np.zeros(4)) == 2.0


def test_conditional_mean_index_error():
    with pytest.raises(IndexError):
        conditional_mean(path(3), 3, np.zeros(3), np.zeros(3))


def test_rank_and_components():
    g = lattice(2, 3)
    assert g.is_connected and g.precision_rank == 5
    assert np.linalg.matrix_rank(g.dense_precision()) == 5
    two = from_edges([(0, 1), (2, 3)], 4)
    assert two.n_components == 2 and two.precision_rank == 2
