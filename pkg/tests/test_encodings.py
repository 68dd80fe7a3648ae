import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import eig_oracle, laplacian_oracle, random_edges, rw_diag_oracle
from tensorgnn.eigen import EigenError, symmetric_eig
from tensorgnn.encodings import (
    EncodingMatrix,
    fix_signs,
    laplacian,
    laplacian_eig_encoding,
    read_encodings,
    rw_diag_encoding,
    rw_transition,
    write_encodings,
)
from tensorgnn.graph import Graph
from tensorgnn.synthetic import cycle, path


def graph(n, edges):
    return Graph(n, edges, np.ones((n, 1)))


TRIANGLE = cycle(3)
P2 = path(2)
ISOLATED = graph(1, [])


def test_transition_triangle():
    r = rw_transition(TRIANGLE)
    assert np.allclose(np.diag(r), 0)
    assert np.allclose(r + np.eye(3) * 0.5, 0.5)


def test_transition_p2_and_isolated():
    assert rw_transition(P2).tolist() == [[0.0, 1.0], [1.0, 0.0]]
    assert rw_transition(ISOLATED).tolist() == [[0.0]]


def test_transition_column_stochastic():
    g = graph(5, [(0, 1), (1, 2), (1, 3)])  # node 4 isolated
    cols = rw_transition(g).sum(axis=0)
    assert np.allclose(cols, [1, 1, 1, 1, 0])


def test_rw_triangle_rows():
    enc = rw_diag_encoding(TRIANGLE, 3)
    assert np.abs(enc.rows - [0, 0.5, 0.25]).max() < 1e-12
    assert np.abs(enc.rows - rw_diag_oracle(3, TRIANGLE.edges, 3)).max() < 1e-12


def test_rw_p2_rows():
    enc = rw_diag_encoding(P2, 3)
    assert np.abs(enc.rows - [0, 1, 0]).max() < 1e-12


def test_rw_isolated_zero_row():
    assert rw_diag_encoding(ISOLATED, 7).rows.tolist() == [[0.0] * 7]


def test_rw_default_length():
    assert rw_diag_encoding(cycle(5)).rows.shape == (5, 20)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.floats(0, 0.6), st.integers(0, 2**31))
def test_rw_matches_power_oracle(n, p, seed):
    edges = random_edges(n, p, np.random.default_rng(seed), connected=False)
    got = rw_diag_encoding(graph(n, edges), 12).rows
    assert np.abs(got - rw_diag_oracle(n, edges, 12)).max() < 1e-12
    assert got.min() >= 0 and got.max() <= 1


def test_left_and_right_normalisation_share_diagonals():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(2, 13))
        edges = random_edges(n, 0.3, rng)
        a = rw_diag_oracle(n, edges, 20)
        b = rw_diag_oracle(n, edges, 20, left=True)
        assert np.abs(a - b).max() < 1e-12


def test_laplacian_small_cases():
    assert laplacian(P2).tolist() == [[1, -1], [-1, 1]]
    lt = laplacian(TRIANGLE)
    assert np.all(np.diag(lt) == 2) and np.all(lt[~np.eye(3, dtype=bool)] == -1)
    assert not laplacian(graph(4, [])).any()


def test_eig_2x2():
    vals, vecs = symmetric_eig(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    assert np.allclose(vals, [0, 2], atol=1e-12)
    assert np.allclose(vecs.T @ vecs, np.eye(2), atol=1e-12)


def test_eig_c4_spectrum():
    vals, _ = symmetric_eig(laplacian(cycle(4)))
    assert np.abs(vals - [0, 2, 2, 4]).max() < 1e-10


def test_eig_identity():
    vals, vecs = symmetric_eig(np.eye(5))
    assert np.allclose(vals, 1) and np.allclose(np.abs(vecs), np.eye(5))


def test_eig_empty_and_scalar():
    vals, vecs = symmetric_eig(np.zeros((0, 0)))
    assert vals.shape == (0,) and vecs.shape == (0, 0)
    vals, vecs = symmetric_eig(np.array([[3.5]]))
    assert vals.tolist() == [3.5] and vecs.tolist() == [[1.0]]


def test_eig_rejects_asymmetric():
    with pytest.raises(ValueError):
        symmetric_eig(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_eig_rotation_cap():
    m = laplacian(cycle(6)) + np.diag(np.arange(6.0))
    with pytest.raises(EigenError):
        symmetric_eig(m, max_rotations=1)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**31))
def test_eig_against_eigh(n, seed):
    edges = random_edges(n, 0.3, np.random.default_rng(seed))
    lap = laplacian_oracle(n, edges)
    vals, vecs = symmetric_eig(lap)
    ref, _ = eig_oracle(lap)
    assert np.abs(vals - ref).max() < 1e-9
    assert np.abs(lap @ vecs - vecs * vals).max() < 1e-8
    assert np.abs(vecs.T @ vecs - np.eye(n)).max() < 1e-8


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**31))
def test_eig_random_dense(n, seed):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, n))
    m = m + m.T
    vals, vecs = symmetric_eig(m)
    assert np.all(np.diff(vals) >= 0)
    assert np.abs(m @ vecs - vecs * vals).max() < 1e-8


def test_fix_signs_largest_entry_positive():
    v = np.array([[0.1, -0.9], [-0.8, 0.3]])
    out = fix_signs(v)
    assert out.tolist() == [[-0.1, 0.9], [0.8, -0.3]]


def test_lap_encoding_p2():
    rows = laplacian_eig_encoding(P2, 1).rows
    assert np.allclose(np.abs(rows), 1 / np.sqrt(2))
    assert rows[0, 0] == -rows[1, 0]


def test_lap_encoding_triangle_skips_constant():
    rows = laplacian_eig_encoding(TRIANGLE, 1).rows[:, 0]
    lt = laplacian(TRIANGLE)
    assert np.allclose(lt @ rows, 3 * rows)
    assert abs(rows.sum()) < 1e-10 and abs(np.linalg.norm(rows) - 1) < 1e-10


def test_lap_encoding_padding():
    rows = laplacian_eig_encoding(cycle(4), 6).rows
    assert rows.shape == (4, 6)
    assert np.all(rows[:, 3:] == 0)


def test_lap_encoding_keep_trivial():
    rows = laplacian_eig_encoding(cycle(4), 2, skip_trivial=False).rows
    assert np.allclose(rows[:, 0], 0.5)


def test_lap_encoding_descending():
    rows = laplacian_eig_encoding(cycle(4), 1, descending=True, skip_trivial=False).rows[:, 0]
    assert np.allclose(laplacian(cycle(4)) @ rows, 4 * rows)


def test_encoding_sidecar_round_trip(tmp_path):
    encs = [rw_diag_encoding(cycle(5), 4), laplacian_eig_encoding(path(4), 3)]
    p = tmp_path / "enc.jsonl"
    write_encodings(p, encs)
    back = read_encodings(p)
    assert [e.kind for e in back] == ["rw_diag", "laplacian_eig"]
    for a, b in zip(encs, back):
        assert np.array_equal(a.rows, b.rows)


def test_encoding_matrix_rejects_wrong_width():
    with pytest.raises(ValueError):
        EncodingMatrix(np.zeros((3, 2)), "rw_diag", 4)
