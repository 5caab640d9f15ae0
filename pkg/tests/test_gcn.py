import numpy as np
import numpy.polynomial.chebyshev as C
import pytest
from hypothesis import given, strategies as st

from handfusion.autodiff import Linear, Tensor, default_dtype
from handfusion.errors import DimensionError
from handfusion.gcn import ChebConv, MeshDecoder, cheb_conv, decode_mesh
from handfusion.topology import miniature_topology, scaled_laplacian
from test_topology import random_connected_graph


def dense_cheb_oracle(x, lap, w):
    # T_k expanded in the monomial basis and evaluated with dense matrix powers
    out = 0
    for k in range(w.shape[0]):
        coeffs = C.cheb2poly(np.eye(k + 1)[k])
        Tk = sum(c * np.linalg.matrix_power(lap, j) for j, c in enumerate(coeffs))
        out = out + Tk @ x @ w[k]
    return out


def path_laplacian(n):
    a = np.zeros((n, n))
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = 1
    return scaled_laplacian(a)


def test_k3_on_six_node_path():
    rng = np.random.default_rng(0)
    lap = path_laplacian(6)
    x, w = rng.normal(size=(6, 4)), rng.normal(size=(3, 4, 2))
    with default_dtype(np.float64):
        got = cheb_conv(Tensor(x), lap, Tensor(w)).data
    np.testing.assert_allclose(got, dense_cheb_oracle(x, lap, w), rtol=0, atol=1e-10)


@given(st.integers(0, 10_000), st.integers(2, 12), st.integers(1, 5))
def test_cheb_conv_matches_dense_polynomial(seed, n, K):
    rng = np.random.default_rng(seed)
    lap = scaled_laplacian(random_connected_graph(rng, n, n))
    x, w = rng.normal(size=(2, n, 3)), rng.normal(size=(K, 3, 4))
    with default_dtype(np.float64):
        got = cheb_conv(Tensor(x), lap, Tensor(w)).data
    for b in range(2):
        np.testing.assert_allclose(got[b], dense_cheb_oracle(x[b], lap, w), rtol=0, atol=1e-10)


def test_k1_is_a_linear_layer():
    rng = np.random.default_rng(0)
    lap = path_laplacian(5)
    with default_dtype(np.float64):
        conv = ChebConv(4, 3, rng, K=1)
        conv.bias.data[...] = rng.normal(size=3)
        lin = Linear(4, 3, rng)
        lin.weight.data[...] = conv.weight.data[0]
        lin.bias.data[...] = conv.bias.data
        x = Tensor(rng.normal(size=(2, 5, 4)))
        np.testing.assert_allclose(conv(x, lap).data, lin(x).data, rtol=0, atol=1e-14)


def test_shape_errors():
    lap = path_laplacian(4)
    with pytest.raises(DimensionError):
        cheb_conv(Tensor(np.zeros((5, 2))), lap, Tensor(np.zeros((2, 2, 2))))
    with pytest.raises(DimensionError):
        cheb_conv(Tensor(np.zeros((4, 3))), lap, Tensor(np.zeros((2, 2, 2))))


@pytest.fixture(scope="module")
def mini():
    topo = miniature_topology()
    with default_dtype(np.float64):
        dec = MeshDecoder(topo, np.random.default_rng(0), global_dim=6, widths=(8, 6, 4), bottleneck=5)
    dec.vertex_head.weight.data[...] = np.random.default_rng(1).normal(size=dec.vertex_head.weight.shape) * 0.1
    return topo, dec


def test_decoder_outputs_root_aligned(mini):
    topo, dec = mini
    g = Tensor(np.random.default_rng(2).normal(size=(3, 6)))
    root = np.array([[0, 0, 0.5], [0.1, 0, 0.6], [0, 0.1, 0.7]])
    p = dec(g, root, np.array([True, False, True]))
    assert p.mesh_full.shape == (3, 48, 3) and p.mesh_gcn.shape == (3, 32, 3) and p.joints.shape == (3, 21, 3)
    np.testing.assert_allclose(p.joints.data[:, 9], 0, atol=1e-15)
    np.testing.assert_allclose(p.joints.data, np.einsum("jv,nvc->njc", topo.regressor, p.mesh_full.data), atol=1e-14)
    # root head is zero-initialized
    np.testing.assert_allclose(p.root.data, root)
    np.testing.assert_allclose(p.camera_joints.data[:, 9], root)


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_decode_is_translation_covariant_in_root_init(shift):
    topo = miniature_topology()
    with default_dtype(np.float64):
        dec = MeshDecoder(topo, np.random.default_rng(0), global_dim=6, widths=(8, 6, 4), bottleneck=5)
        g = Tensor(np.random.default_rng(2).normal(size=(2, 6)))
    root = np.array([[0, 0, 0.5], [0.1, 0, 0.6]])
    left = np.array([True, False])
    a = decode_mesh(g, topo, dec, root, left)
    b = decode_mesh(g, topo, dec, root + np.array(shift), left)
    np.testing.assert_allclose(b.camera_mesh.data - a.camera_mesh.data,
                               np.broadcast_to(shift, a.camera_mesh.shape), atol=1e-12)


def test_left_template_is_mirror(mini):
    topo, dec = mini
    g = Tensor(np.zeros((2, 6)))
    dec.vertex_head.weight.data[...] = 0
    p = dec(g, np.zeros((2, 3)) + [0, 0, 1], np.array([True, False]))
    left, right = p.mesh_full.data
    np.testing.assert_allclose(left * [-1, 1, 1], right, atol=1e-12)
