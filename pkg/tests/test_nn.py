import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glove.nn import (
    Adam,
    GcnLayer,
    Linear,
    Tensor,
    assign_params,
    concat,
    gcn_forward,
    gradcheck,
    load_params,
    normalized_adjacency,
    parameter,
    save_params,
    softmax,
)
from oracles import dense_gcn

ACT = {"relu": lambda x: np.maximum(x, 0), "tanh": np.tanh, "identity": lambda x: x}


def random_graph(rng, N, p=0.5):
    A = (rng.random((N, N)) < p).astype(float)
    A = np.triu(A, 1)
    return A + A.T


def test_normalized_adjacency_small_cases():
    assert normalized_adjacency(np.zeros((1, 1))).tolist() == [[1.0]]
    assert np.allclose(normalized_adjacency(np.array([[0, 1], [1, 0]])), 0.5, atol=0)


def test_normalized_adjacency_matches_dense_products():
    rng = np.random.default_rng(0)
    A = random_graph(rng, 5)
    At = A + np.eye(5)
    D = np.diag(1 / np.sqrt(At.sum(axis=1)))
    assert np.max(np.abs(normalized_adjacency(A) - D @ At @ D)) < 1e-12


def test_normalized_adjacency_rejects_asymmetric():
    with pytest.raises(ValueError):
        normalized_adjacency(np.array([[0, 1], [0, 0]]))


def test_edgeless_gcn_equals_fc():
    rng = np.random.default_rng(1)
    layer = GcnLayer(rng, 3, 4, "tanh")
    F = rng.normal(size=(5, 3))
    out = gcn_forward(layer, normalized_adjacency(np.zeros((5, 5))), F).data
    fc = Linear(rng, 3, 4, "tanh", bias=False)
    fc.W.data = layer.W.data.copy()
    assert np.array_equal(out, fc(Tensor(F)).data)


def test_two_node_mean_aggregation():
    layer = GcnLayer(np.random.default_rng(0), 3, 3, "identity")
    layer.W.data = np.eye(3)
    F = np.array([[1.0, 2.0, 3.0], [5.0, 0.0, -1.0]])
    out = gcn_forward(layer, normalized_adjacency(np.ones((2, 2)) - np.eye(2)), F).data
    assert np.allclose(out, F.mean(axis=0, keepdims=True).repeat(2, axis=0), atol=1e-15)


@pytest.mark.parametrize("N", [1, 2, 4, 6, 8])
def test_gcn_matches_triple_loop(N):
    rng = np.random.default_rng(N)
    for act in ACT:
        A = random_graph(rng, N)
        layer = GcnLayer(rng, 3, 2, act)
        F = rng.normal(size=(N, 3))
        got = gcn_forward(layer, normalized_adjacency(A), F).data
        assert np.max(np.abs(got - dense_gcn(A, F, layer.W.data, ACT[act]))) < 1e-12


def test_gcn_rejects_shape_mismatch():
    layer = GcnLayer(np.random.default_rng(0), 3, 2)
    with pytest.raises(ValueError):
        gcn_forward(layer, np.eye(4), np.zeros((5, 3)))
    with pytest.raises(ValueError):
        gcn_forward(layer, np.eye(5), np.zeros((5, 4)))


@pytest.mark.parametrize("N", [1, 5, 25, 100])
def test_gcn_parameter_count_independent_of_graph(N):
    layer = GcnLayer(np.random.default_rng(0), 11, 64)
    out = gcn_forward(layer, normalized_adjacency(np.zeros((N, N))), np.ones((N, 11)))
    assert out.shape == (N, 64)
    assert sum(p.data.size for p in layer.parameters()) == 11 * 64


def test_softmax_examples():
    assert softmax(np.array([0.0, 0.0])).tolist() == [0.5, 0.5]
    x = np.random.default_rng(0).normal(size=(3, 4))
    assert np.allclose(softmax(x + 7.3), softmax(x), atol=1e-15)
    s = softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(s)) and s[0] == pytest.approx(1.0) and s.sum() == pytest.approx(1.0)
    assert np.all(softmax(np.array([[-700.0, 0.0]])) > 0)


def test_linear_sum_gradient():
    W = parameter(np.random.default_rng(0).normal(size=(1, 3)))
    x = np.array([[2.0, -1.0, 0.5]])
    (W * x).sum().backward()
    assert W.grad.tolist() == [[2.0, -1.0, 0.5]]


def test_backward_requires_recorded_graph():
    with pytest.raises(RuntimeError):
        parameter(np.ones(1)).backward()
    with pytest.raises(RuntimeError):
        (parameter(np.ones(3)) * 2).backward()


def test_unreached_parameter_gets_zero_gradient():
    a, b = parameter(np.ones((2, 2))), parameter(np.ones((2, 2)))
    a.zero_grad()
    b.zero_grad()
    (a * 3).sum().backward()
    assert not b.grad.any() and (a.grad == 3).all()


def test_softmax_gradient_matches_jacobian():
    rng = np.random.default_rng(2)
    x = parameter(rng.normal(size=(1, 5)))
    up = rng.normal(size=(1, 5))
    (x.softmax() * up).sum().backward()
    s = softmax(x.data)[0]
    J = np.diag(s) - np.outer(s, s)
    assert np.allclose(x.grad[0], J @ up[0], atol=1e-15)


def three_layer_case(seed):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(1, 6))
    acts = rng.choice(["relu", "tanh", "identity"], size=3)
    A = normalized_adjacency(random_graph(rng, N))
    g = GcnLayer(rng, 4, 5, str(acts[0]))
    f = Linear(rng, 5, 6, str(acts[1]))
    h = Linear(rng, 6, 3, str(acts[2]))
    for p in f.parameters() + h.parameters():
        p.data += rng.normal(scale=0.1, size=p.shape)
    X = rng.normal(size=(N, 4))
    w = rng.normal(size=(N, 3))

    def loss():
        y = h(f(g(A, Tensor(X)))).softmax()
        return (concat([y, y * 2.0], axis=1).mean(axis=0) * np.concatenate([w.mean(0), w.mean(0)])).sum()

    return loss, g.parameters() + f.parameters() + h.parameters()


@pytest.mark.parametrize("seed", range(100))
def test_three_layer_gradients_match_finite_differences(seed):
    loss, params = three_layer_case(seed)
    assert gradcheck(loss, params) < 1e-4


def test_getitem_and_broadcast_gradients():
    rng = np.random.default_rng(3)
    x = parameter(rng.normal(size=(4, 3)))
    b = parameter(rng.normal(size=(1, 3)))
    loss = lambda: ((x[:, 0:1] * x + b) * (x - b)).mean()  # noqa: E731
    assert gradcheck(loss, [x, b]) < 1e-6


def test_adam_zero_gradient_leaves_params():
    p = parameter(np.array([1.0, -2.0]))
    opt = Adam([p], 0.1)
    opt.zero_grad()
    opt.step()
    assert p.data.tolist() == [1.0, -2.0]


def test_adam_quadratic_converges():
    p = parameter(np.array([0.0]))
    opt = Adam([p], 1e-2)
    for _ in range(500):
        opt.zero_grad()
        ((p - 1.0) * (p - 1.0)).sum().backward()
        opt.step("descend")
    assert abs(p.data[0] - 1.0) < 1e-3


def test_adam_ascend_moves_toward_maximum():
    p = parameter(np.array([1.0]))
    opt = Adam([p], 1e-2)
    opt.zero_grad()
    (-(p * p)).sum().backward()
    opt.step("ascend")
    assert 0 < p.data[0] < 1.0


def test_adam_rejects_bad_direction():
    with pytest.raises(ValueError):
        Adam([], 0.1).step("sideways")


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    params = [parameter(rng.normal(size=(3, 4)), "a.W"), parameter(rng.normal(size=(1, 4)) * 1e-300, "a.b")]
    save_params(tmp_path / "p.txt", params, {"arch": "x"})
    arrays, meta = load_params(tmp_path / "p.txt")
    assert meta == {"arch": "x"}
    fresh = [parameter(np.zeros((3, 4)), "a.W"), parameter(np.zeros((1, 4)), "a.b")]
    assign_params(fresh, arrays)
    for p, q in zip(params, fresh):
        assert p.data.tobytes() == q.data.tobytes()


def test_checkpoint_mismatch_rejected(tmp_path):
    save_params(tmp_path / "p.txt", [parameter(np.zeros((2, 2)), "w")])
    arrays, _ = load_params(tmp_path / "p.txt")
    with pytest.raises(ValueError):
        assign_params([parameter(np.zeros((2, 3)), "w")], arrays)
    with pytest.raises(ValueError):
        assign_params([parameter(np.zeros((2, 2)), "v")], arrays)
    (tmp_path / "junk.txt").write_text("nope\n")
    with pytest.raises(ValueError):
        load_params(tmp_path / "junk.txt")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_forward_deterministic(seed):
    loss, _ = three_layer_case(seed)
    assert loss().data == loss().data
