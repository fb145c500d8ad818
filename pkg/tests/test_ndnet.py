import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oscifit.ndnet import (
    Adam,
    AdamState,
    CheckpointError,
    Concat,
    Conv1D,
    Dense,
    Flatten,
    Linear,
    MaxPool1D,
    NonFiniteError,
    ReLU,
    Reshape,
    Sequential,
    Sigmoid,
    UpSample1D,
    adam_step,
    backend,
    he_uniform,
    load_layers,
    mse,
    mse_grad,
    save_layers,
    set_backend,
)
from oscifit.ndnet import _kernels
from oscifit.ndnet.gradcheck import check_function, check_layer

F64 = np.float64
TOL = 1e-4


@pytest.fixture(params=sorted(_kernels._BACKENDS))
def kernel_backend(request):
    before = backend()
    set_backend(request.param)
    yield request.param
    set_backend(before)


def rng(seed=0):
    return np.random.default_rng(seed)


def away_from_zero(shape, seed=0):
    r = rng(seed)
    x = r.uniform(0.05, 1.0, size=shape) * r.choice([-1.0, 1.0], size=shape)
    return x


def distinct(shape, seed=0):
    """Values with pairwise gaps far above the finite-difference step."""
    n = int(np.prod(shape))
    return (rng(seed).permutation(n) * 0.01 - 0.005 * n).reshape(shape).astype(F64)


def assert_reports(reports):
    for rep in reports:
        assert rep.errors.size > 0
        assert rep.worst <= TOL, rep


# ---------------------------------------------------------------- conv


def test_conv_identity_kernel():
    layer = Conv1D(1, 1, 1, dtype=F64)
    layer.w[...] = 1.0
    x = rng().standard_normal((2, 7, 1))
    assert np.array_equal(layer.forward(x), x)


def test_conv_small_example(kernel_backend):
    layer = Conv1D(1, 1, 3, dtype=F64)
    layer.w[...] = 1.0
    y = layer.forward(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1))
    assert y.ravel().tolist() == [3.0, 6.0, 5.0]


def _conv_oracle(x, w, b):
    B, L, C = x.shape
    K = w.shape[0]
    left = (K - 1) // 2
    y = np.zeros((B, L, w.shape[2]))
    for bi in range(B):
        for l in range(L):
            for k in range(K):
                src = l + k - left
                if 0 <= src < L:
                    y[bi, l] += x[bi, src] @ w[k]
    return y + b


@pytest.mark.parametrize("K", [1, 2, 3, 4, 7, 8])
def test_conv_matches_loop_oracle(K, kernel_backend):
    layer = Conv1D(3, 5, K, rng(K), F64)
    layer.b[...] = rng(1).standard_normal(5)
    x = rng(2).standard_normal((2, 11, 3))
    np.testing.assert_allclose(layer.forward(x), _conv_oracle(x, layer.w, layer.b), atol=1e-12)


@pytest.mark.parametrize("K", [1, 4, 5])
def test_conv_gradients(K, kernel_backend):
    layer = Conv1D(3, 4, K, rng(K), F64)
    assert_reports(check_layer(layer, rng(3).standard_normal((2, 13, 3))))


def test_conv_first_layer_skips_input_grad():
    layer = Conv1D(1, 2, 3, rng(), F64, input_grad=False)
    layer.forward(rng().standard_normal((2, 5, 1)))
    assert layer.backward(np.ones((2, 5, 2))) is None
    assert np.any(layer.grads[0] != 0)


def test_conv_channel_mismatch():
    with pytest.raises(ValueError):
        Conv1D(2, 2, 3, rng()).forward(np.zeros((1, 4, 3), np.float32))


# ---------------------------------------------------------------- pooling / upsampling


def test_maxpool_examples(kernel_backend):
    p = MaxPool1D(2)
    assert p.forward(np.array([1.0, 3, 2, 5]).reshape(1, 4, 1)).ravel().tolist() == [3, 5]
    assert p.forward(np.array([1.0, 2, 3]).reshape(1, 3, 1)).ravel().tolist() == [2, 3]


def test_maxpool_tie_goes_to_first(kernel_backend):
    p = MaxPool1D(3)
    p.forward(np.array([2.0, 2.0, 1.0]).reshape(1, 3, 1))
    assert p.backward(np.ones((1, 1, 1))).ravel().tolist() == [1.0, 0.0, 0.0]


@pytest.mark.parametrize("width,L", [(2, 8), (4, 10), (3, 7)])
def test_maxpool_gradients(width, L, kernel_backend):
    assert_reports(check_layer(MaxPool1D(width), distinct((2, L, 3), width)))


def test_upsample_examples():
    u = UpSample1D(2)
    assert u.forward(np.array([1.0, 2.0]).reshape(1, 2, 1)).ravel().tolist() == [1, 1, 2, 2]
    x = rng().standard_normal((2, 5, 3))
    assert np.array_equal(UpSample1D(1).forward(x), x)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 9), st.integers(0, 1000))
def test_pool_undoes_upsample(f, L, seed):
    x = rng(seed).standard_normal((1, L, 2))
    assert np.array_equal(MaxPool1D(f).forward(UpSample1D(f).forward(x)), x)


def test_upsample_gradients():
    assert_reports(check_layer(UpSample1D(3), rng().standard_normal((2, 5, 2))))


# ---------------------------------------------------------------- dense & activations


def test_dense_examples():
    d = Dense(2, 2, dtype=F64)
    d.w[...] = np.eye(2)
    x = rng().standard_normal((3, 2))
    assert np.array_equal(d.forward(x), x)
    d.w[...] = [[1, 0], [0, 2]]
    d.b[...] = 1
    assert d.forward(np.array([[1.0, 2.0]])).tolist() == [[2.0, 5.0]]


def test_dense_gradients():
    reports = check_layer(Dense(6, 4, rng(), F64), rng(1).standard_normal((5, 6)))
    for rep in reports:
        assert rep.worst <= 1e-6, rep


def test_activation_values():
    assert ReLU().forward(np.array([-1.0, 2.0])).tolist() == [0.0, 2.0]
    assert Sigmoid().forward(np.array([0.0]))[0] == 0.5
    s = Sigmoid().forward(np.array([-1000.0, 1000.0]))
    assert np.all(np.isfinite(s)) and s[0] == 0.0 and s[1] == 1.0


@pytest.mark.parametrize("layer", [ReLU(), Sigmoid(), Linear()], ids=["relu", "sigmoid", "linear"])
def test_activation_gradients(layer):
    for rep in check_layer(layer, away_from_zero((4, 9, 2))):
        assert rep.worst <= 1e-6, rep


def test_shape_layers_gradients():
    x = rng().standard_normal((3, 4, 5))
    assert_reports(check_layer(Flatten(), x))
    assert_reports(check_layer(Reshape(20), x))
    assert Reshape(20).output_shape((4, 5)) == (20,)
    with pytest.raises(ValueError):
        Reshape(7).output_shape((4, 5))


def test_concat_splits_gradient():
    c = Concat()
    a, b = rng().standard_normal((2, 3)), rng(1).standard_normal((2, 4))
    y = c.forward([a, b])
    assert y.shape == (2, 7)
    da, db = c.backward(np.arange(14.0).reshape(2, 7))
    assert da.shape == (2, 3) and db.shape == (2, 4) and db[0, 0] == 3.0


def test_sequential_block_gradients(kernel_backend):
    block = Sequential(
        [Conv1D(2, 3, 3, rng(1), F64), ReLU(), MaxPool1D(2), UpSample1D(2), Flatten(), Dense(24, 5, rng(2), F64), Sigmoid()]
    )
    assert_reports(check_layer(block, rng(3).standard_normal((2, 8, 2))))


# ---------------------------------------------------------------- init & optimizer


def test_he_uniform_bounds_and_variance():
    fan_in = 50
    w = he_uniform(fan_in, (1_000_000,), rng(), F64)
    bound = np.sqrt(6 / fan_in)
    assert np.abs(w).max() <= bound
    assert abs(w.var() / (bound**2 / 3) - 1) < 0.05
    assert np.array_equal(w, he_uniform(fan_in, (1_000_000,), rng(), F64))


def test_adam_first_step_moves_by_lr():
    p = [np.array([1.0, -2.0, 0.5])]
    state = AdamState.for_params(p)
    adam_step(p, [np.array([0.3, -5.0, 2.0])], state)
    np.testing.assert_allclose(p[0], [1.0 - 1e-3, -2.0 + 1e-3, 0.5 - 1e-3], atol=1e-6)


def test_adam_zero_gradient_is_noop():
    p = [np.array([1.0, 2.0])]
    opt = Adam(p)
    for _ in range(3):
        opt.step([np.zeros(2)])
    assert p[0].tolist() == [1.0, 2.0]


def test_adam_scalar_descent():
    w = [np.array([0.0])]
    opt = Adam(w, lr=0.05)
    for _ in range(200):
        opt.step([2 * (w[0] - 3.0)])
    assert abs(w[0][0] - 3.0) < 0.5


def test_adam_refuses_non_finite_gradient():
    p = [np.array([1.0])]
    opt = Adam(p)
    with pytest.raises(NonFiniteError):
        opt.step([np.array([np.nan])])
    assert p[0][0] == 1.0 and opt.state.step == 0


def test_mse_values_and_gradient():
    assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mse([0.0, 0.0], [1.0, 1.0]) == 1.0
    pred = rng().standard_normal(6)
    target = rng(1).standard_normal(6)
    g = mse_grad(pred, target)
    errs = check_function(lambda: mse(pred, target), pred, g, 6, rng())
    assert max(errs) <= 1e-6
    with pytest.raises(ValueError):
        mse(np.zeros(3), np.zeros(4))


# ---------------------------------------------------------------- backends


def test_backends_bit_identical():
    if len(_kernels._BACKENDS) < 2:
        pytest.skip("numba unavailable")
    x = rng().standard_normal((3, 37, 4)).astype(np.float32)
    xpad = np.pad(x, ((0, 0), (3, 4), (0, 0)))
    outs = {}
    for name in ("numba", "numpy"):
        set_backend(name)
        cols = _kernels.im2col(xpad, 8, 37)
        y, idx = _kernels.maxpool_forward(x, 4)
        dx = _kernels.maxpool_backward(y * 2, idx, 4, 37)
        outs[name] = (cols, y, idx, dx)
    set_backend(_kernels._default_backend())
    for a, b in zip(outs["numba"], outs["numpy"]):
        assert a.dtype == b.dtype and np.array_equal(a, b)


def test_backend_selection_errors():
    with pytest.raises(ValueError):
        set_backend("fortran")


def test_env_flag_disables_numba(monkeypatch):
    monkeypatch.setenv("OSCIFIT_DISABLE_NUMBA", "1")
    assert _kernels._default_backend() == "numpy"
    monkeypatch.setenv("OSCIFIT_DISABLE_NUMBA", "0")
    expected = "numba" if "numba" in _kernels._BACKENDS else "numpy"
    assert _kernels._default_backend() == expected


# ---------------------------------------------------------------- checkpoints


def _stack():
    r = rng(4)
    return [
        Reshape(16, 1), Conv1D(1, 3, 5, r), ReLU(), MaxPool1D(2), UpSample1D(2), Flatten(),
        Dense(48, 4, r, F64), Sigmoid(), Linear(), Concat(),
    ]


def test_checkpoint_roundtrip(tmp_path):
    layers = _stack()
    path = save_layers(tmp_path / "a.ndn", layers, {"note": "x"})
    back, meta = load_layers(path)
    assert meta == {"note": "x"}
    assert [type(a) for a in back] == [type(a) for a in layers]
    for a, b in zip(layers, back):
        assert a.hyper() == b.hyper()
        for p, q in zip(a.params, b.params):
            assert p.dtype == q.dtype and np.array_equal(p, q)
    save_layers(tmp_path / "b.ndn", back, meta)
    assert (tmp_path / "a.ndn").read_bytes() == (tmp_path / "b.ndn").read_bytes()


def test_checkpoint_rejects_damage(tmp_path):
    path = save_layers(tmp_path / "a.ndn", _stack(), {})
    raw = path.read_bytes()
    cases = {"magic": b"ABCD" + raw[4:], "short": raw[:-5], "long": raw + b"\0"}
    for name, blob in cases.items():
        (tmp_path / name).write_bytes(blob)
        with pytest.raises(CheckpointError):
            load_layers(tmp_path / name)
