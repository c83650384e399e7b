import numpy as np

from disrefine import nn

from oracles import finite_difference_grad


def _rel(a, b, floor=1e-7):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def test_conv3x3_gradients():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 6, 6))
    w = rng.standard_normal((4, 3, 3, 3)) * 0.5
    bias = rng.standard_normal(4) * 0.1
    y, ctx = nn.conv3x3_forward(x, w, bias)
    dy = rng.standard_normal(y.shape)
    dx, dw, db = nn.conv3x3_backward(dy, ctx, w)

    def loss_wrt_x(xv):
        yv, _ = nn.conv3x3_forward(xv, w, bias)
        return float((yv * dy).sum())

    def loss_wrt_w(wv):
        yv, _ = nn.conv3x3_forward(x, wv, bias)
        return float((yv * dy).sum())

    def loss_wrt_b(bv):
        yv, _ = nn.conv3x3_forward(x, w, bv)
        return float((yv * dy).sum())

    assert _rel(dx, finite_difference_grad(loss_wrt_x, x)).max() < 1e-5
    assert _rel(dw, finite_difference_grad(loss_wrt_w, w)).max() < 1e-5
    assert _rel(db, finite_difference_grad(loss_wrt_b, bias)).max() < 1e-5


def test_conv1x1_gradients():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 4, 5, 5))
    w = rng.standard_normal((3, 4, 1, 1))
    bias = rng.standard_normal(3)
    y = nn.conv1x1_forward(x, w, bias)
    dy = rng.standard_normal(y.shape)
    dx, dw, db = nn.conv1x1_backward(dy, x, w)
    assert _rel(dx, finite_difference_grad(lambda v: float((nn.conv1x1_forward(v, w, bias) * dy).sum()), x)).max() < 1e-5
    assert _rel(dw, finite_difference_grad(lambda v: float((nn.conv1x1_forward(x, v, bias) * dy).sum()), w)).max() < 1e-5
    assert _rel(db, finite_difference_grad(lambda v: float((nn.conv1x1_forward(x, w, v) * dy).sum()), bias)).max() < 1e-5


def test_maxpool_forward_and_tie_routing():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    y, idx = nn.maxpool2_forward(x)
    assert y[0, 0, 0, 0] == 4.0
    dx = nn.maxpool2_backward(np.ones_like(y), idx)
    assert dx[0, 0, 1, 1] == 1.0 and dx.sum() == 1.0
    # ties route to the first maximum in window order
    tie = np.full((1, 1, 2, 2), 7.0)
    y, idx = nn.maxpool2_forward(tie)
    dx = nn.maxpool2_backward(np.ones_like(y), idx)
    assert dx[0, 0, 0, 0] == 1.0 and dx.sum() == 1.0


def test_maxpool_gradient():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 6, 6))
    y, idx = nn.maxpool2_forward(x)
    dy = rng.standard_normal(y.shape)
    dx = nn.maxpool2_backward(dy, idx)

    def loss(v):
        yv, _ = nn.maxpool2_forward(v)
        return float((yv * dy).sum())

    fd = finite_difference_grad(loss, x)
    assert _rel(dx, fd).max() < 1e-5


def test_upsample_roundtrip_and_gradient():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 2, 3, 3))
    y = nn.upsample_forward(x, 2)
    assert y.shape == (2, 2, 6, 6)
    assert (y[:, :, ::2, ::2] == x).all()
    dy = rng.standard_normal(y.shape)
    dx = nn.upsample_backward(dy, 2)
    fd = finite_difference_grad(lambda v: float((nn.upsample_forward(v, 2) * dy).sum()), x)
    assert _rel(dx, fd).max() < 1e-5
    y4 = nn.upsample_forward(x, 4)
    assert y4.shape == (2, 2, 12, 12)
    assert nn.upsample_backward(np.ones_like(y4), 4).max() == 16.0


def test_sigmoid_stable_and_gradient():
    x = np.array([[-800.0, -10.0, 0.0, 10.0, 800.0]])
    y = nn.sigmoid(x)
    assert np.isfinite(y).all()
    assert y[0, 0] == 0.0 or y[0, 0] < 1e-300
    assert abs(y[0, 2] - 0.5) < 1e-15
    rng = np.random.default_rng(4)
    x = rng.standard_normal((3, 4))
    y = nn.sigmoid(x)
    dy = rng.standard_normal(y.shape)
    dx = nn.sigmoid_backward(dy, y)
    fd = finite_difference_grad(lambda v: float((nn.sigmoid(v) * dy).sum()), x)
    assert _rel(dx, fd).max() < 1e-5


def test_relu_gradient():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 4)) + 0.05  # keep away from the kink
    y = nn.relu_forward(x)
    dy = rng.standard_normal(y.shape)
    dx = nn.relu_backward(dy, x)
    fd = finite_difference_grad(lambda v: float((nn.relu_forward(v) * dy).sum()), x)
    assert _rel(dx, fd).max() < 1e-4


def test_adam_converges_on_quadratic():
    params = {"w": np.array([5.0, -3.0])}
    opt = nn.Adam(params, learning_rate=0.1)
    for _ in range(500):
        opt.step({"w": 2.0 * params["w"]})
    assert np.abs(params["w"]).max() < 1e-3
