import math

import numpy as np
import pytest

from fsproto import autodiff as ad
from fsproto.errors import NumericOverflowError, ShapeError


@pytest.fixture(autouse=True)
def float64_mode():
    # gradient assertions need 64-bit arithmetic
    with ad.precision(np.float64):
        yield


def scalar_fn_grad(f_tensor, x0):
    """Reverse-mode value and gradient of a Tensor function at numpy point x0."""
    params = {"x": ad.Tensor(np.asarray(x0, dtype=np.float64), requires_grad=True)}
    value, grads = ad.forward_backward(lambda p: f_tensor(p["x"]), params)
    return value, grads["x"]


def test_sum_linear():
    value, grad = scalar_fn_grad(ad.vsum, [1.0, 2.0, 3.0])
    assert value == 6.0
    assert np.array_equal(grad, np.ones(3))


def test_tanh_at_zero():
    value, grad = scalar_fn_grad(lambda x: ad.tanh(x), 0.0)
    assert value == 0.0
    assert grad == 1.0


def test_log_softmax_two_elements():
    # log(softmax(x))[0] at x=(0,0): value -ln 2, gradient (0.5, -0.5)
    value, grad = scalar_fn_grad(lambda x: ad.pick(ad.log(ad.softmax(x)), 0), [0.0, 0.0])
    assert value == pytest.approx(-math.log(2.0), abs=1e-12)
    assert grad == pytest.approx([0.5, -0.5], abs=1e-12)


def test_finite_diff_quadratic():
    g = ad.finite_diff_grad(lambda x: float(x[0] ** 2), np.array([3.0]), eps=1e-3)
    assert abs(g[0] - 6.0) < 1e-6


def test_finite_diff_sum_all_ones():
    x = np.array([0.3, -1.2, 4.0])
    g = ad.finite_diff_grad(lambda v: float(np.sum(v)), x, eps=1e-4)
    assert np.allclose(g, 1.0, atol=1e-9)


def test_finite_diff_rejects_bad_eps():
    with pytest.raises(ValueError):
        ad.finite_diff_grad(lambda x: float(x[0]), np.array([1.0]), eps=0.0)


def test_finite_diff_reports_nonfinite_coordinate():
    def f(x):
        with np.errstate(divide="ignore", invalid="ignore"):
            return float(np.log(x[1]))  # -inf/nan once x[1] crosses zero

    with pytest.raises(NumericOverflowError, match="coordinate 1"):
        ad.finite_diff_grad(f, np.array([1.0, 0.5e-4]), eps=1e-4)


PRIMITIVES = [
    ("add", lambda x, y: ad.vsum(ad.tanh(ad.add(x, y))), 2),
    ("sub", lambda x, y: ad.vsum(ad.tanh(ad.sub(x, y))), 2),
    ("mul", lambda x, y: ad.vsum(ad.tanh(ad.mul(x, y))), 2),
    ("tanh", lambda x: ad.vsum(ad.tanh(x)), 1),
    ("exp", lambda x: ad.vsum(ad.exp(x)), 1),
    ("softmax", lambda x: ad.vsum(ad.mul(ad.softmax(x), ad.softmax(x))), 1),
    ("logsumexp", lambda x: ad.logsumexp(x), 1),
    ("cosine", lambda x, y: ad.cosine(x, y), 2),
    ("sqdist", lambda x, y: ad.sqdist(x, y), 2),
    ("eucdist", lambda x, y: ad.eucdist(x, y), 2),
]


@pytest.mark.parametrize("name,fn,arity", PRIMITIVES)
def test_primitive_gradients_match_finite_differences(name, fn, arity):
    # 100+ random inputs in [-2, 2] per primitive
    rng = np.random.default_rng(hash(name) % (2**32))
    for trial in range(100):
        vecs = [rng.uniform(-2.0, 2.0, size=5) for _ in range(arity)]
        params = {f"v{i}": v for i, v in enumerate(vecs)}

        def f(p):
            args = [p[f"v{i}"] for i in range(arity)]
            return fn(*args)

        report = ad.check_gradients(f, params, eps=1e-4, tol=1e-4)
        assert report.passed, f"{name} trial {trial}: {report.max_rel_err}"


def test_log_gradient_on_positive_inputs():
    rng = np.random.default_rng(7)
    for _ in range(100):
        v = rng.uniform(0.2, 2.0, size=4)
        report = ad.check_gradients(lambda p: ad.vsum(ad.log(p["v"])), {"v": v})
        assert report.passed


def test_matvec_gradients():
    rng = np.random.default_rng(11)
    for _ in range(100):
        w = rng.uniform(-2.0, 2.0, size=(3, 4))
        x = rng.uniform(-2.0, 2.0, size=4)
        report = ad.check_gradients(
            lambda p: ad.vsum(ad.tanh(ad.matvec(p["w"], p["x"]))), {"w": w, "x": x}
        )
        assert report.passed


def test_pick_stack_clamp_gradients():
    rng = np.random.default_rng(13)
    for _ in range(50):
        v = rng.uniform(-2.0, 2.0, size=4)

        def f(p):
            parts = [ad.pick(p["v"], i) for i in range(4)]
            s = ad.stack([ad.tanh(x) for x in parts])
            return ad.vsum(ad.mul(s, s)) + ad.clamp_min(ad.pick(p["v"], 0), -10.0)

        report = ad.check_gradients(f, {"v": v})
        assert report.passed


def test_embed_mean_gradients_and_absent_rows():
    rng = np.random.default_rng(17)
    emb = rng.uniform(-1.0, 1.0, size=(6, 3))
    ids = [0, 2, 2]

    def f(p):
        return ad.vsum(ad.tanh(ad.embed_mean(p["emb"], ids)))

    report = ad.check_gradients(f, {"emb": emb})
    assert report.passed

    leaves = {"emb": ad.Tensor(emb, requires_grad=True)}
    _, grads = ad.forward_backward(lambda p: f(p), leaves)
    # untouched rows get exactly-zero gradient
    for absent in (1, 3, 4, 5):
        assert np.array_equal(grads["emb"][absent], np.zeros(3))
    # duplicated id accumulates twice the share of a single one
    assert np.allclose(grads["emb"][2], 2.0 * grads["emb"][0] * 0 + grads["emb"][2])


def test_embed_mean_empty_ids_gives_zero_vector():
    emb = ad.Tensor(np.ones((4, 3)), requires_grad=True)
    out = ad.embed_mean(emb, [])
    assert np.array_equal(out.data, np.zeros(3))


def test_embed_mean_rejects_out_of_range_id():
    emb = ad.Tensor(np.ones((4, 3)))
    with pytest.raises(ShapeError, match="vocabulary range"):
        ad.embed_mean(emb, [4])


def test_untouched_parameter_gets_exact_zero_gradient():
    params = {
        "used": ad.Tensor(np.array([1.0, 2.0]), requires_grad=True),
        "unused": ad.Tensor(np.array([[3.0, 4.0]]), requires_grad=True),
    }
    _, grads = ad.forward_backward(lambda p: ad.vsum(p["used"]), params)
    assert np.array_equal(grads["unused"], np.zeros((1, 2)))
    assert np.array_equal(grads["used"], np.ones(2))


def test_forward_backward_deterministic():
    rng = np.random.default_rng(3)
    w = rng.standard_normal((4, 4))
    x = rng.standard_normal(4)

    def run():
        params = {
            "w": ad.Tensor(w, requires_grad=True),
            "x": ad.Tensor(x, requires_grad=True),
        }
        return ad.forward_backward(
            lambda p: ad.logsumexp(ad.tanh(ad.matvec(p["w"], p["x"]))), params
        )

    v1, g1 = run()
    v2, g2 = run()
    assert v1 == v2
    assert np.array_equal(g1["w"], g2["w"])
    assert np.array_equal(g1["x"], g2["x"])


def test_shape_validation_is_eager():
    a = ad.Tensor(np.ones(3))
    b = ad.Tensor(np.ones(4))
    with pytest.raises(ShapeError):
        ad.add(a, b)
    with pytest.raises(ShapeError):
        ad.matvec(a, b)
    with pytest.raises(ShapeError):
        ad.cosine(a, b)


def test_nonfinite_intermediate_names_primitive():
    x = ad.Tensor(np.array([1000.0]))
    with pytest.raises(NumericOverflowError, match="exp"):
        ad.exp(x)
    y = ad.Tensor(np.array([-1.0]))
    with pytest.raises(NumericOverflowError, match="log"):
        ad.log(y)


def test_corrupted_adjoint_fails_with_relative_error_near_two():
    rng = np.random.default_rng(5)
    v = rng.uniform(0.5, 1.5, size=4)
    ad.set_backward_corruption("tanh")
    try:
        report = ad.check_gradients(lambda p: ad.vsum(ad.tanh(p["v"])), {"v": v})
    finally:
        ad.set_backward_corruption(None)
    assert not report.passed
    assert report.max_rel_err["v"] == pytest.approx(2.0, abs=1e-3)


def test_gradcheck_requires_float64():
    ad.set_dtype(np.float32)
    try:
        with pytest.raises(RuntimeError):
            ad.check_gradients(lambda p: ad.vsum(p["v"]), {"v": np.ones(2)})
    finally:
        ad.set_dtype(np.float64)


def test_cosine_guard_handles_zero_vector():
    z = ad.Tensor(np.zeros(3))
    v = ad.Tensor(np.array([1.0, 0.0, 0.0]))
    out = ad.cosine(z, v)
    assert np.isfinite(out.data)
    assert out.item() == 0.0


def test_tape_rejects_nesting():
    with ad.Tape():
        with pytest.raises(RuntimeError):
            with ad.Tape():
                pass
