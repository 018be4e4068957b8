"""Unit tests for the reverse-mode autodiff core.

Every differentiable op is checked against central finite differences; the
graph mechanics (accumulation, freezing, scalar-only backward) are checked
directly.
"""

import numpy as np
import pytest

from dualprompt import autodiff as ad
from dualprompt.autodiff import DomainError, ShapeError, Tensor


def _t(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def rng(seed=0):
    return np.random.RandomState(seed)


# -- forward values ------------------------------------------------------------


def test_add_matches_numpy():
    a, b = rng().randn(3, 4), rng(1).randn(3, 4)
    out = ad.add(_t(a), _t(b))
    assert np.allclose(out.data, a + b)


def test_add_broadcasts_row_vector():
    a, b = rng().randn(3, 4), rng(1).randn(4)
    out = ad.add(_t(a), _t(b))
    assert np.allclose(out.data, a + b)


def test_add_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        ad.add(_t(np.zeros((2, 3))), _t(np.zeros((3, 2))))


def test_matmul_matches_numpy():
    a, b = rng().randn(3, 4), rng(1).randn(4, 5)
    assert np.allclose(ad.matmul(_t(a), _t(b)).data, a @ b)


def test_matmul_incompatible_raises():
    with pytest.raises(ShapeError):
        ad.matmul(_t(np.zeros((2, 3))), _t(np.zeros((2, 3))))


def test_softmax_rows_sum_to_one():
    out = ad.softmax(_t(rng().randn(5, 7)))
    assert np.allclose(out.data.sum(axis=-1), 1.0)


def test_layer_norm_zero_mean_unit_var():
    out = ad.layer_norm(_t(rng().randn(4, 16)))
    assert np.allclose(out.data.mean(axis=-1), 0.0, atol=1e-12)
    assert np.allclose(out.data.var(axis=-1), 1.0, atol=1e-3)


def test_l2_normalize_unit_norm():
    out = ad.l2_normalize(_t(rng().randn(6, 8)))
    assert np.allclose(np.linalg.norm(out.data, axis=-1), 1.0)


def test_l2_normalize_zero_vector_raises():
    with pytest.raises(DomainError):
        ad.l2_normalize(_t(np.zeros((1, 4))))


def test_log_nonpositive_raises():
    with pytest.raises(DomainError):
        ad.log(_t([[1.0, -0.5]]))


def test_cosine_similarity_of_parallel_vectors_is_one():
    v = rng().randn(8)
    sim = ad.cosine_similarity(_t(v), _t(3.0 * v))
    assert np.allclose(sim.data, 1.0)


def test_concat_and_slices_roundtrip():
    a, b = rng().randn(2, 4), rng(1).randn(3, 4)
    cat = ad.concat([_t(a), _t(b)], axis=0)
    assert np.allclose(ad.slice_rows(cat, 2, 5).data, b)
    assert np.allclose(ad.slice_cols(cat, 1, 3).data, np.vstack([a, b])[:, 1:3])


# -- gradients -----------------------------------------------------------------


@pytest.mark.parametrize(
    "name,build",
    [
        ("add", lambda p: ad.tsum(ad.add(p[0], p[1]))),
        ("add_broadcast", lambda p: ad.tsum(ad.mul(ad.add(p[0], p[2]), p[0]))),
        ("mul", lambda p: ad.tsum(ad.mul(p[0], p[1]))),
        ("matmul", lambda p: ad.tsum(ad.matmul(p[0], ad.transpose(p[1])))),
        ("relu", lambda p: ad.tsum(ad.relu(p[0]))),
        ("exp", lambda p: ad.tsum(ad.exp(p[0]))),
        ("log", lambda p: ad.tsum(ad.log(ad.exp(p[0])))),
        ("power", lambda p: ad.tsum(ad.power(ad.exp(p[0]), 2.5))),
        ("softmax", lambda p: ad.tsum(ad.mul(ad.softmax(p[0]), p[1]))),
        ("layer_norm", lambda p: ad.tsum(ad.mul(ad.layer_norm(p[0]), p[1]))),
        ("l2_normalize", lambda p: ad.tsum(ad.mul(ad.l2_normalize(p[0]), p[1]))),
        ("tmean", lambda p: ad.tmean(ad.mul(p[0], p[0]))),
        ("tsum_axis", lambda p: ad.tsum(ad.mul(ad.tsum(p[0], axis=0), ad.tsum(p[1], axis=0)))),
        ("concat", lambda p: ad.tsum(ad.power(ad.concat([p[0], p[1]], axis=0), 2.0))),
        ("slice", lambda p: ad.tsum(ad.slice_cols(ad.slice_rows(p[0], 1, 3), 0, 2))),
        ("stack_rows", lambda p: ad.tsum(ad.stack_rows([ad.tsum(p[0], axis=1), ad.tsum(p[1], axis=1)]))),
    ],
)
def test_op_gradients_match_finite_differences(name, build):
    r = rng(hash(name) % 2**31)
    params = [_t(0.5 + r.rand(3, 4)), _t(0.5 + r.rand(3, 4)), _t(0.5 + r.rand(4))]
    err = ad.finite_difference_check(lambda: build(params), params)
    assert err < 1e-6, f"{name}: relative error {err}"


def test_cosine_similarity_gradient():
    params = [_t(rng(5).randn(8)), _t(rng(6).randn(8))]
    err = ad.finite_difference_check(
        lambda: ad.cosine_similarity(params[0], params[1]), params)
    assert err < 1e-6


def test_gradient_accumulates_across_reuse():
    x = _t([[2.0]])
    loss = ad.tsum(ad.add(ad.mul(x, x), x))  # x^2 + x -> d/dx = 2x + 1 = 5
    loss.backward()
    assert np.allclose(x.grad, 5.0)


def test_frozen_tensors_get_no_grad():
    x, w = _t([[1.0, 2.0]]), _t([[3.0], [4.0]], grad=False)
    ad.tsum(ad.matmul(x, w)).backward()
    assert x.grad is not None
    assert w.grad is None


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        _t([[1.0, 2.0]]).backward()


def test_finite_difference_check_rejects_bad_eps():
    with pytest.raises(ValueError):
        ad.finite_difference_check(lambda: ad.tsum(_t([[1.0]])), [], eps=0.0)


def test_two_layer_mlp_gradient():
    r = rng(3)
    params = [_t(r.randn(4, 8) * 0.5), _t(r.randn(8) * 0.5), _t(r.randn(8, 2) * 0.5)]
    x = Tensor(r.randn(5, 4))

    def f():
        # tanh-free smooth nonlinearity: relu kinks break finite differences
        h = ad.exp(ad.scale(ad.add(ad.matmul(x, params[0]), params[1]), 0.1))
        return ad.tmean(ad.power(ad.matmul(h, params[2]), 2.0))

    assert ad.finite_difference_check(f, params) < 1e-6
