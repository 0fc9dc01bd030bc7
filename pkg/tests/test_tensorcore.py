import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conex.tensorcore import (
    BN_EPS,
    BatchNorm,
    ComplexVector,
    ConvParams,
    conv2d,
    conv_backward,
    conv_forward,
    hermitian_quad_score,
    hermitian_triple_score,
    stack_input,
)

cv = ComplexVector.from_complex


def naive_quad(g, h, r, t):
    """The four-term real expansion, summed coordinate by coordinate."""
    total = 0.0
    for k in range(len(g.re)):
        total += g.re[k] * h.re[k] * r.re[k] * t.re[k]
        total += g.re[k] * h.re[k] * r.im[k] * t.im[k]
        total += g.im[k] * h.im[k] * r.re[k] * t.im[k]
        total -= g.im[k] * h.im[k] * r.im[k] * t.re[k]
    return total


def test_quad_score_examples():
    assert hermitian_quad_score(cv([1 + 1j]), cv([1]), cv([1j]), cv([1j])) == 1.0
    z = cv([0j, 0j])
    assert hermitian_quad_score(z, cv([1 + 2j, 3]), cv([1j, 2]), cv([4, 5j])) == 0.0
    assert hermitian_quad_score(cv([1 + 1j]), cv([2]), cv([1]), cv([2])) == 4.0


def test_quad_score_dimension_mismatch():
    with pytest.raises(ValueError):
        hermitian_quad_score(cv([1]), cv([1, 2]), cv([1]), cv([1]))


def test_triple_score_antisymmetry_example():
    h, r, t = cv([1]), cv([1j]), cv([1j])
    assert hermitian_triple_score(h, r, t) == 1.0
    assert hermitian_triple_score(t, r, h) == -1.0


def test_triple_score_matches_complex_oracle(rng):
    for _ in range(20):
        h, r, t = (rng.normal(size=4) + 1j * rng.normal(size=4) for _ in range(3))
        expected = np.real(np.sum(h * r * np.conj(t)))
        assert abs(hermitian_triple_score(cv(h), cv(r), cv(t)) - expected) < 1e-12


def test_quad_score_matches_expansion_oracle(rng):
    for _ in range(20):
        vs = [cv(rng.normal(size=5) + 1j * rng.normal(size=5)) for _ in range(4)]
        assert abs(hermitian_quad_score(*vs) - naive_quad(*vs)) < 1e-12


def test_identity_relation_gives_squared_norm(rng):
    h = cv(rng.normal(size=6) + 1j * rng.normal(size=6))
    score = hermitian_triple_score(h, cv(np.ones(6)), h)
    assert score >= 0
    assert score == pytest.approx(np.sum(np.abs(h.to_complex()) ** 2), rel=1e-12)


finite = st.floats(-10, 10, allow_nan=False)
vec = arrays(np.float64, 4, elements=finite)


@given(vec, vec, vec, vec, vec, vec)
def test_degeneration_is_bitwise(hr, hi, rr, ri, tr, ti):
    h, r, t = ComplexVector(hr, hi), ComplexVector(rr, ri), ComplexVector(tr, ti)
    assert hermitian_triple_score(h, r, t) == hermitian_quad_score(ComplexVector.ones(4), h, r, t)


@given(vec, vec, vec, vec, vec)
def test_real_relation_is_symmetric(hr, hi, rr, tr, ti):
    h, t = ComplexVector(hr, hi), ComplexVector(tr, ti)
    r = ComplexVector(rr, np.zeros(4))
    assert hermitian_triple_score(h, r, t) == pytest.approx(hermitian_triple_score(t, r, h), abs=1e-9)


def test_antisymmetry_exists():
    h, r, t = cv([1 + 2j]), cv([0.5 + 1j]), cv([2 - 1j])
    assert hermitian_triple_score(h, r, t) != hermitian_triple_score(t, r, h)


def test_stack_input():
    img = stack_input(cv([1 + 2j, 3 + 4j]), cv([5 + 6j, 7 + 8j]))
    np.testing.assert_array_equal(img, [[1, 3], [2, 4], [5, 7], [6, 8]])
    assert stack_input(cv(np.zeros(3)), cv(np.zeros(3))).shape == (4, 3)
    assert not stack_input(cv(np.zeros(3)), cv(np.zeros(3))).any()


# --------------------------------------------------------------------------
# gate


def exact_identity_bn(n):
    # eval-mode BN divides by sqrt(var + eps); this makes the denominator 1
    return BatchNorm(np.ones(n), np.zeros(n), np.zeros(n), np.full(n, 1.0 - BN_EPS))


def identity_conv(d, c):
    p = ConvParams.zeros(d, c)
    p.bn0, p.bn1, p.bn2 = exact_identity_bn(1), exact_identity_bn(c), exact_identity_bn(2 * d)
    return p


def random_conv(rng, d, c):
    def bn(n):
        return BatchNorm(rng.uniform(0.5, 1.5, n), rng.normal(0, 0.2, n),
                         rng.normal(0, 0.3, n), rng.uniform(0.5, 2.0, n))

    return ConvParams(rng.normal(size=(c, 3, 3)), rng.normal(0, 0.3, (c * 4 * d, 2 * d)),
                      rng.normal(0, 0.3, 2 * d), bn(1), bn(c), bn(2 * d))


def random_cv(rng, *shape):
    return ComplexVector(rng.normal(size=shape), rng.normal(size=shape))


def test_zero_kernels_give_zero_gate(rng):
    h, r = random_cv(rng, 5), random_cv(rng, 5)
    gamma, tape = conv_forward(h, r, identity_conv(5, 3), "eval")
    assert tape is None
    assert not gamma.re.any() and not gamma.im.any()


def test_zero_input_gives_relu_of_bias(rng):
    d = 4
    p = identity_conv(d, 2)
    p.kernels[:] = rng.normal(size=p.kernels.shape)
    p.b[:] = rng.normal(size=2 * d)
    zero = ComplexVector(np.zeros(d), np.zeros(d))
    gamma, _ = conv_forward(zero, zero, p, "eval")
    expected = np.maximum(p.b, 0)
    np.testing.assert_allclose(gamma.re, expected[:d], rtol=1e-15, atol=0)
    np.testing.assert_allclose(gamma.im, expected[d:], rtol=1e-15, atol=0)


def naive_gate(h_re, h_im, r_re, r_im, p: ConvParams, batch_stats=False):
    """Loop-by-loop reference of the whole gate for a batch (no dropout)."""
    n, d = h_re.shape
    c = p.channels

    def bn(values, norm, channel_of):
        out = np.empty_like(values)
        for ch in range(norm.size):
            idx = [i for i in np.ndindex(values.shape) if channel_of(i) == ch]
            xs = np.array([values[i] for i in idx])
            if batch_stats:
                mean = sum(xs) / len(xs)
                var = sum((x - mean) ** 2 for x in xs) / len(xs)
            else:
                mean, var = norm.running_mean[ch], norm.running_var[ch]
            for i in idx:
                out[i] = (values[i] - mean) / np.sqrt(var + BN_EPS) * norm.weight[ch] + norm.bias[ch]
        return out

    img = np.zeros((n, 4, d))
    for b in range(n):
        for k in range(d):
            img[b, 0, k], img[b, 1, k], img[b, 2, k], img[b, 3, k] = h_re[b, k], h_im[b, k], r_re[b, k], r_im[b, k]
    img = bn(img, p.bn0, lambda i: 0)
    fmap = np.zeros((n, c, 4, d))
    for b in range(n):
        for ch in range(c):
            for y in range(4):
                for x in range(d):
                    s = 0.0
                    for i in range(3):
                        for j in range(3):
                            yy, xx = y + i - 1, x + j - 1
                            if 0 <= yy < 4 and 0 <= xx < d:
                                s += p.kernels[ch, i, j] * img[b, yy, xx]
                    fmap[b, ch, y, x] = s
    fmap = bn(fmap, p.bn1, lambda i: i[1])
    fmap = np.maximum(fmap, 0)
    z = np.zeros((n, 2 * d))
    for b in range(n):
        flat = [fmap[b, ch, y, x] for ch in range(c) for y in range(4) for x in range(d)]
        for o in range(2 * d):
            z[b, o] = sum(flat[i] * p.W[i, o] for i in range(len(flat))) + p.b[o]
    z = bn(z, p.bn2, lambda i: i[1])
    z = np.maximum(z, 0)
    return z[:, :d], z[:, d:]


@pytest.mark.parametrize("mode", ["eval", "train"])
def test_gate_matches_loop_oracle(rng, mode):
    d, c, n = 3, 2, 4
    p = random_conv(rng, d, c)
    h, r = random_cv(rng, n, d), random_cv(rng, n, d)
    gamma, _ = conv_forward(h, r, p, mode, update_running=False)
    exp_re, exp_im = naive_gate(h.re, h.im, r.re, r.im, p, batch_stats=mode == "train")
    np.testing.assert_allclose(gamma.re, exp_re, atol=1e-12, rtol=0)
    np.testing.assert_allclose(gamma.im, exp_im, atol=1e-12, rtol=0)


def test_single_vector_equals_batch_of_one(rng):
    p = random_conv(rng, 5, 3)
    h, r = random_cv(rng, 5), random_cv(rng, 5)
    g1, _ = conv_forward(h, r, p, "eval")
    g2, _ = conv_forward(ComplexVector(h.re[None], h.im[None]), ComplexVector(r.re[None], r.im[None]), p, "eval")
    np.testing.assert_array_equal(g1.re, g2.re[0])


def test_gate_output_length_and_flatten(rng):
    for d, c in [(1, 1), (3, 2), (7, 5)]:
        p = random_conv(rng, d, c)
        gamma, tape = conv_forward(random_cv(rng, 3, d), random_cv(rng, 3, d), p, "train", update_running=False)
        assert gamma.re.shape == (3, d)
        assert tape.flat.shape == (3, c * 4 * d)


def test_shape_mismatch(rng):
    with pytest.raises(ValueError):
        conv_forward(random_cv(rng, 4), random_cv(rng, 4), random_conv(rng, 5, 2), "eval")
    with pytest.raises(ValueError):
        ConvParams(np.zeros((2, 3, 3)), np.zeros((10, 4)), np.zeros(4),
                   BatchNorm.identity(1), BatchNorm.identity(2), BatchNorm.identity(4))


def test_train_mode_updates_running_stats(rng):
    p = random_conv(rng, 3, 2)
    before = p.bn2.running_mean.copy()
    conv_forward(random_cv(rng, 4, 3), random_cv(rng, 4, 3), p, "train")
    assert not np.array_equal(before, p.bn2.running_mean)
    assert (p.bn2.running_var > 0).all()


def test_eval_mode_is_deterministic_and_tape_free(rng):
    p = random_conv(rng, 4, 2)
    h, r = random_cv(rng, 3, 4), random_cv(rng, 3, 4)
    a, tape = conv_forward(h, r, p, "eval", input_dropout=0.5, feature_dropout=0.5)
    b, _ = conv_forward(h, r, p, "eval")
    assert tape is None
    np.testing.assert_array_equal(a.re, b.re)


def test_backward_needs_tape(rng):
    with pytest.raises(ValueError):
        conv_backward(None, random_cv(rng, 3), random_conv(rng, 3, 1))


def test_zero_upstream_gradient(rng):
    p = random_conv(rng, 4, 2)
    h, r = random_cv(rng, 3, 4), random_cv(rng, 3, 4)
    _, tape = conv_forward(h, r, p, "train", update_running=False)
    grads, gh, gr = conv_backward(tape, ComplexVector(np.zeros((3, 4)), np.zeros((3, 4))), p)
    assert all(not g.any() for g in grads.values())
    assert not gh.re.any() and not gr.im.any()


def test_dead_relu_blocks_gradient(rng):
    d = 4
    p = random_conv(rng, d, 2)
    h, r = random_cv(rng, 3, d), random_cv(rng, 3, d)
    _, tape = conv_forward(h, r, p, "train", update_running=False)
    dead = np.argwhere(tape.pre_relu2 < 0)
    assert len(dead)
    up = np.zeros((3, 2 * d))
    for b, k in dead:
        up[b, k] = 1.0
    grads, gh, gr = conv_backward(tape, ComplexVector(up[:, :d], up[:, d:]), p)
    assert all(not g.any() for g in grads.values())
    assert not gh.re.any() and not gr.re.any()


@pytest.mark.parametrize("p_in,p_feat", [(0.0, 0.0), (0.3, 0.4)])
def test_gate_gradients_finite_differences(rng, p_in, p_feat):
    d, c, n = 3, 2, 4
    p = random_conv(rng, d, c)
    h, r = random_cv(rng, n, d), random_cv(rng, n, d)
    w = rng.normal(size=(n, 2 * d))

    def loss():
        g, tape = conv_forward(h, r, p, "train", rng=np.random.default_rng(7), input_dropout=p_in,
                               feature_dropout=p_feat, update_running=False)
        return float(np.sum(w[:, :d] * g.re + w[:, d:] * g.im)), tape

    _, tape = loss()
    grads, gh, gr = conv_backward(tape, ComplexVector(w[:, :d], w[:, d:]), p)
    targets = dict(p.trainable())
    analytic = dict(grads)
    for name, vecpart in (("h.re", h.re), ("h.im", h.im), ("r.re", r.re), ("r.im", r.im)):
        targets[name] = vecpart
    analytic.update({"h.re": gh.re, "h.im": gh.im, "r.re": gr.re, "r.im": gr.im})
    eps = 1e-5
    for name, arr in targets.items():
        flat = arr.reshape(-1)
        num = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss()[0]
            flat[i] = orig - eps
            down = loss()[0]
            flat[i] = orig
            num[i] = (up - down) / (2 * eps)
        a = analytic[name].reshape(-1)
        err = np.abs(a - num)
        rel = err / np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-7)
        # entries that are zero analytically only carry rounding noise
        assert np.all((rel <= 1e-4) | (err <= 1e-8)), name


def test_bias_has_no_gradient_under_batch_statistics(rng):
    # train-mode normalisation removes any per-feature shift before the gate
    p = random_conv(rng, 4, 2)
    _, tape = conv_forward(random_cv(rng, 5, 4), random_cv(rng, 5, 4), p, "train", update_running=False)
    grads, _, _ = conv_backward(tape, random_cv(rng, 5, 4), p)
    assert np.abs(grads["b"]).max() < 1e-12


def test_conv2d_translation_equivariance(rng):
    d = 9
    img = rng.normal(size=(1, 4, d))
    img[:, :, -1] = 0  # nothing falls off the right edge
    shifted = np.zeros_like(img)
    shifted[:, :, 1:] = img[:, :, :-1]
    k = rng.normal(size=(3, 3, 3))
    out, out_shifted = conv2d(img, k), conv2d(shifted, k)
    np.testing.assert_allclose(out_shifted[..., 2 : d - 1], out[..., 1 : d - 2], atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_gate_shapes_property(d, c, n, seed):
    rng = np.random.default_rng(seed)
    p = random_conv(rng, d, c)
    gamma, tape = conv_forward(random_cv(rng, n, d), random_cv(rng, n, d), p, "train", update_running=False)
    assert gamma.re.shape == gamma.im.shape == (n, d)
    assert (gamma.re >= 0).all() and (gamma.im >= 0).all()
    assert tape.flat.shape[1] == c * 4 * d
