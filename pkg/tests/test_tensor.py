import numpy as np
import pytest

from tgdfer.tensor import (
    DegenerateVectorError,
    MissingGradError,
    ParameterSet,
    ShapeError,
    Tape,
    Tensor,
    add,
    backward,
    concat_cols,
    concat_rows,
    cosine_similarity,
    cross_entropy,
    gelu,
    l2_normalize,
    layer_norm,
    matmul,
    mean_rows,
    mul,
    overlap_mean,
    relu,
    scale,
    sgd_step,
    slice_cols,
    slice_rows,
    softmax,
    sub,
    sum_all,
    topk_mean_rows,
    transpose,
)


class TestMatmul:
    def test_identity(self):
        b = Tensor([[5.0, 6.0], [7.0, 8.0]])
        out = matmul(Tensor(np.eye(2)), b)
        np.testing.assert_array_equal(out.values, b.values)

    def test_hand_product(self):
        out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        np.testing.assert_array_equal(out.values, [[3.0], [7.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_vector_matrix(self):
        out = matmul(Tensor([1.0, 2.0]), Tensor([[1.0, 0.0], [0.0, 1.0]]))
        np.testing.assert_array_equal(out.values, [1.0, 2.0])


class TestSoftmax:
    def test_uniform_input(self):
        out = softmax(Tensor([0.0, 0.0, 0.0]), axis=0)
        np.testing.assert_allclose(out.values, np.full(3, 1 / 3), rtol=0, atol=1e-15)

    def test_closed_form(self):
        out = softmax(Tensor([0.0, np.log(2.0)]), axis=0)
        np.testing.assert_allclose(out.values, [1 / 3, 2 / 3], atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(5)
        a = softmax(Tensor(x), axis=0).values
        b = softmax(Tensor(x + 123.456), axis=0).values
        np.testing.assert_allclose(a, b, atol=1e-12)

    @pytest.mark.parametrize("magnitude", [1.0, 10.0, 1e3])
    def test_sums_to_one_at_large_magnitude(self, magnitude):
        rng = np.random.default_rng(7)
        x = rng.uniform(-magnitude, magnitude, size=(4, 6))
        out = softmax(Tensor(x), axis=1).values
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
        assert (out >= 0).all() and (out <= 1).all()

    def test_open_interval_at_moderate_magnitude(self):
        rng = np.random.default_rng(8)
        out = softmax(Tensor(rng.uniform(-50, 50, size=(4, 6))), axis=1).values
        assert (out > 0).all() and (out < 1).all()

    def test_invalid_axis(self):
        with pytest.raises(ShapeError, match="axis"):
            softmax(Tensor([1.0, 2.0]), axis=2)


class TestCosineSimilarity:
    def test_identical_vectors(self):
        u = Tensor([1.0, 2.0, -3.0])
        assert cosine_similarity(u, Tensor(u.values.copy())).item() == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0

    def test_hand_value(self):
        # (3*4 + 4*3) / (5*5)
        assert cosine_similarity(Tensor([3.0, 4.0]), Tensor([4.0, 3.0])).item() == pytest.approx(0.96, abs=1e-15)

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        u, v = rng.standard_normal(8), rng.standard_normal(8)
        base = cosine_similarity(Tensor(u), Tensor(v)).item()
        for alpha, beta in [(2.0, 5.0), (0.01, 300.0), (7.5, 0.003)]:
            scaled = cosine_similarity(Tensor(alpha * u), Tensor(beta * v)).item()
            assert scaled == pytest.approx(base, abs=1e-9)

    def test_degenerate_vector(self):
        with pytest.raises(DegenerateVectorError):
            cosine_similarity(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))


class TestLayerNorm:
    def test_constant_row_maps_to_bias(self):
        x = Tensor(np.full((2, 4), 3.7))
        out = layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.values, 0.0, atol=1e-12)

    def test_two_point_row(self):
        out = layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.values, [-1.0, 1.0], atol=1e-3)

    def test_gain_zero_recovers_bias(self):
        rng = np.random.default_rng(5)
        bias = rng.standard_normal(6)
        out = layer_norm(Tensor(rng.standard_normal((3, 6))), Tensor(np.zeros(6)), Tensor(bias))
        np.testing.assert_allclose(out.values, np.tile(bias, (3, 1)), atol=1e-12)

    def test_normalized_statistics(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((5, 16)) * 4 + 2
        out = layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).values
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-3)

    def test_width_one_rejected(self):
        with pytest.raises(ShapeError):
            layer_norm(Tensor([[1.0]]), Tensor([1.0]), Tensor([0.0]))


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = cross_entropy(Tensor(np.zeros(7)), 3)
        assert loss.item() == pytest.approx(np.log(7.0), abs=1e-9)

    def test_saturated_correct_class(self):
        logits = np.zeros(5)
        logits[2] = 50.0
        assert cross_entropy(Tensor(logits), 2).item() < 1e-9

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            logits = rng.standard_normal(4) * 10
            assert cross_entropy(Tensor(logits), int(rng.integers(4))).item() >= 0.0

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            cross_entropy(Tensor(np.zeros(3)), 3)

    def test_matches_log_softmax(self):
        rng = np.random.default_rng(12)
        logits = rng.standard_normal(6)
        probs = softmax(Tensor(logits), axis=0).values
        loss = cross_entropy(Tensor(logits), 4).item()
        assert loss == pytest.approx(-np.log(probs[4]), abs=1e-9)


class TestBackward:
    def test_sum_gradient(self):
        with Tape() as tape:
            x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
            backward(sum_all(x), tape)
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_square_gradient(self):
        with Tape() as tape:
            x = Tensor(3.0, requires_grad=True)
            backward(mul(x, x), tape)
        assert float(x.grad) == pytest.approx(6.0)

    def test_accumulation_across_uses(self):
        with Tape() as tape:
            x = Tensor([2.0], requires_grad=True)
            backward(sum_all(add(x, x)), tape)
        np.testing.assert_array_equal(x.grad, [2.0])

    def test_non_scalar_loss_rejected(self):
        with Tape() as tape:
            x = Tensor([1.0, 2.0], requires_grad=True)
            y = add(x, x)
            with pytest.raises(ShapeError, match="scalar"):
                backward(y, tape)

    def test_loss_off_tape_rejected(self):
        with Tape() as tape:
            loose = Tensor(1.0, requires_grad=True)
            with pytest.raises(ValueError, match="tape"):
                backward(loose, tape)

    def test_no_recording_without_tape(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = add(x, x)
        assert not y.requires_grad  # pure value outside any tape


def _random_graph_loss(rng, x, w, gain, bias):
    """Composite of most exported ops, for finite-difference sweeps."""
    h = layer_norm(matmul(x, w), gain, bias)
    h = add(h, gelu(h))
    h = concat_cols([h, relu(h)])
    h = slice_cols(h, 0, h.shape[1] // 2)
    top = topk_mean_rows(h, 2)
    pooled = mean_rows(softmax(h, axis=0))
    merged = add(scale(top, 0.3), pooled)
    row0 = mean_rows(slice_rows(h, 0, 2))
    cos = cosine_similarity(row0, merged)
    stacked = concat_rows([h, transpose(w)])
    windowed = overlap_mean(
        [slice_rows(stacked, 0, 3), slice_rows(stacked, 2, 5)], [0, 2], 5
    )
    return add(
        cross_entropy(scale(merged, 3.0), 1),
        add(scale(cos, 0.5), scale(sum_all(l2_normalize(windowed)), 0.1)),
    )


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_random_graph_gradients_match_finite_differences(seed):
    from tgdfer.gradcheck import check_parameters

    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    w = Tensor(rng.standard_normal((6, 6)), requires_grad=True)
    gain = Tensor(1.0 + 0.1 * rng.standard_normal(6), requires_grad=True)
    bias = Tensor(0.1 * rng.standard_normal(6), requires_grad=True)
    errors = check_parameters(
        lambda: _random_graph_loss(rng, x, w, gain, bias),
        [("x", x), ("w", w), ("gain", gain), ("bias", bias)],
    )
    assert max(errors.values()) < 1e-5


class TestSgdStep:
    def test_single_step(self):
        params = ParameterSet()
        p = params.add("p", Tensor([1.0]))
        p.grad = np.array([2.0])
        sgd_step(params, 0.1)
        np.testing.assert_allclose(p.values, [0.8])
        assert p.grad is None

    def test_zero_lr(self):
        params = ParameterSet()
        p = params.add("p", Tensor([1.5]))
        p.grad = np.array([3.0])
        sgd_step(params, 0.0)
        np.testing.assert_array_equal(p.values, [1.5])

    def test_two_steps_compose(self):
        params = ParameterSet()
        p = params.add("p", Tensor([1.0]))
        for _ in range(2):
            p.grad = np.array([0.5])
            sgd_step(params, 0.2)
        np.testing.assert_allclose(p.values, [1.0 - 2 * 0.2 * 0.5])

    def test_missing_grad(self):
        params = ParameterSet()
        params.add("p", Tensor([1.0]))
        with pytest.raises(MissingGradError, match="p"):
            sgd_step(params, 0.1)


class TestParameterSet:
    def test_duplicate_name_rejected(self):
        params = ParameterSet()
        params.add("a", Tensor([1.0]))
        with pytest.raises(ValueError, match="duplicate"):
            params.add("a", Tensor([2.0]))

    def test_iteration_order_is_insertion_order(self):
        params = ParameterSet()
        for name in ("z", "a", "m"):
            params.add(name, Tensor([0.0]))
        assert params.names() == ["z", "a", "m"]


def test_determinism_bit_identical_values_and_grads():
    def run():
        rng = np.random.default_rng(99)
        with Tape() as tape:
            x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
            w = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
            loss = cross_entropy(mean_rows(gelu(matmul(x, w))), 2)
            backward(loss, tape)
        return loss.item(), x.grad.copy(), w.grad.copy()

    l1, gx1, gw1 = run()
    l2, gx2, gw2 = run()
    assert l1 == l2
    assert (gx1 == gx2).all()
    assert (gw1 == gw2).all()


def test_documented_ops_produce_finite_outputs():
    rng = np.random.default_rng(4)
    x = Tensor(rng.uniform(-1e3, 1e3, size=(4, 8)))
    for out in (
        softmax(x, axis=1),
        layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8))),
        l2_normalize(x),
        gelu(scale(x, 1e-2)),
    ):
        assert np.isfinite(out.values).all()
