import numpy as np
import pytest

from tgdfer.encoders import FrozenEncoder
from tgdfer.gradcheck import check_parameters
from tgdfer.prompts import (
    LabelEmbeddings,
    LabelMlp,
    PromptSet,
    alignment_scores,
    embed_labels,
    enhance_labels,
    visual_prompt,
)
from tgdfer.tensor import (
    DegenerateVectorError,
    ParameterSet,
    Tape,
    Tensor,
    backward,
    mean_all,
    mul,
    sgd_step,
)

NAMES7 = ["happiness", "sadness", "neutral", "anger", "surprise", "disgust", "fear"]
DESCS7 = [
    "a smiling mouth, widened eyes",
    "downturned lips, drooping eyelids",
    "a relaxed face, level gaze",
    "furrowed brows, tight jaw",
    "raised brows, open mouth",
    "a wrinkled nose, raised upper lip",
    "widened eyes, tense mouth",
]


def _prompts(num_classes=3, use_context=True, mode="add", source="descriptors", seed=0):
    params = ParameterSet()
    prompts = PromptSet(
        NAMES7[:num_classes],
        DESCS7[:num_classes],
        token_dim=16,
        context_tokens=4,
        use_learnable_context=use_context,
        visual_prompt_mode=mode,
        text_source=source,
        rng=np.random.default_rng(seed),
        params=params,
    )
    return prompts, params


@pytest.fixture
def encoder():
    return FrozenEncoder("mock_text", seed=21, feature_dim=16)


class TestEmbedLabels:
    def test_seven_classes_give_seven_rows(self, encoder):
        prompts, _ = _prompts(num_classes=7)
        emb = embed_labels(prompts, encoder)
        assert emb.x_fp.shape == (7, 16)
        assert emb.x_cp.shape == (7, 16)

    def test_rows_unit_norm(self, encoder):
        prompts, _ = _prompts(num_classes=5)
        emb = embed_labels(prompts, encoder)
        for mat in (emb.x_fp.values, emb.x_cp.values):
            np.testing.assert_allclose(np.linalg.norm(mat, axis=1), 1.0, atol=1e-9)

    def test_stable_without_learnable_context(self, encoder):
        prompts, _ = _prompts(use_context=False)
        a = embed_labels(prompts, encoder).x_fp.values
        prompts.context.values += 100.0  # unused when context is off
        b = embed_labels(prompts, encoder).x_fp.values
        assert (a == b).all()

    def test_context_registered_only_when_learnable(self):
        _, params_on = _prompts(use_context=True)
        assert "prompt.context" in params_on
        prompts_off, params_off = _prompts(use_context=False)
        assert params_off is None or "prompt.context" not in params_off

    def test_class_source_uses_class_names(self, encoder):
        by_desc, _ = _prompts(source="descriptors", use_context=False)
        by_name, _ = _prompts(source="class", use_context=False)
        a = embed_labels(by_desc, encoder).x_fp.values
        b = embed_labels(by_name, encoder).x_fp.values
        assert not np.allclose(a, b)
        # coarse path always uses class names
        assert (embed_labels(by_desc, encoder).x_cp.values
                == embed_labels(by_name, encoder).x_cp.values).all()


class TestAlignmentScores:
    def test_diagonal_when_rows_match(self):
        rng = np.random.default_rng(1)
        x_fp = rng.standard_normal((3, 8))
        scores = alignment_scores(Tensor(x_fp.copy()), Tensor(x_fp), tau=1.0)
        np.testing.assert_allclose(np.diag(scores.values), 1.0, atol=1e-12)

    def test_temperature_rescales(self):
        rng = np.random.default_rng(2)
        inst, fp = rng.standard_normal((4, 8)), rng.standard_normal((3, 8))
        base = alignment_scores(Tensor(inst), Tensor(fp), tau=1.0).values
        hot = alignment_scores(Tensor(inst), Tensor(fp), tau=0.01).values
        np.testing.assert_allclose(hot, base * 100.0, atol=1e-9)

    def test_per_frame_rescaling_invariance(self):
        rng = np.random.default_rng(3)
        inst, fp = rng.standard_normal((4, 8)), rng.standard_normal((3, 8))
        scales = rng.uniform(0.1, 10.0, size=(4, 1))
        a = alignment_scores(Tensor(inst), Tensor(fp), tau=0.5).values
        b = alignment_scores(Tensor(inst * scales), Tensor(fp), tau=0.5).values
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_argmax_invariant_to_temperature(self):
        rng = np.random.default_rng(4)
        inst, fp = rng.standard_normal((6, 8)), rng.standard_normal((4, 8))
        winners = [
            alignment_scores(Tensor(inst), Tensor(fp), tau=t).values.argmax(axis=1)
            for t in (0.01, 0.1, 1.0, 7.0)
        ]
        for w in winners[1:]:
            assert (winners[0] == w).all()

    def test_degenerate_instance_row(self):
        inst = np.ones((3, 4))
        inst[1] = 0.0
        with pytest.raises(DegenerateVectorError):
            alignment_scores(Tensor(inst), Tensor(np.ones((2, 4))), tau=1.0)

    def test_positive_temperature_required(self):
        with pytest.raises(ValueError):
            alignment_scores(Tensor(np.ones((2, 4))), Tensor(np.ones((2, 4))), tau=0.0)


class TestVisualPrompt:
    def test_single_frame(self):
        frame = np.random.default_rng(5).standard_normal((1, 8))
        scores = Tensor(np.array([[2.0, -1.0, 0.5]]))
        v_p = visual_prompt(scores, Tensor(frame)).values
        np.testing.assert_allclose(v_p, np.tile(frame, (3, 1)), atol=1e-12)

    def test_constant_scores_give_frame_mean(self):
        rng = np.random.default_rng(6)
        inst = rng.standard_normal((5, 8))
        scores = Tensor(np.full((5, 2), 3.3))
        v_p = visual_prompt(scores, Tensor(inst)).values
        np.testing.assert_allclose(v_p, np.tile(inst.mean(axis=0), (2, 1)), atol=1e-12)

    def test_saturated_scores_select_single_frame(self):
        frames = np.eye(3)
        scores = Tensor(np.array([[10.0], [-10.0], [-10.0]]))
        v_p = visual_prompt(scores, Tensor(frames)).values
        np.testing.assert_allclose(v_p[0], frames[0], atol=1e-6)

    def test_weights_sum_to_one(self):
        from tgdfer.tensor import softmax

        rng = np.random.default_rng(7)
        scores = rng.standard_normal((6, 4)) * 5
        weights = softmax(Tensor(scores), axis=0).values
        np.testing.assert_allclose(weights.sum(axis=0), 1.0, atol=1e-9)


class TestEnhanceLabels:
    def _parts(self, encoder, mode="add", seed=8):
        prompts, params = _prompts(mode=mode, seed=seed)
        emb = embed_labels(prompts, encoder)
        rng = np.random.default_rng(seed + 1)
        v_p = Tensor(rng.standard_normal((3, 16)))
        head = ParameterSet()
        mlp = LabelMlp(16, rng=np.random.default_rng(seed + 2), params=head)
        return prompts, emb, v_p, mlp, head

    def test_zero_mlp_returns_coarse_embeddings(self, encoder):
        prompts, emb, v_p, mlp, _ = self._parts(encoder)
        mlp.w1.values[:] = 0.0
        mlp.w2.values[:] = 0.0  # already zero at init; make it explicit
        out = enhance_labels(emb, v_p, mlp, "add")
        np.testing.assert_array_equal(out.values, emb.x_cp.values)

    def test_none_vs_add_differ_for_nonzero_visual_prompt(self, encoder):
        prompts, emb, v_p, mlp, _ = self._parts(encoder)
        mlp.w2.values[:] = np.random.default_rng(9).standard_normal(mlp.w2.shape) * 0.1
        none = enhance_labels(emb, None, mlp, "none").values
        added = enhance_labels(emb, v_p, mlp, "add").values
        assert not np.allclose(none, added)

    def test_prepend_reencodes(self, encoder):
        prompts, emb, v_p, mlp, _ = self._parts(encoder, mode="prepend")
        mlp.w2.values[:] = np.random.default_rng(10).standard_normal(mlp.w2.shape) * 0.1
        out = enhance_labels(emb, v_p, mlp, "prepend", prompts=prompts, encoder=encoder)
        assert out.shape == (3, 16)
        other = enhance_labels(emb, Tensor(v_p.values * -1), mlp, "prepend",
                               prompts=prompts, encoder=encoder)
        assert not np.allclose(out.values, other.values)

    def test_invalid_mode(self, encoder):
        prompts, emb, v_p, mlp, _ = self._parts(encoder)
        with pytest.raises(ValueError, match="mode"):
            enhance_labels(emb, v_p, mlp, "concat")

    def test_mlp_gradient_matches_finite_differences(self, encoder):
        prompts, emb_unused, v_p, mlp, head = self._parts(encoder)
        rng = np.random.default_rng(11)
        mlp.w2.values[:] = rng.standard_normal(mlp.w2.shape) * 0.1
        target = Tensor(rng.standard_normal((3, 16)))

        def loss_builder():
            emb = embed_labels(prompts, encoder)
            out = enhance_labels(emb, v_p, mlp, "add")
            return mean_all(mul(out, target))

        errors = check_parameters(loss_builder, list(head.items()))
        assert max(errors.values()) < 1e-4


def test_frozen_path_purity(encoder):
    # context off + mode none + frozen MLP: enhanced labels never change across steps
    prompts, _ = _prompts(use_context=False, mode="none")
    head = ParameterSet()
    mlp = LabelMlp(16, rng=np.random.default_rng(12), params=head)
    mlp.w2.values[:] = np.random.default_rng(13).standard_normal(mlp.w2.shape) * 0.1
    frozen = {n: p.values.copy() for n, p in head.items()}

    def enhanced():
        emb = embed_labels(prompts, encoder)
        return enhance_labels(emb, None, mlp, "none").values

    first = enhanced()
    # simulate training steps that only touch other parameters
    other = ParameterSet()
    other.add("w", Tensor(np.ones(4)))
    for _ in range(3):
        with Tape() as tape:
            loss = mean_all(mul(other["w"], other["w"]))
            backward(loss, tape)
        sgd_step(other, 0.1)
    np.testing.assert_array_equal(first, enhanced())
    for n, p in head.items():
        assert (p.values == frozen[n]).all()


def test_smoke_matrix_all_prompt_configurations(encoder):
    # 2 sources x 3 modes x context on/off all construct and run forward
    rng = np.random.default_rng(14)
    inst = Tensor(rng.standard_normal((5, 16)))
    for source in ("class", "descriptors"):
        for mode in ("none", "add", "prepend"):
            for use_context in (False, True):
                prompts, _ = _prompts(mode=mode, source=source, use_context=use_context)
                emb = embed_labels(prompts, encoder)
                head = ParameterSet()
                mlp = LabelMlp(16, rng=np.random.default_rng(15), params=head)
                v_p = None
                if mode != "none":
                    scores = alignment_scores(inst, emb.x_fp, tau=0.01)
                    v_p = visual_prompt(scores, inst)
                out = enhance_labels(emb, v_p, mlp, mode, prompts=prompts, encoder=encoder)
                assert np.isfinite(out.values).all()
