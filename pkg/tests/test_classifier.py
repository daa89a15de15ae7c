import numpy as np
import pytest
from scipy import sparse

from stancelab.classifier import (
    ClassifierModel,
    FeatureConfig,
    FeatureVector,
    StageTag,
    TextStanceClassifier,
    TrainConfig,
    evaluate,
    featurize,
    loss_and_grad,
    posterior,
    posterior_batch,
    text_ngrams,
    to_csr,
    train,
)
from stancelab.corpus import Corpus
from stancelab.embedding import EmbeddingConfig, train_embeddings
from stancelab.labels import StanceLabel

from conftest import make_doc

FC = FeatureConfig(hash_buckets=512)
TC_FAST = TrainConfig(epochs=8, batch_size=16, learning_rate=0.5)


def fv(dense, config=FC):
    idx = np.flatnonzero(dense)
    return FeatureVector(
        indices=idx.astype(np.int64),
        values=np.asarray(dense, dtype=float)[idx],
        dimension=len(dense),
        source=config.source,
    )


def synthetic_separable(n_per_class=100, seed=0, margin=3.0, dim=24):
    """Three linearly separable blobs in a hand-rolled sparse feature space."""
    rng = np.random.default_rng(seed)
    centers = np.zeros((3, dim))
    centers[0, :8] = margin
    centers[1, 8:16] = margin
    centers[2, 16:] = margin
    examples = []
    labels = ("positive", "neutral", "negative")
    for c, lab in enumerate(labels):
        for _ in range(n_per_class):
            x = centers[c] + rng.normal(scale=1.0, size=dim)
            examples.append((fv(x), lab))
    return examples


class TestFeaturize:
    def test_empty_tokens_zero_vector_flagged(self):
        out = featurize([], FC)
        assert out.empty
        assert len(out.indices) == 0

    def test_deterministic(self):
        a = featurize(["زن", "زندگی", "آزادی"], FC)
        b = featurize(["زن", "زندگی", "آزادی"], FC)
        assert np.array_equal(a.indices, b.indices)
        assert np.array_equal(a.values, b.values)

    def test_l2_normalized(self):
        out = featurize(["x", "y", "z", "w"], FC)
        assert np.linalg.norm(out.values) == pytest.approx(1.0)

    def test_one_token_change_touches_three_ngrams(self):
        # replacing one mid-document token affects exactly 1 unigram + 2
        # bigrams on each side of the diff
        a = ["t0", "t1", "t2", "t3"]
        b = ["t0", "tX", "t2", "t3"]
        ga, gb = set(text_ngrams(a)), set(text_ngrams(b))
        assert len(ga - gb) <= 3
        assert len(gb - ga) <= 3

    def test_embedding_features_require_model(self):
        cfg = FeatureConfig(use_doc_embedding=True, embedding_dim=8, hash_buckets=64)
        with pytest.raises(ValueError, match="embedding model"):
            featurize(["a"], cfg)

    def test_concat_with_embedding(self):
        emb = train_embeddings(
            [["a", "b"]] * 30,
            EmbeddingConfig(dim=8, window=2, epochs=1, negatives=2, min_count=1,
                            subword_buckets=0, batch_size=64),
            seed=0,
        )
        cfg = FeatureConfig(hash_buckets=64, use_doc_embedding=True, embedding_dim=8)
        out = featurize(["a", "b"], cfg, embedding=emb)
        assert out.dimension == 72
        assert out.indices.max() >= 64  # embedding block occupied

    def test_no_sources_rejected(self):
        with pytest.raises(ValueError):
            FeatureConfig(use_hashed_ngrams=False, use_doc_embedding=False)


class TestTrain:
    def test_separable_high_accuracy(self):
        examples = synthetic_separable()
        model = train(examples, TC_FAST, seed=0)
        probs = posterior_batch(model, [f for f, _ in examples])
        pred = probs.argmax(axis=1)
        truth = np.array([model.labels.index(lab) for _, lab in examples])
        assert float(np.mean(pred == truth)) >= 0.95

    def test_deterministic_under_seed(self):
        examples = synthetic_separable(n_per_class=30)
        m1 = train(examples, TC_FAST, seed=7)
        m2 = train(examples, TC_FAST, seed=7)
        assert np.array_equal(m1.weights, m2.weights)
        assert np.array_equal(m1.bias, m2.bias)

    def test_single_class_rejected(self):
        examples = [(fv(np.ones(4)), "neutral"), (fv(np.zeros(4)), "neutral")]
        with pytest.raises(ValueError, match="two classes"):
            train(examples, TC_FAST)

    def test_nonfinite_features_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            FeatureVector(
                indices=np.array([0]),
                values=np.array([np.inf]),
                dimension=4,
                source=FC.source,
            )

    def test_train_log_recorded(self):
        model = train(synthetic_separable(n_per_class=20), TC_FAST, seed=0)
        assert len(model.train_log) == TC_FAST.epochs

    def test_regularization_monotonicity(self):
        examples = synthetic_separable(n_per_class=50)
        norms = []
        for l2 in (1e-5, 1e-2, 1.0):
            cfg = TrainConfig(l2=l2, epochs=20, batch_size=16, learning_rate=0.5)
            model = train(examples, cfg, seed=3)
            norms.append(float(np.linalg.norm(model.weights)))
        assert norms[0] >= norms[1] >= norms[2]

    def test_binary_collapse_valid_two_class_model(self):
        # merging neutral+negative into one class trains a valid binary model
        examples = synthetic_separable(n_per_class=40)
        binary = [
            (f, "positive" if lab == "positive" else "not_positive")
            for f, lab in examples
        ]
        cfg = TrainConfig(
            epochs=10, batch_size=16, learning_rate=0.5, labels=("positive", "not_positive")
        )
        model = train(binary, cfg, seed=0)
        assert model.weights.shape[0] == 2
        probs = posterior_batch(model, [f for f, _ in binary])
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        pred = probs.argmax(axis=1)
        truth = np.array([model.labels.index(lab) for _, lab in binary])
        assert float(np.mean(pred == truth)) >= 0.9

    def test_warm_start_shape_check(self):
        examples = synthetic_separable(n_per_class=10)
        model = train(examples, TC_FAST, seed=0)
        bad = ClassifierModel(
            weights=np.zeros((3, 7)),
            bias=np.zeros(3),
            feature_config=model.feature_config,
            train_config=model.train_config,
        )
        with pytest.raises(ValueError, match="incompatible"):
            train(examples, TC_FAST, seed=0, init=bad)


def numeric_gradient(weights, bias, x, y, sw, l2, eps=1e-6):
    k, f = weights.shape
    flat = np.concatenate((weights.ravel(), bias))
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += eps
        down[i] -= eps
        lu, _, _ = loss_and_grad(up[: k * f].reshape(k, f), up[k * f :], x, y, sw, l2)
        ld, _, _ = loss_and_grad(down[: k * f].reshape(k, f), down[k * f :], x, y, sw, l2)
        grad[i] = (lu - ld) / (2 * eps)
    return grad[: k * f].reshape(k, f), grad[k * f :]


class TestGradient:
    def test_matches_central_finite_differences(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            n, f, k = int(rng.integers(3, 10)), int(rng.integers(2, 8)), 3
            x = sparse.csr_matrix(rng.normal(size=(n, f)) * (rng.random((n, f)) < 0.6))
            y = rng.integers(0, k, size=n)
            if len(np.unique(y)) < 2:
                continue
            sw = rng.uniform(0.5, 2.0, size=n)
            w = rng.normal(scale=0.5, size=(k, f))
            b = rng.normal(scale=0.5, size=k)
            l2 = float(rng.choice([0.0, 1e-3, 1e-1]))
            _, gw, gb = loss_and_grad(w, b, x, y, sw, l2)
            nw, nb = numeric_gradient(w, b, x, y, sw, l2)
            denom = max(np.abs(nw).max(), np.abs(nb).max(), 1e-8)
            assert np.abs(gw - nw).max() / denom < 1e-4
            assert np.abs(gb - nb).max() / denom < 1e-4


class TestPosterior:
    def test_zero_model_uniform(self):
        model = ClassifierModel(
            weights=np.zeros((3, 8)),
            bias=np.zeros(3),
            feature_config=FeatureConfig(hash_buckets=8),
            train_config=TrainConfig(),
        )
        p = posterior(model, fv(np.ones(8)))
        assert np.allclose(p, 1 / 3)

    def test_logit_shift_invariance(self):
        rng = np.random.default_rng(1)
        w = rng.normal(size=(3, 8))
        model = ClassifierModel(
            weights=w,
            bias=np.zeros(3),
            feature_config=FeatureConfig(hash_buckets=8),
            train_config=TrainConfig(),
        )
        shifted = ClassifierModel(
            weights=w,
            bias=np.full(3, 17.0),  # constant shift on all logits
            feature_config=model.feature_config,
            train_config=TrainConfig(),
        )
        x = fv(rng.normal(size=8))
        assert np.allclose(posterior(model, x), posterior(shifted, x), atol=1e-12)

    def test_hand_computed_softmax(self):
        w = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
        b = np.array([0.1, -0.1, 0.0])
        model = ClassifierModel(
            weights=w, bias=b,
            feature_config=FeatureConfig(hash_buckets=2),
            train_config=TrainConfig(),
        )
        x = np.array([2.0, -1.0])
        logits = w @ x + b
        want = np.exp(logits) / np.exp(logits).sum()
        got = posterior(model, fv(x))
        assert np.allclose(got, want, atol=1e-12)

    def test_sums_to_one(self):
        rng = np.random.default_rng(2)
        model = train(synthetic_separable(n_per_class=20), TC_FAST, seed=0)
        for _ in range(50):
            x = fv(rng.normal(size=24))
            p = posterior(model, x)
            assert abs(p.sum() - 1.0) < 1e-9
            assert np.all(p >= 0)

    def test_dimension_mismatch(self):
        model = train(synthetic_separable(n_per_class=10), TC_FAST, seed=0)
        with pytest.raises(ValueError, match="dimension"):
            posterior(model, fv(np.ones(7)))


class TestEvaluate:
    def test_perfect_predictions_macro_one(self):
        examples = synthetic_separable(n_per_class=50, margin=8.0)
        model = train(examples, TC_FAST, seed=0)
        report = evaluate(model, examples)
        assert report.macro_f1 == pytest.approx(1.0)

    def test_all_neutral_predictor_macro_f1(self):
        # balanced 3-class heldout + a constant-neutral model:
        # neutral F1 = 0.5, others 0 -> macro = 1/6
        heldout = []
        for lab in ("positive", "neutral", "negative"):
            for i in range(10):
                heldout.append((fv(np.ones(4)), lab))
        bias = np.array([0.0, 10.0, 0.0])  # neutral always wins
        model = ClassifierModel(
            weights=np.zeros((3, 4)),
            bias=bias,
            feature_config=FeatureConfig(hash_buckets=4),
            train_config=TrainConfig(),
        )
        report = evaluate(model, heldout)
        assert report.macro_f1 == pytest.approx(1 / 6, abs=1e-12)
        assert report.per_class_f1[1] == pytest.approx(0.5)

    def test_matches_sklearn_macro_f1(self):
        from sklearn.metrics import f1_score

        examples = synthetic_separable(n_per_class=40, margin=1.0)
        model = train(examples, TC_FAST, seed=1)
        report = evaluate(model, examples)
        probs = posterior_batch(model, [f for f, _ in examples])
        y_true = [model.labels.index(lab) for _, lab in examples]
        want = f1_score(y_true, probs.argmax(axis=1), average="macro")
        assert report.macro_f1 == pytest.approx(want, abs=1e-12)

    def test_absent_class_warns_and_zero(self):
        examples = synthetic_separable(n_per_class=20)
        model = train(examples, TC_FAST, seed=0)
        heldout = [(f, lab) for f, lab in examples if lab != "negative"]
        with pytest.warns(UserWarning, match="absent"):
            report = evaluate(model, heldout)
        assert report.per_class_f1[2] == 0.0

    def test_multi_run_mean_std(self):
        examples = synthetic_separable(n_per_class=30, margin=1.5)
        model = train(examples, TC_FAST, seed=0)
        report = evaluate(model, examples, runs=3, seed=5, train_examples=examples)
        assert report.runs == 3
        assert report.macro_f1_std >= 0.0

    def test_multi_run_requires_train_data(self):
        examples = synthetic_separable(n_per_class=10)
        model = train(examples, TC_FAST, seed=0)
        with pytest.raises(ValueError, match="train_examples"):
            evaluate(model, examples, runs=2)


class TestSerialization:
    def test_roundtrip_bit_exact(self, tmp_path):
        model = train(synthetic_separable(n_per_class=15), TC_FAST, seed=0,
                      stage_tag=StageTag.CERTAINTY)
        path = tmp_path / "clf.npz"
        model.save(path)
        loaded = ClassifierModel.load(path)
        assert np.array_equal(loaded.weights, model.weights)
        assert np.array_equal(loaded.bias, model.bias)
        assert loaded.stage_tag is StageTag.CERTAINTY
        assert loaded.feature_config == model.feature_config
        assert loaded.train_config == model.train_config


class TestTextStanceClassifier:
    def test_text_pipeline_classifies(self):
        pos_docs = [f"good great fine day {i}" for i in range(30)]
        neg_docs = [f"bad awful poor mess {i}" for i in range(30)]
        cfg = FeatureConfig(hash_buckets=256)
        from stancelab.textproc import tokenize

        examples = [
            (featurize(tokenize(t), cfg), "positive") for t in pos_docs
        ] + [(featurize(tokenize(t), cfg), "negative") for t in neg_docs]
        model = train(
            examples,
            TrainConfig(epochs=10, batch_size=8, learning_rate=0.5),
            seed=0,
            feature_config=cfg,
        )
        clf = TextStanceClassifier(model)
        ids, labels = clf.predict_corpus(
            Corpus("c", (make_doc("d1", "good great day"), make_doc("d2", "awful poor mess")))
        )
        assert labels[0] is StanceLabel.POSITIVE
        assert labels[1] is StanceLabel.NEGATIVE
