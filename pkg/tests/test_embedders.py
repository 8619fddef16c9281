import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enrolltss import dsp
from enrolltss.autograd import Tensor, ops, precision
from enrolltss.autograd.gradcheck import finite_difference_check
from enrolltss.autograd.optim import Adam
from enrolltss.embedders import (Adapter, DVectorConfig, DVectorModel, EmbeddingCache, EnrollmentEmbedding,
                                 LayeredFrameSource, aam_logits, cosine_score, dvector_forward, dvector_train_step,
                                 fbank_embed, layered_aggregate, read_layered, synthetic_layers, write_layered)
from enrolltss.errors import ConfigError, DataError, DegenerateNormError, InputError, ShapeError, StateError

SR = 16000


def small_dvector(seed=0, **kw):
    cfg = DVectorConfig(n_speakers=kw.pop("n_speakers", 5), hidden=kw.pop("hidden", 16), **kw)
    return DVectorModel(cfg, np.random.default_rng(seed))


# -- fbank --------------------------------------------------------------------

def test_fbank_constant_signal_has_zero_std_half():
    emb = fbank_embed(np.full(SR, 0.3))
    assert emb.values.shape == (160,) and emb.dim == 160
    assert np.abs(emb.values[80:]).max() < 1e-9  # FFT rounding only


def test_fbank_frame_level_count():
    emb = fbank_embed(np.random.default_rng(0).standard_normal(SR), "frame")
    assert emb.kind == "frame" and emb.values.shape == (98, 80)


def test_fbank_utterance_needs_two_frames():
    with pytest.raises(InputError):
        fbank_embed(np.ones(400))
    assert fbank_embed(np.ones(400), "frame").values.shape == (1, 80)


def test_fbank_fn_zeroes_mean_half():
    x = np.random.default_rng(1).standard_normal(8000)
    raw, normed = fbank_embed(x), fbank_embed(x, fn=True)
    assert np.abs(normed.values[:80]).max() < 1e-10
    np.testing.assert_allclose(normed.values[80:], raw.values[80:], atol=1e-9)


# -- d-vector -------------------------------------------------------------------

def test_dvector_utterance_is_unit_norm():
    model = small_dvector()
    feats = np.random.default_rng(2).standard_normal((30, 80))
    emb = dvector_forward(model, feats)
    assert emb.values.shape == (256,) and emb.normalized
    assert abs(np.linalg.norm(emb.values) - 1.0) < 1e-6


def test_dvector_zero_weights_raise_degenerate_norm():
    model = small_dvector()
    for p in model.parameters():
        p.data[:] = 0.0
    with pytest.raises(DegenerateNormError):
        dvector_forward(model, np.ones((5, 80)))


def test_dvector_last_frame_equals_utterance():
    model = small_dvector(3)
    feats = np.random.default_rng(3).standard_normal((12, 80))
    utt = dvector_forward(model, feats, "utterance").values
    frame = dvector_forward(model, dsp.FeatureMatrix(feats), "frame").values
    assert frame.shape == (12, 256)
    assert np.array_equal(frame[-1], utt)
    np.testing.assert_allclose(np.linalg.norm(frame, axis=1), 1.0, atol=1e-6)


def test_dvector_rejects_wrong_dim():
    with pytest.raises(ConfigError):
        dvector_forward(small_dvector(), np.ones((5, 40)))


def test_dvector_fn_covariance():
    feats = np.random.default_rng(4).standard_normal((20, 80))
    offset = np.random.default_rng(5).standard_normal(80) * 3
    with_fn = small_dvector(6, fn_enabled=True)
    a = dvector_forward(with_fn, feats).values
    b = dvector_forward(with_fn, feats + offset).values
    assert np.abs(a - b).max() < 1e-6
    without = small_dvector(6)
    assert np.abs(dvector_forward(without, feats).values - dvector_forward(without, feats + offset).values).max() > 1e-3


def test_classifier_not_on_embedding_path():
    model = small_dvector(7)
    feats = np.random.default_rng(7).standard_normal((10, 80))
    before = dvector_forward(model, feats).values
    model.classifier.weight.data[:] = 123.0
    assert np.array_equal(dvector_forward(model, feats).values, before)


def test_aam_zero_margin_is_scaled_cosine_ce():
    rng = np.random.default_rng(8)
    with precision(np.float64):
        emb = ops.l2_normalize(Tensor(rng.standard_normal((6, 256))))
        w = Tensor(rng.standard_normal((256, 4)))
        labels = np.array([0, 1, 2, 3, 0, 1])
        aam = ops.cross_entropy(aam_logits(emb, w, labels, 0.0, 30.0), labels).item()
        cos = emb.data @ (w.data / np.linalg.norm(w.data, axis=0))
        z = 30 * cos
        ref = np.mean(np.log(np.exp(z - z.max(1, keepdims=True)).sum(1)) + z.max(1) - z[np.arange(6), labels])
    assert aam == pytest.approx(ref, abs=1e-10)


def test_aam_margin_lowers_target_logit():
    rng = np.random.default_rng(9)
    with precision(np.float64):
        emb = Tensor(rng.standard_normal((3, 256)))
        w = Tensor(rng.standard_normal((256, 5)))
        labels = np.array([1, 2, 4])
        plain = aam_logits(emb, w, labels, 0.0, 30.0).data
        margin = aam_logits(emb, w, labels, 0.2, 30.0).data
    rows = np.arange(3)
    theta = np.arccos(plain[rows, labels] / 30)
    np.testing.assert_allclose(margin[rows, labels], 30 * np.cos(theta + 0.2), atol=1e-9)
    mask = np.ones_like(plain, dtype=bool)
    mask[rows, labels] = False
    assert np.array_equal(margin[mask], plain[mask])


@pytest.mark.parametrize("objective", ["cross_entropy", "aam_softmax"])
def test_untrained_ce_near_log_n(objective):
    n = 8
    model = small_dvector(10, n_speakers=n, objective=objective)
    feats = np.random.default_rng(10).standard_normal((n, 15, 80))
    loss = model.loss(feats, np.arange(n)).item()
    if objective == "cross_entropy":
        assert loss == pytest.approx(math.log(n), abs=0.05)
    else:
        assert np.isfinite(loss)


@pytest.mark.parametrize("objective", ["cross_entropy", "aam_softmax"])
def test_dvector_loss_gradcheck(objective):
    rng = np.random.default_rng(30)
    with precision(np.float64):
        model = DVectorModel(DVectorConfig(n_speakers=3, hidden=4, num_layers=1, emb_dim=5, n_mels=6,
                                           objective=objective), rng)
        for p in model.parameters():
            p.data += rng.standard_normal(p.shape) * 0.3
        feats, labels = rng.standard_normal((4, 5, 6)), np.array([0, 1, 2, 1])
        # the AAM head uses only the class directions, never the bias
        params = [p for n, p in model.named_parameters() if objective == "cross_entropy" or n != "classifier.bias"]
        err = finite_difference_check(lambda: model.loss(feats, labels), params)
    assert err < 1e-4


def test_train_step_rejects_bad_labels():
    model = small_dvector(11, n_speakers=3)
    opt = Adam(model.parameters(), lr=1e-3)
    with pytest.raises(ConfigError):
        dvector_train_step(model, (np.zeros((2, 5, 80)), [0, 3]), opt)


def test_train_step_updates_parameters_once():
    model = small_dvector(12, n_speakers=3)
    opt = Adam(model.parameters(), lr=1e-3)
    before = {k: v.copy() for k, v in model.state_dict().items()}
    loss = dvector_train_step(model, (np.random.default_rng(12).standard_normal((3, 6, 80)), [0, 1, 2]), opt)
    assert np.isfinite(loss) and opt.step_count == 1
    assert any(not np.array_equal(before[k], v) for k, v in model.state_dict().items())


@pytest.mark.slow
def test_dvector_training_smoke():
    rng = np.random.default_rng(13)
    n_spk, per = 20, 50 // 20 + 1
    centers = rng.standard_normal((n_spk, 80)) * 2
    labels = np.repeat(np.arange(n_spk), per)[:50]
    feats = centers[labels][:, None, :] + rng.standard_normal((50, 20, 80))
    model = small_dvector(13, n_speakers=n_spk, hidden=32)
    opt = Adam(model.parameters(), lr=3e-3)
    first = dvector_train_step(model, (feats, labels), opt)
    for _ in range(1999):
        last = dvector_train_step(model, (feats, labels), opt)
    assert last < 0.1 * first


# -- layered ----------------------------------------------------------------------

def test_layered_single_layer_is_identity():
    layers = np.random.default_rng(14).standard_normal((1, 6, 8))
    src = LayeredFrameSource.from_layers(layers)
    src.layer_logits.data[:] = 3.7
    np.testing.assert_allclose(layered_aggregate(src, "frame").values, layers[0], atol=1e-6)
    np.testing.assert_allclose(layered_aggregate(src, "utterance").values, layers[0].mean(0), atol=1e-6)


def test_layered_identical_layers_ignore_logits():
    layer = np.random.default_rng(15).standard_normal((6, 8))
    src = LayeredFrameSource.from_layers(np.stack([layer] * 3))
    src.layer_logits.data[:] = [2.0, -1.0, 0.5]
    np.testing.assert_allclose(layered_aggregate(src, "frame").values, layer, atol=1e-5)


def test_layered_uniform_two_layers_average():
    rng = np.random.default_rng(16)
    a, b = rng.standard_normal((2, 5, 4))
    out = layered_aggregate(LayeredFrameSource.from_layers([a, b]), "frame").values
    np.testing.assert_allclose(out, (a + b) / 2, atol=1e-6)


def test_layered_ragged_raises():
    with pytest.raises(InputError):
        LayeredFrameSource.from_layers([np.zeros((3, 4)), np.zeros((2, 4))])


def test_layer_weights_sum_to_one_and_get_gradient():
    src = LayeredFrameSource.from_layers(synthetic_layers(0, 7, np.random.default_rng(17)))
    src.layer_logits.data[:] = [1.0, -2.0, 0.3, 0.0]
    assert abs(src.weights.weights().sum() - 1.0) < 1e-6
    r = Tensor(np.random.default_rng(18).standard_normal((1, 7, 32)))
    (src.weights(src.layers[None], "frame") * r).sum().backward()
    assert src.layer_logits.grad is not None and np.abs(src.layer_logits.grad).max() > 0


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 10_000))
def test_layered_within_convex_hull(n_layers, te, seed):
    rng = np.random.default_rng(seed)
    layers = rng.standard_normal((n_layers, te, 3))
    src = LayeredFrameSource.from_layers(layers)
    src.layer_logits.data[:] = rng.standard_normal(n_layers) * 3
    out = layered_aggregate(src, "frame").values
    assert np.all(out >= layers.min(0) - 1e-5) and np.all(out <= layers.max(0) + 1e-5)


def test_layered_file_round_trip(tmp_path):
    layers = synthetic_layers(3, 9, np.random.default_rng(19), num_layers=2, dim=5)
    path = tmp_path / "u.lyr"
    write_layered(path, layers)
    raw = path.read_bytes()
    assert raw[:4] == b"LYR1" and np.frombuffer(raw[4:16], "<u4").tolist() == [2, 9, 5]
    assert len(raw) == 16 + 4 * 2 * 9 * 5
    np.testing.assert_array_equal(read_layered(path), layers.astype(np.float32))
    path.write_bytes(raw[:-4])
    with pytest.raises(DataError):
        read_layered(path)


def test_embedding_cache_keyed_by_utterance(tmp_path):
    cache = EmbeddingCache(tmp_path / "cache")
    layers = np.ones((1, 2, 3))
    cache.put("spk1/utt 01", layers)
    assert "spk1/utt 01" in cache and "other" not in cache
    np.testing.assert_array_equal(cache.get("spk1/utt 01"), layers)


def test_synthetic_layers_speaker_structure():
    rng = np.random.default_rng(20)
    same = [synthetic_layers(1, 50, rng)[0].mean(0) for _ in range(2)]
    other = synthetic_layers(2, 50, rng)[0].mean(0)
    assert cosine_score(same[0], same[1]) > cosine_score(same[0], other)


# -- adapter ---------------------------------------------------------------------

@pytest.mark.parametrize("dim", [160, 256, 32])
def test_adapter_output_dim(dim):
    ad = Adapter(dim, np.random.default_rng(21))
    assert ad(Tensor(np.random.default_rng(21).standard_normal((4, dim)))).shape == (4, 256)
    assert ad(Tensor(np.random.default_rng(21).standard_normal((2, 7, dim)))).shape == (2, 7, 256)


def test_adapter_identity_construction():
    ad = Adapter.identity(16)
    x = np.random.default_rng(22).standard_normal((3, 16))
    np.testing.assert_allclose(ad(Tensor(x)).data, x, atol=1e-6)
    emb = EnrollmentEmbedding("utterance", x[0], "fbank")
    np.testing.assert_allclose(ad(emb).data[0], x[0], atol=1e-6)


def test_adapter_eval_bn_without_stats():
    ad = Adapter(8, np.random.default_rng(23)).eval()
    with pytest.raises(StateError):
        ad(Tensor(np.ones((2, 8))))
    with pytest.raises(ShapeError):
        Adapter(8, np.random.default_rng(23))(Tensor(np.ones((2, 9))))


def test_adapter_gradcheck():
    rng = np.random.default_rng(24)
    with precision(np.float64):
        ad = Adapter(5, rng, hidden=6, out_dim=4)
        for p in ad.parameters():
            p.data += rng.standard_normal(p.shape) * 0.2
        x = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        r = Tensor(rng.standard_normal((4, 4)))
        err = finite_difference_check(lambda: (ad(x) * r).sum(), [x] + ad.parameters())
    assert err < 1e-4


# -- cosine ----------------------------------------------------------------------

def test_cosine_examples():
    x = np.array([0.3, -1.2, 2.0])
    assert cosine_score(x, x) == pytest.approx(1.0, abs=1e-12)
    assert cosine_score(x, -x) == pytest.approx(-1.0, abs=1e-12)
    assert cosine_score([1, 0, 0], [0, 1, 0]) == 0.0
    assert cosine_score([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    with pytest.raises(DegenerateNormError):
        cosine_score([0, 0], [1, 0])


def test_embedding_kind_validation():
    with pytest.raises(ValueError):
        EnrollmentEmbedding("utterance", np.zeros((2, 3)), "fbank")
