"""The ten acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (printed live with ``-s`` and again in
the terminal summary). Criteria 8 and 9 train models and take minutes.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from enrolltss import datamix as dm
from enrolltss import dsp
from enrolltss import eval as ev
from enrolltss import recipes
from enrolltss.autograd import Tensor, no_grad, ops, precision
from enrolltss.autograd.gradcheck import finite_difference_check
from enrolltss.autograd.nn import LSTM
from enrolltss.conditioning import FilmProjection, McaBlock, film
from enrolltss.dsp import write_wav
from enrolltss.embedders import Adapter, DVectorConfig, DVectorModel, aam_logits
from enrolltss.separators import SeparatorConfig, TrainConfig, TssModel, preset, si_snr, si_snr_loss, train
from enrolltss.synth import SyntheticCorpus, write_corpus

from test_datamix import make_manifest, measured_snr
from test_dsp import naive_mel, naive_stft
from test_eval import brute_force_eer
from test_separators import dvector_model, dvector_sampler, enroll_for, naive_si_snr, randomize, tiny

SR = 16000


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print("\n" + line)
    assert ok, line


# -- 1 ------------------------------------------------------------------------------

def test_c1_dsp_oracle():
    t0 = time.perf_counter()
    mel = naive_mel()
    worst_stft = worst_mel = 0.0
    for seed in range(50):
        x = np.random.default_rng(seed).standard_normal(SR)
        ref = naive_stft(x)
        got = dsp.stft(x)
        worst_stft = max(worst_stft, np.abs(got - ref).max() / np.abs(ref).max())
        ref_mel = np.log(np.maximum((np.abs(ref) ** 2) @ mel.T, 1e-10))
        worst_mel = max(worst_mel, np.abs(dsp.logmel(x).values - ref_mel).max() / np.abs(ref_mel).max())
    frames = dsp.logmel(np.random.default_rng(99).standard_normal(SR)).values.shape[0]
    dim = dsp.pool_mean_std(dsp.logmel(np.random.default_rng(99).standard_normal(SR))).shape[0]
    seconds = time.perf_counter() - t0
    ok = worst_stft < 1e-6 and worst_mel < 1e-6 and frames == 98 and dim == 160 and seconds < 10
    report(1, ok, f"stft rel {worst_stft:.1e}, logmel rel {worst_mel:.1e}, frames {frames}, dim {dim}, "
                  f"{seconds:.1f}s")


# -- 2 ------------------------------------------------------------------------------

def test_c2_fn_property():
    worst_mean = worst_std = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((int(rng.integers(2, 200)), 80)) * rng.uniform(0.1, 10) + rng.uniform(-20, 5, 80)
        normed = dsp.pool_mean_std(dsp.feature_normalize(x))
        raw = dsp.pool_mean_std(x)
        worst_mean = max(worst_mean, np.abs(normed[:80]).max())
        worst_std = max(worst_std, np.abs(normed[80:] - raw[80:]).max())
    report(2, worst_mean < 1e-10 and worst_std < 1e-9, f"mean half {worst_mean:.1e}, std half diff {worst_std:.1e}")


# -- 3 ------------------------------------------------------------------------------

def _gc_lstm(rng):
    lstm = LSTM(3, 4, 2, rng)
    x = Tensor(rng.standard_normal((2, 6, 3)), requires_grad=True)
    r = Tensor(rng.standard_normal((2, 6, 4)))
    return finite_difference_check(lambda: (lstm(x) * r).sum(), [x] + lstm.parameters())


def _dvector(rng, objective):
    model = DVectorModel(DVectorConfig(n_speakers=3, hidden=4, num_layers=1, emb_dim=5, n_mels=6,
                                       objective=objective), rng)
    randomize(model, rng, 0.3)
    return model


def _gc_dvector_ce(rng):
    model = _dvector(rng, "cross_entropy")
    h = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
    labels = np.array([0, 1, 2, 1])
    head = [model.projection.weight, model.projection.bias, model.classifier.weight, model.classifier.bias]

    def f():
        emb = ops.l2_normalize(model.projection(h), axis=-1)
        return ops.cross_entropy(model.logits(emb, labels), labels)

    feats = rng.standard_normal((4, 5, 6))
    whole = finite_difference_check(lambda: model.loss(feats, labels), model.parameters())
    return max(finite_difference_check(f, [h] + head), whole)


def _gc_aam(rng):
    model = _dvector(rng, "aam_softmax")
    labels = np.array([2, 0, 1, 2])
    emb = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    w = model.classifier.weight
    # at scale 30 a confident row saturates the softmax: its true gradient is
    # ~1e-16 while the difference quotient is exactly 0, which the 1e-12 floor reads as an error
    path = finite_difference_check(lambda: ops.cross_entropy(aam_logits(emb, w, labels, 0.2, 5.0), labels),
                                   [emb, w])
    feats = rng.standard_normal((4, 5, 6))
    whole = finite_difference_check(lambda: model.loss(feats, labels),
                                    [p for n, p in model.named_parameters() if n != "classifier.bias"])
    return max(path, whole)


def _gc_adapter(rng):
    ad = Adapter(5, rng, hidden=6, out_dim=4)
    randomize(ad, rng, 0.2)
    x = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    r = Tensor(rng.standard_normal((4, 4)))
    return finite_difference_check(lambda: (ad(x) * r).sum(), [x] + ad.parameters())


def _gc_film(rng):
    proj = FilmProjection(5, 3, rng)
    randomize(proj, rng)
    x = Tensor(rng.standard_normal((2, 4, 3)), requires_grad=True)
    e = Tensor(rng.standard_normal((2, 5)), requires_grad=True)
    r = Tensor(rng.standard_normal((2, 4, 3)))
    return finite_difference_check(lambda: (film(x, proj(e)) * r).sum(), [x, e] + proj.parameters())


def _gc_mca(mode):
    def check(rng):
        block = McaBlock(8, 6, rng, d_model=8, heads=4, output_mode=mode)
        randomize(block, rng)
        mix = Tensor(rng.standard_normal((2, 3, 8)), requires_grad=True)
        enr = Tensor(rng.standard_normal((2, 4, 6)), requires_grad=True)
        r = Tensor(rng.standard_normal((2, 3, 8)))

        def f():
            out = block(mix, enr)
            return ((out if mode == "additive" else film(mix, out)) * r).sum()
        # softmax cancels the key bias exactly, so its gradient is identically zero
        return finite_difference_check(f, [mix, enr] + [p for n, p in block.named_parameters() if n != "w_k.bias"])
    return check


def _gc_separator(family, conditioning):
    def check(_):
        # piecewise-linear activations: a random point whose pre-activation lies
        # within h of a kink breaks central differences, so the point is fixed
        rng = np.random.default_rng(11)
        cfg = tiny(family, conditioning)
        model = TssModel(cfg, rng)
        randomize(model, rng)
        mix, ref = rng.standard_normal((2, 80)), rng.standard_normal((2, 80))
        enroll = enroll_for(cfg, rng)
        params = [p for n, p in model.named_parameters() if not n.endswith("mca.w_k.bias")]
        return finite_difference_check(lambda: si_snr_loss(model(mix, enroll), ref), params)
    return check


GRADIENT_SUITE = {
    "lstm stack": _gc_lstm,
    "d-vector projection+CE": _gc_dvector_ce,
    "AAM-softmax": _gc_aam,
    "BN+MLP adapter": _gc_adapter,
    "FiLM": _gc_film,
    "MCA additive": _gc_mca("additive"),
    "MCA film": _gc_mca("film"),
    "E3Net tiny concat": _gc_separator("e3net", "concat"),
    "E3Net tiny MCA": _gc_separator("e3net", "mca_additive"),
    "Conv-TasNet tiny FiLM": _gc_separator("convtasnet", "film_utt"),
    "Conv-TasNet tiny MCA film": _gc_separator("convtasnet", "mca_film"),
}


def test_c3_gradient_suite():
    t0 = time.perf_counter()
    errs = {}
    with precision(np.float64):
        for k, (name, check) in enumerate(GRADIENT_SUITE.items()):
            errs[name] = check(np.random.default_rng(100 + k))
    seconds = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    ok = all(e < 1e-4 for e in errs.values()) and seconds < 120
    report(3, ok, f"{len(errs)} graphs, worst {worst} {errs[worst]:.1e}, {seconds:.1f}s")


# -- 4 ------------------------------------------------------------------------------

def test_c4_si_snr():
    exact = True
    for seed in range(10):
        rng = np.random.default_rng(seed)
        ref = rng.standard_normal(4000)
        est = ref + rng.standard_normal(4000) * rng.uniform(0.1, 3)
        base = si_snr(est, ref)
        exact &= all(si_snr(g * est, ref) == base and si_snr(est, g * ref) == base for g in (0.1, 1.0, 3.7))
    rng = np.random.default_rng(20)
    ref = rng.standard_normal(4000)
    ref -= ref.mean()
    noise = rng.standard_normal(4000)
    noise -= noise.mean()
    noise -= (noise @ ref) / (ref @ ref) * ref
    noise *= np.sqrt((ref @ ref) / (100 * (noise @ noise)))
    err20 = abs(si_snr(ref + noise, ref) - 20.0)
    oracle_gap = abs(naive_si_snr(ref + noise, ref) - 20.0)
    mix = rng.standard_normal(4000)
    zero = ev.si_snri(mix, mix, ref)
    report(4, exact and err20 < 1e-9 and oracle_gap < 1e-9 and zero == 0.0,
           f"scale invariance exact {exact}, 20 dB case off by {err20:.1e}, si_snri(mix, mix) = {zero}")


# -- 5 ------------------------------------------------------------------------------

def test_c5_eer():
    rng = np.random.default_rng(0)
    matches = 0
    for _ in range(200):
        n = int(rng.integers(2, 65))
        labels = rng.random(n) < 0.5
        labels[0], labels[1] = True, False
        scores = np.round(rng.standard_normal(n) + labels * rng.uniform(0, 2), int(rng.integers(0, 3)))
        matches += ev.eer(scores, labels) == brute_force_eer(list(scores), list(labels))
    perfect = ev.eer([0.9, 0.8, 0.7, 0.3, 0.2, 0.1], [1, 1, 1, 0, 0, 0])
    coin = ev.eer(rng.standard_normal(20000), rng.random(20000) < 0.5)
    report(5, matches == 200 and perfect == 0.0 and abs(coin - 50.0) <= 2.0,
           f"{matches}/200 oracle matches, separated {perfect}%, coin flips {coin:.2f}%")


# -- 6 ------------------------------------------------------------------------------

def test_c6_mca():
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        tm, te = int(rng.integers(1, 20)), int(rng.integers(1, 20))
        block = McaBlock(16, 12, rng, d_model=16, heads=4)
        block(Tensor(rng.standard_normal((2, tm, 16)) * 3), Tensor(rng.standard_normal((2, te, 12)) * 3))
        worst = max(worst, np.abs(block.last_attention.sum(-1) - 1).max())
    rng = np.random.default_rng(60)
    block = McaBlock(256, 256, rng)
    block(Tensor(rng.standard_normal((1, 7, 256))), Tensor(rng.standard_normal((1, 1, 256))))
    single = bool(np.all(block.last_attention == 1.0))
    identical = True
    for family in ("e3net", "convtasnet"):
        cfg = preset(f"desk_{family}", conditioning="mca_film")
        model = TssModel(cfg, np.random.default_rng(61))
        mix = rng.standard_normal((2, 4000)) * 0.1
        enroll = rng.standard_normal((2, 30, 80))
        with no_grad():
            identical &= np.array_equal(model(mix, enroll).data, model(mix, enroll, ablate=True).data)
    report(6, worst < 1e-6 and single and identical,
           f"row sum error {worst:.1e}, Te=1 weight exactly 1 {single}, zero-init film == ablated {identical}")


# -- 7 ------------------------------------------------------------------------------

def test_c7_mixing(tmp_path):
    root = tmp_path / "corpus"
    write_corpus(root, n_speakers=4, n_utts=3, duration=0.5, seed=1)
    write_wav(root / "noise.wav", np.random.default_rng(4).standard_normal(4000) * 0.1)
    m = make_manifest(root)
    a = dm.render_manifest(m, tmp_path / "a")
    b = dm.render_manifest(m, tmp_path / "b")
    rerender = all(open(ra[k], "rb").read() == open(rb[k], "rb").read()
                   for ra, rb in zip(a, b) for k in ("mix", "target", "enroll"))
    exact = all(np.array_equal((ex := dm.render(s, m)).mixture - ex.interferer, ex.target) for s in m.specs)
    rng = np.random.default_rng(2)
    x = rng.standard_normal(SR)
    noise = rng.standard_normal(3000) * 7
    snr_err = max(abs(measured_snr(x, dm.corrupt_enrollment(x, noise, s)) - s) for s in (-5.0, 0.0, 5.0, 10.0, 20.0))
    vals = []
    for seed in range(20):
        r = np.random.default_rng(seed)
        t, i = r.standard_normal(SR), r.standard_normal(SR)
        i *= np.sqrt(np.mean(t ** 2) / np.mean(i ** 2))
        mix, ref = dm.make_mixture(t, i)
        vals.append(si_snr(mix, ref))
    mean = float(np.mean(vals))
    report(7, rerender and exact and snr_err < 0.01 and abs(mean) <= 0.5,
           f"re-render identical {rerender}, exact sum {exact}, SNR error {snr_err:.1e} dB, "
           f"equal-power SI-SNR {mean:+.3f} dB")


# -- 8 ------------------------------------------------------------------------------

# Two-speaker synthetic corpus: each speaker is a harmonic stack with its own
# pitch and spectral band. The last two utterances of every speaker are held out.
C8_CORPUS = dict(n_speakers=100, n_utts=8, duration=1.0, seed=0, profile="band", band_width=0.25)
C8_TRAIN = TrainConfig(iterations=5000, peak_lr=1e-3, batch_size=8, log_every=500)
C8_ENROLL_FRAMES = 48


def test_c8_desk_training():
    t0 = time.perf_counter()
    corpus = SyntheticCorpus(**C8_CORPUS).utterances
    utt = recipes.separation_experiment(preset("desk_e3net"), corpus, C8_TRAIN, segment=8000, n_eval=300)
    mca = recipes.separation_experiment(preset("desk_e3net", conditioning="mca_additive"), corpus, C8_TRAIN,
                                        segment=8000, n_eval=300, enroll_frames=C8_ENROLL_FRAMES)
    minutes = (time.perf_counter() - t0) / 60
    ok = utt.heldout_si_snri > 5.0 and mca.heldout_si_snri >= utt.heldout_si_snri - 0.5 and minutes < 30
    report(8, ok, f"utterance concat {utt.heldout_si_snri:.2f} dB (need > 5), MCA frame "
                  f"{mca.heldout_si_snri:.2f} dB (need >= {utt.heldout_si_snri - 0.5:.2f}), {minutes:.1f} min")


# -- 9 ------------------------------------------------------------------------------

# closed-set: 20 speakers, first 10 utterances train the d-vector, last 6 form the trials
C9_SPEAKERS, C9_UTTS, C9_TRAIN_UTTS = 20, 16, 10


def test_c9_embedder_training():
    t0 = time.perf_counter()
    corpus = SyntheticCorpus(C9_SPEAKERS, C9_UTTS, 1.0, seed=0, profile="formant").utterances
    train_part = {s: v[:C9_TRAIN_UTTS] for s, v in corpus.items()}
    test_part = {s: v[C9_TRAIN_UTTS:] for s, v in corpus.items()}
    run = recipes.train_dvector(train_part, DVectorConfig(C9_SPEAKERS, hidden=64, num_layers=3), iterations=1500,
                                peak_lr=3e-3, batch_size=16, segment_frames=60, seed=0)
    dvec = recipes.verification_eer(test_part, recipes.dvector_embedder(run.model), n_pairs=500)
    fbank = recipes.verification_eer(test_part, recipes.fbank_embedder(), n_pairs=500)
    minutes = (time.perf_counter() - t0) / 60
    report(9, dvec < 10.0 and fbank > dvec and minutes < 10,
           f"d-vector EER {dvec:.2f}%, pooled FBANK EER {fbank:.2f}%, {minutes:.1f} min")


# -- 10 -----------------------------------------------------------------------------

def test_c10_freeze_fine_tune():
    outcome = {}
    for fine_tune in (False, True):
        cfg = tiny("e3net", "concat", embedding_source="dvector", embedding_dim=8, fine_tune_upstream=fine_tune)
        model = dvector_model(cfg, np.random.default_rng(12))
        before = {k: v.copy() for k, v in model.upstream.state_dict().items()}
        train(TrainConfig(iterations=4, batch_size=2, log_every=1), cfg, dvector_sampler(cfg), model=model)
        after = model.upstream.state_dict()
        outcome[fine_tune] = sum(not np.array_equal(before[k], after[k]) for k in before)
    rng = np.random.default_rng(13)
    with precision(np.float64):
        cfg = tiny("e3net", "concat", embedding_source="dvector", embedding_dim=8, fine_tune_upstream=True)
        model = dvector_model(cfg, rng)
        randomize(model, rng, 0.2)
        mix, ref = rng.standard_normal((2, 60)), rng.standard_normal((2, 60))
        enroll = rng.standard_normal((2, 5, 6))
        # the classifier head is train-only and never reaches the separator loss
        params = [p for n, p in model.named_parameters() if not n.startswith("upstream.model.classifier")]
        err = finite_difference_check(lambda: si_snr_loss(model(mix, enroll), ref), params)
    report(10, outcome[False] == 0 and outcome[True] > 0 and err < 1e-4,
           f"frozen: {outcome[False]} upstream tensors changed, fine-tuned: {outcome[True]} changed, "
           f"end-to-end gradcheck {err:.1e}")
