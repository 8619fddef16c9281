import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enrolltss import datamix as dm
from enrolltss.dsp import read_wav, write_wav
from enrolltss.errors import ConfigError, CorruptionError, DataError, InputError
from enrolltss.separators import si_snr
from enrolltss.synth import write_corpus

SR = 16000


def measured_snr(clean, corrupted):
    noise = corrupted - clean
    return 10 * math.log10(np.mean(clean ** 2) / np.mean(noise ** 2))


# -- make_mixture -----------------------------------------------------------------

def test_equal_length_is_elementwise_sum():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(100), rng.standard_normal(100)
    mix, ref = dm.make_mixture(a, b)
    assert np.array_equal(mix, a + b) and np.array_equal(ref, a)


def test_short_interferer_is_tiled():
    b = np.arange(SR, dtype=float)
    out = dm.fit_interferer(b, int(2.5 * SR))
    for n in (0, 1, SR - 1, SR, SR + 7, 2 * SR, int(2.5 * SR) - 1):
        assert out[n] == b[n % SR]


def test_long_interferer_is_cropped_at_offset():
    b = np.arange(100, dtype=float)
    assert np.array_equal(dm.fit_interferer(b, 30, 50), b[50:80])
    assert np.array_equal(dm.fit_interferer(b, 30, 95), b[70:100])  # offset clipped to valid range


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 300), st.integers(1, 300), st.integers(0, 400), st.integers(0, 2**31))
def test_mixture_minus_interferer_is_target(nt, ni, offset, seed):
    # PCM-grid samples (as read from 16-bit WAV) make the subtraction exact
    rng = np.random.default_rng(seed)
    t = rng.integers(-32768, 32768, nt) / 32768.0
    i = rng.integers(-32768, 32768, ni) / 32768.0
    mix, ref = dm.make_mixture(t, i, offset)
    adjusted = dm.fit_interferer(i, nt, offset)
    assert len(mix) == nt and np.array_equal(ref, t)
    assert np.array_equal(mix - adjusted, t)


def test_empty_inputs():
    with pytest.raises(InputError):
        dm.make_mixture(np.zeros(0), np.ones(3))
    with pytest.raises(InputError):
        dm.make_mixture(np.ones(3), np.zeros(0))


def test_equal_power_mixture_is_near_zero_db():
    vals = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal(SR), rng.standard_normal(SR)
        b *= np.sqrt(np.mean(a ** 2) / np.mean(b ** 2))
        mix, ref = dm.make_mixture(a, b)
        vals.append(si_snr(mix, ref))
    assert abs(np.mean(vals)) < 0.5


# -- trimming and enrollment --------------------------------------------------------

def tone(seconds, amp=0.5, f=220.0):
    t = np.arange(int(seconds * SR)) / SR
    return amp * np.sin(2 * np.pi * f * t)


def test_trim_pure_silence_raises():
    with pytest.raises(InputError):
        dm.trim_silence(np.zeros(SR))


def test_trim_leading_zeros():
    x = np.concatenate([np.zeros(SR), tone(0.5)])
    out = dm.trim_silence(x)
    assert abs(len(out) - int(0.5 * SR)) <= 400 and out[0] == x[SR]


def test_trim_removes_quiet_internal_gap():
    speech = tone(0.5)
    gap = tone(0.4, amp=0.5 * 10 ** (-60 / 20))
    out = dm.trim_silence(np.concatenate([speech, gap, speech]))
    assert abs(len(out) - 2 * len(speech)) <= 400


def test_trim_keeps_short_pause():
    speech = tone(0.5)
    out = dm.trim_silence(np.concatenate([speech, np.zeros(int(0.1 * SR)), speech]))
    assert len(out) == 2 * len(speech) + int(0.1 * SR)


def test_enrollment_single_long_utterance():
    x = np.arange(25 * SR, dtype=float)
    assert np.array_equal(dm.build_enrollment([x]), x[:20 * SR])


def test_enrollment_four_six_second_utterances():
    parts = [np.full(6 * SR, float(k)) for k in range(4)]
    out = dm.build_enrollment(parts)
    assert len(out) == 20 * SR
    assert np.array_equal(out, np.concatenate(parts[:3] + [parts[3][:2 * SR]]))


def test_enrollment_short_warns(caplog):
    with caplog.at_level(logging.WARNING):
        out = dm.build_enrollment([np.ones(12 * SR)])
    assert len(out) == 12 * SR and "12.00 s" in caplog.text
    with pytest.raises(InputError):
        dm.build_enrollment([])


# -- corruption -----------------------------------------------------------------

def test_corruption_inf_is_identity():
    x = np.random.default_rng(1).standard_normal(1000)
    assert np.array_equal(dm.corrupt_enrollment(x, None, math.inf), x)


@pytest.mark.parametrize("snr", [-5.0, 0.0, 7.5, 20.0, 40.0])
def test_corruption_hits_requested_snr(snr):
    rng = np.random.default_rng(2)
    x = rng.standard_normal(SR)
    noise = rng.standard_normal(3000) * 7
    out = dm.corrupt_enrollment(x, noise, snr)
    assert abs(measured_snr(x, out) - snr) < 0.01


def test_unit_impulse_reverb_is_identity():
    x = np.random.default_rng(3).standard_normal(500)
    assert np.array_equal(dm.corrupt_enrollment(x, None, math.inf, reverb=np.array([1.0])), x)
    rir = np.array([1.0, 0.0, 0.5])
    out = dm.corrupt_enrollment(x, None, math.inf, reverb=rir)
    np.testing.assert_allclose(out[2:], x[2:] + 0.5 * x[:-2])


def test_corruption_errors():
    x = np.ones(100)
    with pytest.raises(CorruptionError):
        dm.corrupt_enrollment(x, np.zeros(10), 5.0)
    with pytest.raises(CorruptionError):
        dm.corrupt_enrollment(np.zeros(100), np.ones(10), 5.0)
    with pytest.raises(CorruptionError):
        dm.corrupt_enrollment(x, None, 5.0)
    with pytest.raises(CorruptionError):
        dm.corrupt_enrollment(x, np.ones(10), math.nan)


# -- manifests --------------------------------------------------------------------

@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    write_corpus(root, n_speakers=4, n_utts=3, duration=0.5, seed=1)
    rng = np.random.default_rng(4)
    write_wav(root / "noise.wav", rng.standard_normal(4000) * 0.1)
    return root


def test_spec_requires_enrollment():
    with pytest.raises(ConfigError):
        dm.MixtureSpec("a.wav", "b.wav", ())


def make_manifest(root):
    specs = [dm.MixtureSpec("spk000/utt00.wav", "spk001/utt01.wav", ("spk000/utt01.wav",), 0, None, 1),
             dm.MixtureSpec("spk002/utt02.wav", "spk003/utt00.wav", ("spk002/utt00.wav", "spk002/utt01.wav"), 17,
                            dm.Corruption("noise.wav", 5.0), 2),
             dm.MixtureSpec("spk001/utt00.wav", "spk000/utt02.wav", ("spk001/utt02.wav",), 3, None, 3)]
    return dm.Manifest(specs, root, 9)


def test_manifest_round_trip(corpus, tmp_path):
    m = make_manifest(corpus)
    dm.write_manifest(tmp_path / "m.tsv", m)
    back = dm.read_manifest(tmp_path / "m.tsv")
    assert back.specs == m.specs and back.seed == 9 and back.root == corpus


def test_manifest_rerender_bit_identical(corpus, tmp_path):
    m = make_manifest(corpus)
    a = dm.render_manifest(m, tmp_path / "a")
    b = dm.render_manifest(m, tmp_path / "b")
    assert len(a) == 3
    for ra, rb in zip(a, b):
        for k in ("mix", "target", "enroll"):
            assert open(ra[k], "rb").read() == open(rb[k], "rb").read()


def test_rendered_mixture_is_exact_sum(corpus):
    m = make_manifest(corpus)
    for spec in m.specs:
        ex = dm.render(spec, m)
        assert np.array_equal(ex.mixture - ex.interferer, ex.target)
        target = read_wav(corpus / spec.target_path)
        assert np.array_equal(ex.target, target)


def test_manifest_errors(tmp_path):
    with pytest.raises(DataError):
        dm.read_manifest(tmp_path / "missing.tsv")
    (tmp_path / "bad.tsv").write_text("a\tb\tc\n")
    with pytest.raises(DataError, match="bad.tsv:1"):
        dm.read_manifest(tmp_path / "bad.tsv")


def test_triplet_lists(tmp_path):
    (tmp_path / "l.csv").write_text("t1.wav,i1.wav,e1.wav\nt2.wav,i2.wav,e2.wav\n")
    m = dm.read_triplets(tmp_path / "l.csv")
    assert [s.target_path for s in m.specs] == ["t1.wav", "t2.wav"]
    assert m.specs[1].enrollment_paths == ("e2.wav",)
    (tmp_path / "l2.txt").write_text("e1.wav t1.wav i1.wav\n")
    m2 = dm.read_triplets(tmp_path / "l2.txt", columns=("enrollment", "target", "interferer"))
    assert m2.specs[0].interferer_path == "i1.wav"


# -- online sampling -----------------------------------------------------------------

def index_of(n_spk, n_utt, lengths=None):
    utts = {}
    for s in range(n_spk):
        utts[f"s{s}"] = [(f"s{s}u{u}", f"s{s}/u{u}.wav", (lengths or {}).get(s, 16000 + 100 * u))
                         for u in range(n_utt if not isinstance(n_utt, dict) else n_utt[s])]
    return dm.CorpusIndex(utts)


def test_sample_online_deterministic():
    idx = index_of(5, 4)
    assert dm.sample_online(idx, 3, 77) == dm.sample_online(idx, 3, 77)
    assert dm.sample_online(idx, 3, 77) != dm.sample_online(idx, 3, 78)


def test_sample_online_constraints_and_uniformity():
    idx = index_of(10, 3)
    counts = {}
    for it in range(10000):
        spec = dm.sample_online(idx, 0, it)
        t_spk = spec.target_path.split("/")[0]
        assert spec.interferer_path.split("/")[0] != t_spk
        assert all(e.split("/")[0] == t_spk and e != spec.target_path for e in spec.enrollment_paths)
        counts[t_spk] = counts.get(t_spk, 0) + 1
    assert all(800 <= c <= 1200 for c in counts.values())


def test_sample_online_skips_single_utterance_speakers():
    idx = index_of(3, {0: 1, 1: 2, 2: 1})
    for it in range(200):
        assert dm.sample_online(idx, 0, it).target_path.startswith("s1/")
    with pytest.raises(DataError):
        dm.sample_online(index_of(2, 1), 0, 0)


def test_corpus_scan(corpus):
    idx = dm.CorpusIndex.scan(corpus)
    assert idx.speakers == ["spk000", "spk001", "spk002", "spk003"]
    assert all(len(v) == 3 and v[0][2] == 8000 for v in idx.utterances.values())


def test_mixture_sampler_keyed_by_iteration():
    corpus = {s: [np.random.default_rng([s, u]).standard_normal(900) for u in range(4)] for s in range(3)}
    calls = []
    sampler = dm.MixtureSampler(corpus, lambda s, u: (calls.append((s, u)), np.full(5, s))[1], 400, seed=2,
                                utterances=[0, 1, 2])
    b1 = sampler(5, 3)
    b2 = sampler(5, 3)
    assert np.array_equal(b1.mixture, b2.mixture) and b1.mixture.shape == (3, 400)
    rng = dm.spec_rng(2, 11)
    for _ in range(50):
        mix, tgt, _, (ts, tu, is_, iu, eu) = sampler.example(rng)
        assert ts != is_ and tu != eu and tu < 3 and iu < 3 and eu < 3


def test_channel_id():
    assert dm.channel_id("spk1/p225_001_mic2.wav") == "2"
    assert dm.channel_id("spk1/utt00.wav") is None
