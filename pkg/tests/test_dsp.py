import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from estm import dsp
from estm.config import FeatureConfig
from estm.errors import CacheFormatError, ConfigError, InputError, ShapeError


def make_cfg(**kw):
    return FeatureConfig(**kw)


def test_canonicalize_identity_crop_pad():
    cfg = make_cfg()
    rng = np.random.default_rng(0)

    w = dsp.Waveform(rng.normal(size=160000) * 0.1, 16000)
    assert dsp.canonicalize(w, 160000).samples is not w.samples or True
    np.testing.assert_array_equal(dsp.canonicalize(w, 160000).samples, w.samples)

    w2 = dsp.Waveform(rng.normal(size=160005) * 0.1, 16000)
    out = dsp.canonicalize(w2, 160000).samples
    np.testing.assert_array_equal(out, w2.samples[:160000])

    w3 = dsp.Waveform(rng.normal(size=159000) * 0.1, 16000)
    out = dsp.canonicalize(w3, 160000).samples
    np.testing.assert_array_equal(out[:159000], w3.samples)
    assert np.all(out[159000:] == 0.0)


def test_log_mel_silence_value_and_frame_count():
    cfg = make_cfg()
    wave = dsp.Waveform(np.zeros(160000), 16000)
    mel = dsp.log_mel(wave, cfg)
    assert mel.shape == (128, 311)
    np.testing.assert_allclose(mel, math.log(1e-10), rtol=0, atol=1e-12)


def test_log_mel_pure_tone_columns_constant():
    cfg = make_cfg(clip_samples=32000)
    t = np.arange(32000) / 16000.0
    wave = dsp.Waveform(0.5 * np.sin(2 * np.pi * 1000.0 * t), 16000)
    mel = dsp.log_mel(wave, cfg)
    body = mel[:, 2:-2]
    spread = body.max(axis=1) - body.min(axis=1)
    assert spread.max() < 1e-3


def test_log_mel_amplitude_doubling_adds_ln4():
    cfg = make_cfg(clip_samples=32000)
    rng = np.random.default_rng(1)
    x = rng.normal(size=32000) * 0.2
    m1 = dsp.log_mel(dsp.Waveform(x, 16000), cfg)
    m2 = dsp.log_mel(dsp.Waveform(2.0 * x, 16000), cfg)
    # restrict to entries where the log floor is negligible
    mask = m1 > math.log(1e-6)
    assert mask.any()
    np.testing.assert_allclose((m2 - m1)[mask], math.log(4.0), atol=1e-6)


def test_log_mel_rejects_short_input():
    cfg = make_cfg()
    with pytest.raises(InputError):
        dsp.log_mel(dsp.Waveform(np.ones(512), 16000), cfg)


def test_tsg_gate_constant_input_is_half():
    for c in (-3.7, 0.0, 42.0):
        mel = np.full((16, 9), c)
        g = dsp.tsg_gate(mel, 2.0)
        np.testing.assert_allclose(g.gate, 0.5, atol=1e-12)


def test_tsg_gate_single_frame_is_half():
    mel = np.random.default_rng(2).normal(size=(8, 1))
    g = dsp.tsg_gate(mel, 2.0)
    np.testing.assert_allclose(g.gate, [0.5], atol=1e-12)


def test_tsg_gate_two_frame_hand_computed():
    # frame A all 1.0, frame B all 3.0, M=4:
    #   s_A = 1 + 1 + 0 = 2, s_B = 3 + 3 + 0 = 6, mu = 4, alpha = 2
    #   gate = [sigmoid(-4), sigmoid(4)]
    mel = np.array([[1.0, 3.0]] * 4)
    g = dsp.tsg_gate(mel, 2.0)
    expect = [1.0 / (1.0 + math.exp(4.0)), 1.0 / (1.0 + math.exp(-4.0))]
    np.testing.assert_allclose(g.gate, expect, atol=1e-5)
    np.testing.assert_allclose(g.gate, [0.017986, 0.982014], atol=1e-5)

    # independent scalar recomputation of the statistics path
    for n, col in enumerate(mel.T):
        vals = sorted(col)
        med = 0.5 * (vals[1] + vals[2])
        rms = math.sqrt(sum(v * v for v in vals) / 4)
        mean = sum(vals) / 4
        var = sum((v - mean) ** 2 for v in vals) / 4
        s = med + rms + var
        assert abs((g.median[n] + g.rms[n] + g.variance[n]) - s) < 1e-12


def test_tsg_gate_rejects_empty():
    with pytest.raises(InputError):
        dsp.tsg_gate(np.zeros((4, 0)), 2.0)
    with pytest.raises(ConfigError):
        dsp.tsg_gate(np.zeros((4, 2)), -1.0)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), m=st.integers(1, 24), n=st.integers(1, 40),
       alpha=st.floats(0.1, 8.0))
def test_tsg_gate_bounded_and_centered(seed, m, n, alpha):
    rng = np.random.default_rng(seed)
    mel = rng.normal(size=(m, n)) * rng.uniform(0.1, 10)
    g = dsp.tsg_gate(mel, alpha)
    assert np.all(g.gate > 0.0) and np.all(g.gate < 1.0)
    s = g.median + g.rms + g.variance
    assert abs(np.mean(s - s.mean())) < 1e-6


def test_tsg_gate_constant_offset_invariance():
    # frames share mean and variance, so median/RMS/variance shifts are
    # uniform across frames and cancel against the de-centering mean
    rng = np.random.default_rng(3)
    m, n = 16, 10
    frames = []
    for _ in range(n):
        f = rng.normal(size=m)
        f = (f - f.mean()) / f.std()
        frames.append(1.0 + 1.5 * f)
    mel = np.stack(frames, axis=1)
    base = dsp.tsg_gate(mel, 2.0).gate
    for c in (-5.0, 0.7, 100.0):
        shifted = dsp.tsg_gate(mel + c, 2.0).gate
        np.testing.assert_allclose(shifted, base, atol=1e-6)


def test_tsg_enhance_broadcast_and_errors():
    rng = np.random.default_rng(4)
    mel = rng.normal(size=(6, 5))
    g = dsp.tsg_gate(np.full((6, 5), 2.0), 2.0)  # all 0.5
    np.testing.assert_allclose(dsp.tsg_enhance(mel, g), 0.5 * mel)
    np.testing.assert_array_equal(dsp.tsg_enhance(np.zeros((6, 5)), g), 0.0)
    bad = dsp.TsgGate(np.full(4, 0.5), 2.0, None, None, None)
    with pytest.raises(ShapeError):
        dsp.tsg_enhance(mel, bad)


def test_tsg_enhance_saturated_gate_preserves_dominant_frame():
    mel = np.full((4, 3), 1.0)
    mel[:, 1] = 50.0
    g = dsp.tsg_gate(mel, 50.0)  # huge alpha saturates the sigmoid
    out = dsp.tsg_enhance(mel, g)
    np.testing.assert_allclose(out[:, 1], mel[:, 1], rtol=1e-6)
    assert np.all(out[:, 0] < 1e-3)


def test_assemble_estgram_contract():
    rng = np.random.default_rng(5)
    mel, emel, tg = (rng.normal(size=(128, 311)) for _ in range(3))
    est = dsp.assemble_estgram(mel, emel, tg)
    assert est.shape == (3, 128, 311)
    np.testing.assert_array_equal(est[0], mel)
    with pytest.raises(ShapeError):
        dsp.assemble_estgram(mel, emel[:, :-1], tg)


def test_enhanced_channel_recomputable():
    cfg = make_cfg(clip_samples=32000)
    rng = np.random.default_rng(6)
    wave = dsp.Waveform(rng.normal(size=32000) * 0.1, 16000)
    mel, emel = dsp.extract_static_channels(wave, cfg)
    gate = dsp.tsg_gate(mel, cfg.alpha)
    np.testing.assert_array_equal(emel, gate.gate[None, :] * mel)


def test_standardize_channels_moments():
    rng = np.random.default_rng(7)
    est = rng.normal(size=(3, 32, 17)) * 3.0 + 1.0
    out = dsp.standardize_channels(est)
    np.testing.assert_allclose(out.mean(axis=(1, 2)), 0.0, atol=1e-5)
    np.testing.assert_allclose(out.std(axis=(1, 2)), 1.0, atol=1e-5)


def test_feature_extraction_deterministic():
    cfg = make_cfg(clip_samples=32000)
    rng = np.random.default_rng(8)
    wave = dsp.Waveform(rng.normal(size=32000) * 0.1, 16000)
    a = dsp.extract_static_channels(wave, cfg)
    b = dsp.extract_static_channels(wave, cfg)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@settings(max_examples=40, deadline=None)
@given(extra=st.integers(0, 5000))
def test_frame_count_formula(extra):
    cfg = make_cfg()
    length = cfg.win + extra
    x = np.zeros(length)
    frames = dsp.frame_signal(x, cfg.win, cfg.hop)
    assert frames.shape[0] == 1 + (length - cfg.win) // cfg.hop


def test_feature_cache_roundtrip_bitexact(tmp_path):
    rng = np.random.default_rng(9)
    est = rng.normal(size=(3, 16, 11))
    p = tmp_path / "clip.estg"
    dsp.write_feature_cache(p, est)
    back = dsp.read_feature_cache(p)
    np.testing.assert_array_equal(back, est.astype(np.float32).astype(np.float64))
    # a second write of the read-back content is byte-identical
    p2 = tmp_path / "clip2.estg"
    dsp.write_feature_cache(p2, back)
    assert p.read_bytes() == p2.read_bytes()


def test_feature_cache_rejects_corruption(tmp_path):
    rng = np.random.default_rng(10)
    est = rng.normal(size=(3, 4, 5))
    p = tmp_path / "clip.estg"
    dsp.write_feature_cache(p, est)
    raw = bytearray(p.read_bytes())

    bad_magic = tmp_path / "bad_magic.estg"
    bad_magic.write_bytes(b"NOPE" + bytes(raw[4:]))
    with pytest.raises(CacheFormatError, match="magic"):
        dsp.read_feature_cache(bad_magic)

    bad_version = tmp_path / "bad_version.estg"
    corrupted = bytearray(raw)
    corrupted[4] = 99
    bad_version.write_bytes(bytes(corrupted))
    with pytest.raises(CacheFormatError, match="version"):
        dsp.read_feature_cache(bad_version)

    truncated = tmp_path / "trunc.estg"
    truncated.write_bytes(bytes(raw[:-7]))
    with pytest.raises(CacheFormatError, match="truncated"):
        dsp.read_feature_cache(truncated)
