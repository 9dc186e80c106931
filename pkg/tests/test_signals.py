import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import signal as sps

from fusionsearch.signals import (DataError, DegenerateChannelWarning, FilterSpec,
                                  MultiChannelRecording, SynthParams, WindowedDataset, add_awgn,
                                  assemble_windows, decimate, generate_synthetic_subject,
                                  load_recording, preprocess, save_recording, standardize,
                                  substitute_channels, synth_labels, window_index)


@pytest.mark.parametrize("s", [1, 2, 3, 4, 5, 8, 10])
@pytest.mark.parametrize("n", [1, 7, 100, 1001])
def test_decimate_length(s, n):
    x = np.random.default_rng(0).standard_normal(n)
    assert len(decimate(x, s)) == math.ceil(n / s)


@pytest.mark.parametrize("s", [2, 3, 5, 10])
def test_filter_response(s):
    sos = FilterSpec(s).sos()
    edge = 0.8 / s
    w, h = sps.sosfreqz(sos, worN=[1e-6, edge * 0.999 * np.pi, np.pi / s * 1.2, np.pi])
    db = 20 * np.log10(np.maximum(np.abs(h), 1e-300))
    # passband ripple 0.05 dB, even order -> DC sits at the ripple floor
    assert -0.0501 <= db[0] <= 1e-9
    assert db[1] >= -0.0501
    assert db[2] < -20
    assert db[3] < -60


def test_decimate_identity_and_errors():
    x = np.arange(10.0)
    assert np.array_equal(decimate(x, 1), x)
    with pytest.raises(ValueError):
        decimate(x, 2.5)
    with pytest.raises(ValueError):
        decimate(np.array([]), 2)


def test_decimate_keeps_slow_sine():
    fs, s = 200, 2
    t = np.arange(fs * 20) / fs
    y = decimate(np.sin(2 * np.pi * 2 * t), s)
    ref = np.sin(2 * np.pi * 2 * t[::s])
    # forward-only filter: compare amplitude after the transient, not phase
    assert abs(np.std(y[200:]) - np.std(ref[200:])) < 0.01


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=200))
def test_standardize_moments(xs):
    x = np.array(xs)
    if x.std() < 1e-9 * max(1.0, np.abs(x).max()):
        return
    z = standardize(x)
    assert abs(z.mean()) < 1e-9
    assert abs(z.std() - 1) < 1e-9


def test_standardize_degenerate():
    with pytest.warns(DegenerateChannelWarning):
        z = standardize(np.full(50, 3.0))
    assert np.array_equal(z, np.zeros(50))


def test_preprocess_rates():
    rng = np.random.default_rng(1)
    rec = MultiChannelRecording("a", {"c": rng.standard_normal(2000)}, 200, np.zeros(10, int))
    out = preprocess(rec)
    assert out.sample_rate_hz == 100 and len(out.channels["c"]) == 1000
    bad = MultiChannelRecording("b", {"c": rng.standard_normal(1500)}, 150, np.zeros(10, int))
    with pytest.raises(DataError):
        preprocess(bad)


def test_preprocess_flags_degenerate_channel():
    rec = MultiChannelRecording("a", {"c": np.ones(1000), "d": np.arange(1000.0)}, 100,
                                np.zeros(10, int))
    with pytest.warns(DegenerateChannelWarning):
        out = preprocess(rec)
    assert out.degenerate == ("c",)


def test_recording_invariants():
    with pytest.raises(DataError):
        MultiChannelRecording("a", {"c": np.zeros(100), "d": np.zeros(99)}, 10, np.zeros(10))
    with pytest.raises(DataError):
        MultiChannelRecording("a", {"c": np.zeros(100)}, 10, np.zeros(9))


@given(st.integers(1, 50), st.integers(1, 30))
def test_window_index_oracle(n, T):
    idx = window_index(n, T)
    for k in range(n):
        assert list(idx[k]) == [max(j, 0) for j in range(k - T + 1, k + 1)]


def _ramp_recording(n_s=12, fs=100, sid="r"):
    # each epoch holds its own index, so window contents are easy to read back
    x = np.repeat(np.arange(n_s, dtype=np.float64), fs)
    return MultiChannelRecording(sid, {"a": x, "b": -x}, fs, np.arange(n_s) % 2)


def test_assemble_windows_alignment():
    b = assemble_windows(_ramp_recording(), T=4)
    assert b.channels[0].shape == (12, 4, 100)
    assert list(b.channels[0][5, :, 0]) == [2, 3, 4, 5]
    assert list(b.channels[0][1, :, 0]) == [0, 0, 0, 1]
    assert list(b.labels) == list(np.arange(12) % 2)


def test_windowed_dataset_matches_assembled():
    recs = [_ramp_recording(sid="r1"), _ramp_recording(sid="r2")]
    ds = WindowedDataset(recs, 3, ("b", "a"))
    ref = [assemble_windows(r, 3, ("b", "a")) for r in recs]
    batch = ds.take(np.arange(len(ds)))
    for slot in range(2):
        expect = np.concatenate([r.channels[slot] for r in ref]).astype(np.float32)
        assert np.array_equal(batch.channels[slot], expect)
    assert list(batch.subject_ids[:12]) == ["r1"] * 12


def test_windowed_dataset_missing_channel():
    with pytest.raises(DataError):
        WindowedDataset([_ramp_recording()], 3, ("a", "zz"))


def test_substitute_channels_copies_exactly():
    rec = _ramp_recording()
    rec = MultiChannelRecording("r", {**rec.channels, "c": 2 * rec.channels["a"]}, 100, rec.labels)
    b = assemble_windows(rec, 3)
    out = substitute_channels(b, working=[1], replacement={0: 1, 2: 1})
    assert all(np.array_equal(c, b.channels[1]) for c in out.channels)
    assert np.array_equal(b.channels[0], assemble_windows(rec, 3).channels[0])  # input untouched
    with pytest.raises(ValueError):
        substitute_channels(b, working=[1], replacement={0: 1})
    with pytest.raises(ValueError):
        substitute_channels(b, working=[1, 2], replacement={0: 0})


@pytest.mark.parametrize("snr", [-20, -5, 0, 10, 20])
def test_awgn_snr(snr):
    rng = np.random.default_rng(3)
    x = np.sin(np.linspace(0, 400, 200_000))
    y = add_awgn(x, snr, rng)
    noise = y - x
    measured = 10 * np.log10(np.mean(x**2) / np.mean(noise**2))
    assert abs(measured - snr) < 0.05


def test_awgn_common_random_numbers():
    x = np.random.default_rng(0).standard_normal(1000)
    n1 = add_awgn(x, 0, np.random.default_rng(9)) - x
    n2 = add_awgn(x, 10, np.random.default_rng(9)) - x
    np.testing.assert_allclose(n1 / n2, math.sqrt(10), rtol=1e-9)


@given(st.integers(0, 10_000), st.sampled_from([0.05, 0.129, 0.3]))
def test_synth_labels_contract(seed, prevalence):
    p = SynthParams(duration_s=600, prevalence=prevalence)
    y = synth_labels(p, np.random.default_rng(seed))
    assert y.sum() == round(prevalence * 600)
    edges = np.flatnonzero(np.diff(np.r_[0, y, 0]))
    runs = edges[1::2] - edges[::2]
    assert runs.min() >= p.min_run_s and runs.max() <= p.max_run_s


def test_synth_is_deterministic_and_valid():
    p = SynthParams(duration_s=200)
    a = generate_synthetic_subject(p, np.random.default_rng(5), "x")
    b = generate_synthetic_subject(p, np.random.default_rng(5), "x")
    assert all(np.array_equal(a.channels[k], b.channels[k]) for k in a.channels)
    assert a.n_samples == 200 * 100 and len(a.channels) == 3
    with pytest.raises(ValueError):
        SynthParams(prevalence=1.5).validate()


def test_synth_bursts_raise_power():
    p = SynthParams(duration_s=600)
    rec = generate_synthetic_subject(p, np.random.default_rng(2))
    env = np.repeat(rec.labels, 100).astype(bool)
    ratios = [np.var(x[env]) / np.var(x[~env]) for x in rec.channels.values()]
    # unit background plus (gain * amplitude)^2 of burst power
    assert all(r > 2 for r in ratios)
    assert ratios[0] > ratios[1] > ratios[2]


def test_disk_round_trip(tmp_path):
    rec = generate_synthetic_subject(SynthParams(duration_s=130), np.random.default_rng(0), "s7")
    m = save_recording(rec, tmp_path / "s7")
    back = load_recording(m)
    assert back.subject_id == "s7" and back.sample_rate_hz == 100
    assert np.array_equal(back.labels, rec.labels)
    for k in rec.channels:
        assert np.array_equal(back.channels[k], rec.channels[k].astype(np.float32))
    first = {f.name: f.read_bytes() for f in (tmp_path / "s7").iterdir()}
    save_recording(back, tmp_path / "s7")
    assert first == {f.name: f.read_bytes() for f in (tmp_path / "s7").iterdir()}


def test_load_errors(tmp_path):
    rec = generate_synthetic_subject(SynthParams(duration_s=130), np.random.default_rng(0), "s")
    m = save_recording(rec, tmp_path / "s")
    with pytest.raises(DataError):
        load_recording(tmp_path / "nope.json")
    (tmp_path / "s" / "labels.txt").write_text("0\n2\n")
    with pytest.raises(DataError):
        load_recording(m)
    (tmp_path / "s" / "labels.txt").write_text("0\n" * 10)
    with pytest.raises(DataError):
        load_recording(m)
    m.write_text("{not json")
    with pytest.raises(DataError):
        load_recording(m)


def test_preprocess_silences_no_warnings_for_clean_data():
    rec = generate_synthetic_subject(SynthParams(duration_s=130), np.random.default_rng(0))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = preprocess(rec)
    assert out.degenerate == ()
