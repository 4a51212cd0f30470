import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soundboard_lab.analysis import (
    HelmholtzSpec,
    MetricsRow,
    cavity_volume_for,
    centroid_difference_curve,
    helmholtz_frequency,
    metrics_for,
    read_metrics_csv,
    spectral_centroid,
    t60,
    write_difference_csv,
    write_metrics_csv,
)
from soundboard_lab.errors import InsufficientDecayError, StationMismatchError, UndefinedCentroidError
from soundboard_lab.fdtd.solver import ImpulseResponse

FS = 48_000


def decaying_noise(tau, duration=1.0, seed=0, fs=FS):
    t = np.arange(int(duration * fs)) / fs
    return np.random.default_rng(seed).standard_normal(t.size) * np.exp(-t / tau)


def test_t60_of_exponential_envelope():
    t = np.arange(int(0.5 * FS)) / FS
    assert t60(np.exp(-t / 0.034), FS) == pytest.approx(3 * math.log(10) * 0.034, rel=0.02)
    assert 3 * math.log(10) * 0.034 == pytest.approx(0.2349, abs=1e-4)


def test_t60_of_multiplicative_decay_noise():
    fs, gamma = 96_000, 0.9999
    n = int(1.6 * fs)
    x = np.random.default_rng(5).standard_normal(n) * gamma ** np.arange(n)
    assert t60(x, fs) == pytest.approx(3 * math.log(10) / (fs * (1 - gamma)), rel=0.05)


def test_t60_errors():
    with pytest.raises(InsufficientDecayError):
        t60(np.ones(FS), FS)  # undamped
    with pytest.raises(InsufficientDecayError):
        t60(decaying_noise(0.5, duration=0.3), FS)  # too short to reach -35 dB
    with pytest.raises(InsufficientDecayError):
        t60(np.zeros(FS), FS)
    with pytest.raises(InsufficientDecayError):
        t60(decaying_noise(0.01, duration=0.05), FS)


@settings(max_examples=20, deadline=None)
@given(scale=st.floats(1e-6, 1e6), seed=st.integers(0, 1000))
def test_t60_amplitude_invariant(scale, seed):
    x = decaying_noise(0.03, seed=seed, duration=0.5)
    assert t60(scale * x, FS) == pytest.approx(t60(x, FS), rel=1e-9)


@settings(max_examples=10, deadline=None)
@given(extra=st.floats(0.05, 1.0), seed=st.integers(0, 1000))
def test_extra_decay_shortens_t60(extra, seed):
    x = decaying_noise(0.03, seed=seed, duration=0.5)
    t = np.arange(x.size) / FS
    assert t60(x * np.exp(-t / extra), FS) < t60(x, FS)


# 2**16 samples at 64 kHz put every multiple of 0.9765625 Hz (1000 Hz included) on a bin,
# so each tone is a single spectral line of the unwindowed transform.
LINE_FS, LINE_N = 64_000, 1 << 16


def tone(f, a=1.0):
    return a * np.sin(2 * np.pi * f * np.arange(LINE_N) / LINE_FS)


def test_centroid_of_tones():
    bin_width = LINE_FS / LINE_N
    assert spectral_centroid(tone(1000), rate=LINE_FS) == pytest.approx(1000, abs=bin_width)
    assert spectral_centroid(tone(500) + tone(1500), rate=LINE_FS) == pytest.approx(1000, abs=bin_width)


def test_low_pass_lowers_centroid():
    from scipy.signal import butter, sosfiltfilt

    x = tone(1000) + tone(6000, 0.5)
    sc = spectral_centroid(x, rate=LINE_FS)
    assert sc == pytest.approx((1000 * 1.0 + 6000 * 0.5) / 1.5, rel=1e-6)
    filtered = sosfiltfilt(butter(4, 3000, fs=LINE_FS, output="sos"), x)
    assert spectral_centroid(filtered, rate=LINE_FS) < sc


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(1e-6, 1e6), shift=st.integers(0, 4095), seed=st.integers(0, 1000))
def test_centroid_scale_and_shift_invariant(scale, shift, seed):
    x = decaying_noise(0.02, duration=4096 / FS, seed=seed)
    base = spectral_centroid(x, rate=FS)
    assert spectral_centroid(scale * x, rate=FS) == pytest.approx(base, rel=1e-9)
    assert spectral_centroid(np.roll(x, shift), rate=FS) == pytest.approx(base, rel=1e-9)


def test_centroid_errors():
    with pytest.raises(UndefinedCentroidError):
        spectral_centroid(np.zeros(1024), rate=FS)
    with pytest.raises(ValueError):
        spectral_centroid(np.ones(1024), f_max=30_000, rate=FS)


def rows(values, gamma, bridge="eight_foot"):
    return [MetricsRow(f"{bridge}_{k:02d}", gamma, 0.2, c) for k, c in enumerate(values, 1)]


def test_centroid_difference_curve():
    a = rows([100, 200, 300], 0.999)
    assert [d for *_, d in centroid_difference_curve(a, a)] == [0, 0, 0]
    b = rows([90, 210, 300], 0.9999)
    curve = centroid_difference_curve(a, b)
    assert curve == [("eight_foot", 1, 10), ("eight_foot", 2, -10), ("eight_foot", 3, 0)]
    with pytest.raises(StationMismatchError):
        centroid_difference_curve(a, rows([1, 2, 3], 0.9999, "four_foot"))
    with pytest.raises(StationMismatchError):
        centroid_difference_curve(a, b[:2])
    failed = [MetricsRow("eight_foot_02", 0.9999, math.nan, math.nan, "diverged")]
    assert len(centroid_difference_curve(a, [b[0], failed[0], b[2]])) == 2


def test_metrics_csv_round_trip(tmp_path):
    data = rows([100.5, 200.25], 0.99954772) + [MetricsRow("four_foot_03", 0.99954772, math.nan, 10.0, "no_decay")]
    write_metrics_csv(tmp_path / "m.csv", data)
    back = read_metrics_csv(tmp_path / "m.csv")
    assert [r.station for r in back] == ["eight_foot_01", "eight_foot_02", "four_foot_03"]
    assert back[0].centroid == pytest.approx(100.5) and back[2].status == "no_decay"
    write_difference_csv(tmp_path / "d.csv", [("eight_foot", 1, 2.5)])
    assert (tmp_path / "d.csv").read_text() == "bridge,key,delta_centroid_hz\neight_foot,1,2.500000\n"


def test_metrics_for_statuses():
    ok = ImpulseResponse("eight_foot_01", decaying_noise(0.03, duration=0.5), FS, 0.999)
    r = metrics_for(ok)
    assert r.status == "ok" and r.t60 > 0 and r.centroid > 0
    short = ImpulseResponse("eight_foot_01", decaying_noise(1.0, duration=0.2), FS, 0.999)
    assert metrics_for(short).status == "no_decay"
    dead = ImpulseResponse("eight_foot_01", np.zeros(0), FS, 0.999, status="diverged")
    assert metrics_for(dead).status == "diverged"


def test_helmholtz_scaling_laws():
    spec = HelmholtzSpec()
    f = helmholtz_frequency(spec)
    doubled = HelmholtzSpec(cavity_volume=2 * spec.cavity_volume)
    assert helmholtz_frequency(doubled) == pytest.approx(f / math.sqrt(2), rel=1e-12)
    # A ~ s^2, V ~ s^3 and L_eff ~ s together give f ~ 1/s
    for s in (0.5, 2.0, 3.7):
        assert helmholtz_frequency(spec.scaled(s)) == pytest.approx(f / s, rel=1e-9)
    assert helmholtz_frequency(HelmholtzSpec(hole_radius=1e-9)) < 1e-3 * f


@settings(max_examples=30, deadline=None)
@given(s=st.floats(0.1, 10.0), r=st.floats(0.01, 0.1), v=st.floats(0.01, 1.0))
def test_helmholtz_homogeneity(s, r, v):
    spec = HelmholtzSpec(hole_radius=r, cavity_volume=v)
    assert helmholtz_frequency(spec.scaled(s)) * s == pytest.approx(helmholtz_frequency(spec), rel=1e-9)


def test_helmholtz_round_trip_37hz():
    v = cavity_volume_for(37.0)
    assert helmholtz_frequency(HelmholtzSpec(cavity_volume=v)) == pytest.approx(37.0, abs=0.01)
    with pytest.raises(ValueError):
        HelmholtzSpec(hole_radius=0)
