from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import bridged_layout, rect_layout, uniform_map
from soundboard_lab._backend import HAS_NUMBA, backend_name
from soundboard_lab.analysis import energy_decay_curve, t60
from soundboard_lab.errors import CalibrationError, DivergenceError
from soundboard_lab.fdtd import (
    Excitation,
    SimConfig,
    calibrate_decrement,
    closed_form_t60,
    gamma_for_t60,
    run_batch,
    simulate,
)
from soundboard_lab.fdtd.solver import decimate, raised_cosine
from soundboard_lab.fdtd.system import PlateSystem
from soundboard_lab.materials import TimeSpec

BACKENDS = ["numpy", pytest.param("numba", marks=pytest.mark.skipif(not HAS_NUMBA, reason="numba missing"))]


def plate_config(duration=0.02, rate=96_000, out=48_000, amplitude=1.0, kind="raised_cosine", gamma=1.0,
                 layout=None, node=(12, 7)):
    layout = layout or rect_layout(0.2, 0.25)
    return SimConfig(layout, uniform_map(layout), Excitation(node, kind=kind, amplitude=amplitude),
                     time=TimeSpec.from_rate(rate, duration, substeps=None), output_rate=out).with_gamma(gamma)


def random_state(system, seed=0):
    rng = np.random.default_rng(seed)
    state = system.new_state()
    u = rng.standard_normal(system.n_plate + system.n_bar) * 1e-6
    state.w[...], state.bu[...] = system.from_dofs(u)
    return state, u


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("boundary", ["clamped", "simply_supported"])
def test_kernel_step_matches_assembled_stiffness(backend, boundary):
    layout = bridged_layout()
    system = PlateSystem(layout, uniform_map(layout), boundary=boundary, dt=2e-7, substeps=1)
    assert system.n_bar > 0
    state, u = random_state(system)
    system.run(state, 1, backend=backend)
    v = system.to_dofs(state.v, state.bv)
    expected = -system.dt_int * (system.stiffness_matrix() @ u) / system.mass_vector()
    assert np.allclose(v, expected, rtol=1e-9, atol=1e-12 * np.abs(expected).max())


@pytest.mark.skipif(not HAS_NUMBA, reason="numba missing")
def test_backends_agree():
    layout = bridged_layout()
    system = PlateSystem(layout, uniform_map(layout))
    a, _ = random_state(system, 3)
    b = a.copy()
    ra = system.run(a, 500, gamma=0.999, probes=[system.plate_target((10, 10))], backend="numba")
    rb = system.run(b, 500, gamma=0.999, probes=[system.plate_target((10, 10))], backend="numpy")
    assert np.allclose(ra, rb, rtol=1e-9, atol=1e-12 * np.abs(ra).max())


def test_backend_flag(monkeypatch):
    monkeypatch.setenv("SOUNDBOARD_LAB_BACKEND", "numpy")
    assert backend_name() == "numpy"
    monkeypatch.delenv("SOUNDBOARD_LAB_BACKEND")
    assert backend_name() == ("numba" if HAS_NUMBA else "numpy")


@pytest.mark.parametrize("backend,steps", [("numpy", 2_000),
                                           pytest.param("numba", 100_000, marks=pytest.mark.skipif(
                                               not HAS_NUMBA, reason="numba missing"))])
def test_undamped_energy_is_conserved(backend, steps):
    layout = bridged_layout()
    system = PlateSystem(layout, uniform_map(layout))
    state, _ = random_state(system, 1)
    e0 = system.energy(state)
    system.run(state, steps, gamma=1.0, backend=backend)
    assert abs(system.energy(state) - e0) / e0 < 1e-3


@pytest.mark.parametrize("backend", BACKENDS)
def test_coupling_reciprocity_debug_check(monkeypatch, backend):
    monkeypatch.setenv("SOUNDBOARD_LAB_DEBUG", "1")
    layout = bridged_layout()
    system = PlateSystem(layout, uniform_map(layout))
    state, _ = random_state(system, 2)
    system.run(state, 50, backend=backend)
    assert np.all(np.isfinite(state.w))


def test_damping_reduces_energy():
    layout = bridged_layout()
    system = PlateSystem(layout, uniform_map(layout))
    state, _ = random_state(system, 4)
    e0 = system.energy(state)
    system.run(state, 2000, gamma=0.999)
    assert system.energy(state) < 0.5 * e0


def test_zero_excitation_gives_zero_response():
    ir = simulate(plate_config(amplitude=0.0))[0]
    assert not np.any(ir.samples)


@settings(max_examples=5, deadline=None)
@given(scale=st.floats(0.1, 10.0))
def test_response_is_linear(scale):
    a = simulate(plate_config(duration=0.01))[0].samples
    b = simulate(plate_config(duration=0.01, amplitude=scale))[0].samples
    assert np.max(np.abs(b - scale * a)) <= 1e-9 * np.max(np.abs(scale * a))


def test_velocity_probe_and_impulse():
    cfg = plate_config(duration=0.01, kind="velocity_impulse", amplitude=1e-3)
    ir = simulate(cfg)[0]
    assert ir.rate == 48_000 and len(ir.samples) == 480 and np.any(ir.samples)
    vel = SimConfig(cfg.layout, cfg.thickness, cfg.excitation, time=cfg.time, output_rate=48_000,
                    probe_quantity="velocity")
    assert simulate(vel)[0].quantity == "velocity"


def test_grid_convergence_first_mode():
    f = []
    for dx in (0.01, 0.005):
        layout = rect_layout(0.2, 0.25, dx=dx)
        f.append(PlateSystem(layout, uniform_map(layout)).modal_frequencies(1)[0])
    assert abs(f[1] - f[0]) / f[1] < 0.01


def test_batch_is_deterministic_across_parallelism():
    layout = bridged_layout()
    cfg = SimConfig(layout, uniform_map(layout), Excitation("eight_foot_01"),
                    time=TimeSpec.from_rate(96_000, 0.01, substeps=None), output_rate=48_000)
    ids = ["eight_foot_02", "four_foot_03", "eight_foot_04"]
    a = run_batch(cfg, ids, parallelism=1)
    b = run_batch(cfg, ids, parallelism=3)
    assert [r.station for r in a] == ids == [r.station for r in b]
    for x, y in zip(a, b):
        assert np.array_equal(x.samples, y.samples)
    assert run_batch(cfg, [], parallelism=2) == []


def test_divergence_is_reported():
    cfg = plate_config(duration=0.01, amplitude=1e12)
    with pytest.raises(DivergenceError) as info:
        simulate(cfg)
    assert info.value.step is not None and info.value.node[0] == "plate"
    layout = bridged_layout()
    big = SimConfig(layout, uniform_map(layout), Excitation("eight_foot_01", amplitude=1e12),
                    time=TimeSpec.from_rate(96_000, 0.01, substeps=None), output_rate=48_000)
    rec = run_batch(big, ["eight_foot_01", "four_foot_01"])
    assert [r.status for r in rec] == ["diverged", "diverged"]
    assert all(r.samples.size == 0 and "step" in r.message for r in rec)


def test_config_validation():
    with pytest.raises(ValueError):
        plate_config(out=50_000)
    with pytest.raises(ValueError):
        Excitation((1, 1), kind="pluck")
    with pytest.raises(ValueError):
        Excitation((1, 1), width=1e-6).pulse_width(1e-6)
    with pytest.raises(ValueError):
        SimConfig(rect_layout(), uniform_map(rect_layout()), Excitation((3, 3)), probe_quantity="pressure")
    with pytest.raises(ValueError):
        PlateSystem(rect_layout(), uniform_map(rect_layout()), boundary="free")


def test_raised_cosine_and_decimation():
    pulse = raised_cosine(2.0, 10e-6, 1e-6)
    assert len(pulse) == 10 and pulse.max() <= 2.0 and pulse.sum() == pytest.approx(10.0, rel=1e-2)
    t = np.arange(9600) / 96_000
    y = decimate(np.sin(2 * np.pi * 1000 * t), 96_000, 2)
    assert len(y) == 4800
    assert np.allclose(y[500:-500], np.sin(2 * np.pi * 1000 * t[::2])[500:-500], atol=1e-3)


def test_schroeder_curve_non_increasing():
    ir = simulate(plate_config(duration=0.05, gamma=0.999))[0]
    edc = energy_decay_curve(ir.samples)
    assert np.all(np.diff(edc[np.isfinite(edc)]) <= 1e-12)


def test_closed_form_t60_inverse():
    dt = 1 / 96_000
    for t in (0.05, 0.163, 0.306):
        assert closed_form_t60(gamma_for_t60(t, dt), dt) == pytest.approx(t, rel=1e-12)


def test_calibration_matches_closed_form_on_pure_plate():
    cfg = plate_config(node=(12, 7))
    res = calibrate_decrement(cfg, 0.15, 0.002)
    assert abs(res.t60 - 0.15) <= 0.002
    assert closed_form_t60(res.gamma, cfg.time.dt) == pytest.approx(0.15, rel=0.10)
    longer = replace(cfg, time=TimeSpec.from_rate(96_000, 0.2, substeps=None)).with_gamma(res.gamma)
    achieved = simulate(longer)[0]
    assert t60(achieved) == pytest.approx(0.15, rel=0.05)


def test_calibration_rejects_unbracketed_target():
    with pytest.raises(CalibrationError):
        calibrate_decrement(plate_config(), float("inf"), 0.01)
    with pytest.raises(CalibrationError):
        calibrate_decrement(plate_config(), 0.15, 0.002, lo=0.99999, hi=1.0)
