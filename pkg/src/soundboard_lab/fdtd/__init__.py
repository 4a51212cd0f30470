"""Explicit time-domain solver for the plate with coupled stiffener bars."""
from .io import wav_name, write_batch, write_manifest, write_wav
from .solver import (
    CalibrationResult,
    Excitation,
    ImpulseResponse,
    SimConfig,
    build_system,
    calibrate_decrement,
    closed_form_t60,
    gamma_for_t60,
    run_batch,
    simulate,
)
from .system import PlateSystem, SimState
