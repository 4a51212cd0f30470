"""WAV and manifest output for impulse-response batches."""
import csv
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .solver import ImpulseResponse

MANIFEST_HEADER = ("station", "gamma", "status", "path")


def gamma_label(gamma):
    return f"{gamma:.8f}"


def wav_name(station_id, gamma):
    bridge, key = station_id.rsplit("_", 1)
    return f"{bridge}_{int(key):02d}_{gamma_label(gamma)}.wav"


def write_wav(path, ir):
    """32-bit float mono WAV at the response rate; samples are written unscaled."""
    rate = int(round(ir.rate))
    wavfile.write(str(path), rate, np.asarray(ir.samples, dtype=np.float32))


def read_wav(path, station=None, gamma=1.0):
    rate, data = wavfile.read(str(path))
    if data.ndim > 1:
        data = data[:, 0]
    return ImpulseResponse(station or Path(path).stem, data.astype(float), float(rate), gamma)


def parse_wav_name(path):
    """Inverse of :func:`wav_name`: (station id, gamma)."""
    stem = Path(path).stem
    head, gamma = stem.rsplit("_", 1)
    bridge, key = head.rsplit("_", 1)
    return f"{bridge}_{int(key):02d}", float(gamma)


def write_batch(out_dir, responses):
    """Write one WAV per successful response and return manifest rows."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for ir in responses:
        path = ""
        if ir.ok:
            path = out_dir / wav_name(ir.station, ir.gamma)
            write_wav(path, ir)
            path = path.name
        rows.append((ir.station, gamma_label(ir.gamma), ir.status, str(path)))
    return rows


def write_manifest(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        w.writerows(rows)
