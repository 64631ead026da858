"""Seeded synthetic bearing-like vibration signals for pipeline testing.

Fault classes are modeled as a periodic train of exponentially decaying
sinusoid bursts (repetition rate, carrier, and decay per class) on top of
Gaussian noise; the healthy baseline is noise plus a low-amplitude tone.
This is a test scaffold with well-separated, documented class constants,
not a physical bearing model.

All randomness comes from PCG64 via :func:`vibimg.seeding.derive_rng`; a
given (config, duration, sampling rate) is bit-reproducible.  The default
per-class configs are chosen so that at 12 kHz and l=20 the burst pattern
repeats cleanly across 400-sample segments, which keeps the four classes
separable even for a nearest-centroid baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .catalog import FaultLocation, RawRecording, RecordingMeta, Sensor
from .errors import InvalidRateError
from .preprocess import VibrationImage, images_from_recording
from .seeding import derive_rng

# Tone amplitude of the healthy baseline relative to cfg.amplitude.
BASELINE_TONE_SCALE = 0.3


@dataclass(frozen=True)
class SynthConfig:
    """Recipe for one synthetic recording."""

    location: FaultLocation
    impulse_rate_hz: float  # burst repetition rate (fault classes)
    resonance_hz: float     # burst carrier, or the baseline tone frequency
    decay: float = 300.0    # burst envelope decay rate, 1/s
    noise_sigma: float = 0.05
    amplitude: float = 1.0
    seed: int = 0


# Default class recipes: distinct repetition rates and carriers per class.
DEFAULT_CLASS_CONFIGS: dict[FaultLocation, SynthConfig] = {
    FaultLocation.BASELINE: SynthConfig(
        location=FaultLocation.BASELINE, impulse_rate_hz=50.0, resonance_hz=600.0),
    FaultLocation.BALL: SynthConfig(
        location=FaultLocation.BALL, impulse_rate_hz=60.0, resonance_hz=1500.0),
    FaultLocation.INNER_RACE: SynthConfig(
        location=FaultLocation.INNER_RACE, impulse_rate_hz=120.0, resonance_hz=3000.0),
    FaultLocation.OUTER_RACE: SynthConfig(
        location=FaultLocation.OUTER_RACE, impulse_rate_hz=30.0, resonance_hz=4500.0),
}

# Synthetic recordings carry a nominal 7-mil fault label (0 for baseline) so
# their metadata passes the same validation as benchmark entries.
SYNTH_FAULT_SIZE_MILS = 7


def generate_signal(cfg: SynthConfig, duration_s: float, fs_hz: float) -> RawRecording:
    """Generate one labeled recording of round(duration_s * fs_hz) samples.

    Raises:
        InvalidRateError: impulse rate at or above the Nyquist frequency.
    """
    if duration_s * fs_hz < 1:
        raise ValueError("duration_s * fs_hz must be at least one sample")
    if cfg.impulse_rate_hz >= fs_hz / 2:
        raise InvalidRateError(
            f"impulse rate {cfg.impulse_rate_hz} Hz is not below Nyquist ({fs_hz / 2} Hz)"
        )

    n = int(round(duration_s * fs_hz))
    t = np.arange(n) / fs_hz
    rng = derive_rng(cfg.seed)
    signal = rng.normal(0.0, cfg.noise_sigma, n) if cfg.noise_sigma > 0 else np.zeros(n)

    if cfg.location is FaultLocation.BASELINE:
        signal += cfg.amplitude * BASELINE_TONE_SCALE * np.sin(
            2.0 * np.pi * cfg.resonance_hz * t)
    else:
        signal += _burst_train(cfg, n, fs_hz)

    meta = RecordingMeta(
        id=f"synth_{cfg.location.canonical_name}_{cfg.seed}",
        location=cfg.location,
        fault_size_mils=0 if cfg.location is FaultLocation.BASELINE else SYNTH_FAULT_SIZE_MILS,
        load_hp=0,
        sampling_rate_hz=fs_hz,
        sensor=Sensor.DRIVE_END,
        source_path="<synthetic>",
    )
    return RawRecording(meta=meta, samples=signal)


def _burst_train(cfg: SynthConfig, n: int, fs_hz: float) -> np.ndarray:
    """Decaying-sinusoid bursts repeating every fs/impulse_rate samples."""
    spacing = fs_hz / cfg.impulse_rate_hz
    # template long enough for the envelope to fall below 1e-8
    template_len = min(n, int(np.ceil(18.5 / cfg.decay * fs_hz)) + 1)
    tau = np.arange(template_len) / fs_hz
    template = cfg.amplitude * np.exp(-cfg.decay * tau) * np.sin(
        2.0 * np.pi * cfg.resonance_hz * tau)

    signal = np.zeros(n)
    onset = 0.0
    while onset < n:
        start = int(round(onset))
        stop = min(n, start + template_len)
        signal[start:stop] += template[: stop - start]
        onset += spacing
    return signal


def generate_dataset(
    per_class: int,
    l: int = 20,
    fs_hz: float = 12000.0,
    seed: int = 0,
    class_configs: dict[FaultLocation, SynthConfig] | None = None,
    noise_sigma: float | None = None,
) -> list[VibrationImage]:
    """Generate ``per_class`` vibration images for each of the four classes.

    Each class gets its own signal, long enough to yield exactly
    ``per_class`` l-by-l images after normalize + segment.  Per-class seeds
    are derived as ``derive_rng(seed, class_index)``, so datasets are
    deterministic and classes can be generated independently.
    """
    if per_class < 1:
        raise ValueError(f"per_class must be >= 1, got {per_class}")
    configs = dict(class_configs or DEFAULT_CLASS_CONFIGS)

    images: list[VibrationImage] = []
    for location in FaultLocation:
        cfg = configs[location]
        if noise_sigma is not None:
            cfg = replace(cfg, noise_sigma=noise_sigma)
        cfg = replace(cfg, seed=_class_seed(seed, location))
        duration_s = per_class * l * l / fs_hz
        rec = generate_signal(cfg, duration_s, fs_hz)
        class_images = images_from_recording(rec, l)
        assert len(class_images) == per_class
        images.extend(class_images)
    return images


def generate_recordings(
    per_class: int,
    l: int = 20,
    fs_hz: float = 12000.0,
    seed: int = 0,
) -> list[RawRecording]:
    """One recording per class, each sized to yield ``per_class`` images at side l."""
    recordings = []
    for location in FaultLocation:
        cfg = replace(DEFAULT_CLASS_CONFIGS[location], seed=_class_seed(seed, location))
        recordings.append(generate_signal(cfg, per_class * l * l / fs_hz, fs_hz))
    return recordings


def _class_seed(master_seed: int, location: FaultLocation) -> int:
    """Derived 63-bit seed for one class's signal; rule: derive_rng(master, class)."""
    return int(derive_rng(master_seed, int(location)).integers(0, 2**63))
