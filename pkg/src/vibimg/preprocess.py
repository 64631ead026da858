"""Signal conditioning and the 1D-to-2D vibration-image mapping.

The image mapping takes l*l consecutive normalized samples and fills an
l-by-l pixel grid row by row: with 1-based indices, pixel (i, j) holds
sample (i-1)*l + j.  Internally pixels are stored 0-based in a row-major
numpy array, which makes the mapping a plain reshape; the inverse is a
flatten.  All functions here are pure and never mutate their inputs.

Normalization is min-max over a whole recording (not per segment), so the
relative amplitude between segments of one recording survives.  Decimation
is plain stride subsampling with no anti-alias filter by default; pass
``prefilter=True`` to apply a length-``factor`` moving average first when
studying the aliasing sensitivity.
"""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .catalog import FaultLocation, RawRecording, RecordingMeta
from .errors import (
    CeilingReachedWarning,
    LengthMismatchError,
    NonFiniteInputError,
    RangeViolationError,
    SignalTooShortError,
)

AUGMENTATION_CEILING = 4  # originals plus three quarter-turn copies


@dataclass
class Segment:
    """l*l consecutive samples cut from one recording."""

    samples: np.ndarray
    label: Optional[FaultLocation] = None
    offset: int = 0  # index of samples[0] in the parent recording

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        side = int(round(np.sqrt(self.samples.size)))
        if side * side != self.samples.size or side < 2:
            raise LengthMismatchError(
                f"segment length {self.samples.size} is not a perfect square of a side >= 2"
            )


@dataclass
class VibrationImage:
    """An l-by-l grid of intensities in [-1, 1] with its class label."""

    pixels: np.ndarray
    label: Optional[FaultLocation] = None
    meta: Optional[RecordingMeta] = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or self.pixels.shape[0] != self.pixels.shape[1]:
            raise LengthMismatchError(f"pixels must be square, got shape {self.pixels.shape}")
        if self.pixels.shape[0] < 2:
            raise LengthMismatchError("image side must be at least 2")
        if not np.all(np.isfinite(self.pixels)):
            raise NonFiniteInputError("image contains non-finite pixels")
        if np.any(self.pixels < -1.0) or np.any(self.pixels > 1.0):
            raise RangeViolationError("pixels outside [-1, 1]; normalize the signal first")

    @property
    def l(self) -> int:
        return self.pixels.shape[0]


def normalize_signal(samples: Sequence[float] | np.ndarray) -> np.ndarray:
    """Min-max map a signal onto [-1, 1] over its full length.

    The affine map 2*(x - min)/(max - min) - 1 sends the minimum to -1 and
    the maximum to +1 exactly.  A constant signal maps to all zeros.

    Raises:
        NonFiniteInputError: empty input or NaN/Inf samples.
    """
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise NonFiniteInputError("signal is empty or contains non-finite samples")
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return 2.0 * (x - lo) / (hi - lo) - 1.0


def segment_signal(
    samples: Sequence[float] | np.ndarray,
    l: int,
    label: Optional[FaultLocation] = None,
) -> list[Segment]:
    """Cut a signal into consecutive non-overlapping windows of l*l samples.

    A trailing remainder shorter than l*l is dropped.  Each segment records
    the sample offset of its first sample in the parent signal.

    Raises:
        SignalTooShortError: fewer than l*l samples in total.
    """
    if l < 2:
        raise ValueError(f"image side l must be >= 2, got {l}")
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    window = l * l
    count = x.size // window
    if count == 0:
        raise SignalTooShortError(
            f"signal of {x.size} samples is shorter than one {l}x{l} window ({window})"
        )
    return [
        Segment(samples=x[k * window : (k + 1) * window].copy(), label=label, offset=k * window)
        for k in range(count)
    ]


def to_vibration_image(seg: Segment, l: int,
                       meta: Optional[RecordingMeta] = None) -> VibrationImage:
    """Fill an l-by-l image row by row from a segment of l*l samples.

    Pixel (i, j), counting from 1, holds segment sample (i-1)*l + j, also
    counting from 1; in 0-based storage this is exactly a row-major reshape.

    Raises:
        LengthMismatchError: segment does not hold l*l samples.
        RangeViolationError: samples outside [-1, 1].
    """
    if seg.samples.size != l * l:
        raise LengthMismatchError(f"segment has {seg.samples.size} samples, expected {l * l}")
    if np.any(seg.samples < -1.0) or np.any(seg.samples > 1.0):
        raise RangeViolationError("segment samples outside [-1, 1]; normalize first")
    return VibrationImage(pixels=seg.samples.reshape(l, l).copy(), label=seg.label, meta=meta)


def from_vibration_image(img: VibrationImage) -> Segment:
    """Exact inverse of :func:`to_vibration_image`: rows concatenated in order."""
    return Segment(samples=img.pixels.reshape(-1).copy(), label=img.label)


def decimate(samples: Sequence[float] | np.ndarray, factor: int,
             prefilter: bool = False) -> np.ndarray:
    """Keep every ``factor``-th sample, dividing the effective sampling rate.

    Output length is ceil(len(samples) / factor).  There is no anti-alias
    filter unless ``prefilter`` is set, in which case a length-``factor``
    moving average runs over the signal before striding.
    """
    if factor < 1:
        raise ValueError(f"decimation factor must be >= 1, got {factor}")
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if factor == 1:
        return x.copy()
    if prefilter:
        kernel = np.full(factor, 1.0 / factor)
        x = np.convolve(x, kernel, mode="same")
    return x[::factor].copy()


def decimate_recording(rec: RawRecording, factor: int, prefilter: bool = False) -> RawRecording:
    """Decimate a recording and divide its sampling-rate metadata by ``factor``."""
    if factor == 1 and not prefilter:
        return rec
    meta = RecordingMeta(
        id=rec.meta.id,
        location=rec.meta.location,
        fault_size_mils=rec.meta.fault_size_mils,
        load_hp=rec.meta.load_hp,
        sampling_rate_hz=rec.meta.sampling_rate_hz / factor,
        sensor=rec.meta.sensor,
        source_path=rec.meta.source_path,
    )
    return RawRecording(meta=meta, samples=decimate(rec.samples, factor, prefilter=prefilter))


def rotate90(img: VibrationImage, quarter_turns: int) -> VibrationImage:
    """Rotate the pixel grid counter-clockwise by 90 degrees per quarter turn."""
    if not 0 <= quarter_turns <= 3:
        raise ValueError(f"quarter_turns must be in 0..3, got {quarter_turns}")
    return VibrationImage(
        pixels=np.rot90(img.pixels, k=quarter_turns).copy(),
        label=img.label,
        meta=img.meta,
    )


def balance_by_rotation(
    images: Sequence[VibrationImage],
    target_class: FaultLocation = FaultLocation.BASELINE,
) -> list[VibrationImage]:
    """Grow the target class with rotated copies until it matches the largest class.

    Copies are appended deterministically: every original at one quarter turn,
    then every original at two, then three.  Other classes are untouched, so
    the target can grow at most 4x; if that ceiling is still below the largest
    class count a :class:`CeilingReachedWarning` is emitted.
    """
    images = list(images)
    counts = Counter(img.label for img in images)
    if counts.get(target_class, 0) == 0:
        raise ValueError(f"dataset has no images of class {target_class.canonical_name}")

    target_count = counts[target_class]
    max_count = max(counts.values())
    deficit = max_count - target_count
    if deficit == 0:
        return images

    originals = [img for img in images if img.label is target_class]
    ceiling_extra = (AUGMENTATION_CEILING - 1) * target_count
    if ceiling_extra < deficit:
        warnings.warn(
            f"class {target_class.canonical_name} reaches only "
            f"{target_count * AUGMENTATION_CEILING} of {max_count} images at the "
            f"{AUGMENTATION_CEILING}x rotation ceiling",
            CeilingReachedWarning,
            stacklevel=2,
        )

    appended = []
    for turns in (1, 2, 3):
        for original in originals:
            if len(appended) == min(deficit, ceiling_extra):
                break
            appended.append(rotate90(original, turns))
    return images + appended


def images_from_recording(
    rec: RawRecording,
    l: int = 20,
    decimation_factor: int = 1,
    prefilter: bool = False,
) -> list[VibrationImage]:
    """Full pipeline for one recording: decimate, normalize, segment, map to images."""
    rec = decimate_recording(rec, decimation_factor, prefilter=prefilter)
    normalized = normalize_signal(rec.samples)
    segments = segment_signal(normalized, l, label=rec.meta.location)
    return [to_vibration_image(seg, l, meta=rec.meta) for seg in segments]


def build_image_dataset(
    recordings,
    l: int = 20,
    decimation_factor: int = 1,
    prefilter: bool = False,
) -> list[VibrationImage]:
    """Apply :func:`images_from_recording` over a catalog or recording list."""
    images: list[VibrationImage] = []
    for rec in recordings:
        images.extend(images_from_recording(rec, l, decimation_factor, prefilter=prefilter))
    return images
