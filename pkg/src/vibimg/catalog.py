"""Typed dataset catalog: labeled vibration recordings loaded from a manifest.

A manifest is a JSON document:

    {
      "version": 1,
      "entries": [
        {
          "id": "b007_0hp_de",
          "path": "recordings/b007.mat",      # relative to the manifest file
          "format": "mat5",                   # mat5 | csv | f64le
          "location": "ball",                 # baseline | ball | inner_race | outer_race
          "fault_size_mils": 7,               # 0 | 7 | 14 | 21 (0 iff baseline)
          "load_hp": 0,                       # 0..3
          "sampling_rate_hz": 48000.0,
          "sensor": "drive_end"               # drive_end | fan_end
        }
      ]
    }

Labels live in the manifest rather than being inferred from file names, which
are not consistent across copies of the benchmark data.  ``csv`` files hold
one sample per line with an optional single header line; ``f64le`` files are
raw little-endian 64-bit floats.  ``mat5`` files are parsed by
:mod:`vibimg.mat5` and the channel is chosen by the entry's sensor.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CatalogLoadError, ManifestParseError, NonFiniteInputError
from .mat5 import read_mat5, select_channel

MANIFEST_VERSION = 1

VALID_FAULT_SIZES = (0, 7, 14, 21)
VALID_LOADS = (0, 1, 2, 3)


class FaultLocation(enum.IntEnum):
    """Fault position within the bearing joint; the class index of each label.

    BASELINE means a healthy joint.  The numeric values are the stable class
    indices used for one-hot labels, confusion matrices, and model outputs.
    """

    BASELINE = 0
    BALL = 1
    INNER_RACE = 2
    OUTER_RACE = 3

    @classmethod
    def parse(cls, text: str) -> "FaultLocation":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            valid = ", ".join(m.name.lower() for m in cls)
            raise ValueError(f"unknown fault location {text!r} (expected one of: {valid})") from None

    @property
    def canonical_name(self) -> str:
        return self.name.lower()


class Sensor(enum.Enum):
    """Accelerometer position on the test motor."""

    DRIVE_END = "drive_end"
    FAN_END = "fan_end"

    @classmethod
    def parse(cls, text: str) -> "Sensor":
        for member in cls:
            if member.value == text.strip().lower():
                return member
        raise ValueError(f"unknown sensor {text!r} (expected drive_end or fan_end)")

    @property
    def channel_suffix(self) -> str:
        return "_DE_time" if self is Sensor.DRIVE_END else "_FE_time"


@dataclass(frozen=True)
class RecordingMeta:
    """Provenance and label metadata for one recording."""

    id: str
    location: FaultLocation
    fault_size_mils: int
    load_hp: int
    sampling_rate_hz: float
    sensor: Sensor = Sensor.DRIVE_END
    source_path: str = ""

    def __post_init__(self):
        if self.fault_size_mils not in VALID_FAULT_SIZES:
            raise ValueError(
                f"{self.id}: fault_size_mils must be one of {VALID_FAULT_SIZES}, "
                f"got {self.fault_size_mils}"
            )
        if (self.fault_size_mils == 0) != (self.location is FaultLocation.BASELINE):
            raise ValueError(
                f"{self.id}: fault_size_mils of 0 is required for baseline recordings "
                f"and forbidden otherwise (got size {self.fault_size_mils}, "
                f"location {self.location.canonical_name})"
            )
        if self.load_hp not in VALID_LOADS:
            raise ValueError(f"{self.id}: load_hp must be in {VALID_LOADS}, got {self.load_hp}")
        if not self.sampling_rate_hz > 0:
            raise ValueError(f"{self.id}: sampling_rate_hz must be positive")


@dataclass
class RawRecording:
    """One labeled vibration time series in raw sensor units."""

    meta: RecordingMeta
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size == 0:
            raise ValueError(f"{self.meta.id}: recording has no samples")
        if not np.all(np.isfinite(self.samples)):
            raise NonFiniteInputError(f"{self.meta.id}: recording contains non-finite samples")


@dataclass
class DatasetCatalog:
    """An ordered collection of recordings loaded from one manifest."""

    recordings: list[RawRecording] = field(default_factory=list)
    manifest_version: int = MANIFEST_VERSION

    def __post_init__(self):
        ids = [rec.meta.id for rec in self.recordings]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate recording ids in catalog: {dupes}")

    def __len__(self) -> int:
        return len(self.recordings)

    def __iter__(self):
        return iter(self.recordings)


def read_csv_samples(path: Path) -> np.ndarray:
    """Read one-sample-per-line CSV; a single non-numeric first line is a header."""
    lines = Path(path).read_text().splitlines()
    start = 0
    if lines:
        try:
            float(lines[0])
        except ValueError:
            start = 1
    values = []
    for lineno, line in enumerate(lines[start:], start + 1):
        line = line.strip()
        if not line:
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: not a number: {line!r}") from None
    return np.asarray(values, dtype=np.float64)


def read_f64le_samples(path: Path) -> np.ndarray:
    """Read a raw little-endian float64 sample file."""
    return np.frombuffer(Path(path).read_bytes(), dtype="<f8").astype(np.float64)


def write_csv_samples(path: Path, samples: np.ndarray) -> None:
    Path(path).write_text("\n".join(repr(float(s)) for s in samples) + "\n")


def write_f64le_samples(path: Path, samples: np.ndarray) -> None:
    Path(path).write_bytes(np.asarray(samples, dtype="<f8").tobytes())


def _load_entry(entry: dict, base_dir: Path) -> RawRecording:
    required = {
        "id", "path", "format", "location", "fault_size_mils",
        "load_hp", "sampling_rate_hz", "sensor",
    }
    missing = required - entry.keys()
    if missing:
        raise ValueError(f"manifest entry missing fields: {sorted(missing)}")

    meta = RecordingMeta(
        id=str(entry["id"]),
        location=FaultLocation.parse(entry["location"]),
        fault_size_mils=int(entry["fault_size_mils"]),
        load_hp=int(entry["load_hp"]),
        sampling_rate_hz=float(entry["sampling_rate_hz"]),
        sensor=Sensor.parse(entry["sensor"]),
        source_path=str(entry["path"]),
    )
    path = base_dir / entry["path"]
    fmt = str(entry["format"]).lower()
    if fmt == "mat5":
        variables = read_mat5(path.read_bytes())
        samples = select_channel(variables, meta.sensor.channel_suffix)
    elif fmt == "csv":
        samples = read_csv_samples(path)
    elif fmt == "f64le":
        samples = read_f64le_samples(path)
    else:
        raise ValueError(f"unknown recording format {fmt!r} (expected mat5, csv, or f64le)")
    return RawRecording(meta=meta, samples=samples)


def load_catalog(manifest_path: str | Path) -> DatasetCatalog:
    """Load and validate every entry of a JSON manifest.

    Entries are loaded in manifest order, so the catalog is deterministic for
    a given manifest.  Individual entry failures are collected and raised
    together as a :class:`CatalogLoadError` keyed by entry id.

    Raises:
        ManifestParseError: unreadable JSON or a malformed top level.
        CatalogLoadError: one or more entries failed to load or validate.
    """
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestParseError(f"{manifest_path}: {exc}") from exc

    if not isinstance(doc, dict) or "entries" not in doc or "version" not in doc:
        raise ManifestParseError(
            f"{manifest_path}: manifest must be an object with 'version' and 'entries'"
        )
    if not isinstance(doc["entries"], list) or not doc["entries"]:
        raise ManifestParseError(f"{manifest_path}: 'entries' must be a non-empty list")

    base_dir = manifest_path.parent
    recordings: list[RawRecording] = []
    failures: list[tuple[str, Exception]] = []
    for index, entry in enumerate(doc["entries"]):
        entry_id = str(entry.get("id", f"<entry {index}>")) if isinstance(entry, dict) \
            else f"<entry {index}>"
        try:
            if not isinstance(entry, dict):
                raise ValueError("manifest entry must be an object")
            recordings.append(_load_entry(entry, base_dir))
        except Exception as exc:  # aggregated below, with the entry id
            failures.append((entry_id, exc))
    if failures:
        raise CatalogLoadError(failures)

    return DatasetCatalog(recordings=recordings, manifest_version=int(doc["version"]))


def write_manifest(manifest_path: str | Path, entries: list[dict],
                   version: int = MANIFEST_VERSION) -> None:
    """Write a manifest JSON document with the stable key order used above."""
    doc = {"version": version, "entries": entries}
    Path(manifest_path).write_text(json.dumps(doc, indent=2) + "\n")
