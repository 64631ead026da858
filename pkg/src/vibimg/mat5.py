"""Reader for the Level-5 MATLAB MAT-file binary format (double-matrix subset).

Supports exactly what the benchmark recordings need: the 128-byte header with
either byte-order indicator, top-level miMATRIX elements holding real
double-precision matrices (including the compact integer storage MATLAB uses
for small-valued doubles), and zlib-compressed (miCOMPRESSED) elements.
Variables of any other class (cells, structs, chars, sparse, integer or
single-precision arrays, complex data) are skipped with a
``SkippedVariableWarning``.

Layout reference, all offsets in bytes:

    header:  116 descriptive text | 8 subsystem offset | 2 version | 2 endian
    element: u32 type | u32 byte count | payload (8-byte aligned)
    small:   types with a nonzero high half-word pack <=4 payload bytes
             into the second tag word

Matrix payloads are column-major; arrays are returned with their stored
shape and dtype float64.
"""

from __future__ import annotations

import warnings
import zlib

import numpy as np

from .errors import (
    BadMagicError,
    ChannelAmbiguousError,
    ChannelMissingError,
    DecompressFailureError,
    SkippedVariableWarning,
    TruncatedElementError,
    UnsupportedVersionError,
)

HEADER_SIZE = 128
SUPPORTED_VERSION = 0x0100

# mi* storage type codes
MI_INT8 = 1
MI_UINT8 = 2
MI_INT16 = 3
MI_UINT16 = 4
MI_INT32 = 5
MI_UINT32 = 6
MI_SINGLE = 7
MI_DOUBLE = 9
MI_INT64 = 12
MI_UINT64 = 13
MI_MATRIX = 14
MI_COMPRESSED = 15

# mx* array class codes
MX_DOUBLE_CLASS = 6

_MX_CLASS_NAMES = {
    1: "cell",
    2: "struct",
    3: "object",
    4: "char",
    5: "sparse",
    6: "double",
    7: "single",
    8: "int8",
    9: "uint8",
    10: "int16",
    11: "uint16",
    12: "int32",
    13: "uint32",
    14: "int64",
    15: "uint64",
}

_STORAGE_DTYPES = {
    MI_INT8: "i1",
    MI_UINT8: "u1",
    MI_INT16: "i2",
    MI_UINT16: "u2",
    MI_INT32: "i4",
    MI_UINT32: "u4",
    MI_SINGLE: "f4",
    MI_DOUBLE: "f8",
    MI_INT64: "i8",
    MI_UINT64: "u8",
}

_COMPLEX_FLAG = 0x0800


def read_mat5(data: bytes) -> dict[str, np.ndarray]:
    """Parse a complete Level-5 MAT-file image into {name: float64 array}.

    Args:
        data: Full file contents.

    Returns:
        Mapping from variable name to its matrix, shaped as stored.

    Raises:
        BadMagicError: descriptive header text absent or malformed.
        UnsupportedVersionError: header version is not 0x0100.
        TruncatedElementError: an element declares more bytes than remain.
        DecompressFailureError: a compressed element fails to inflate.
    """
    if len(data) < HEADER_SIZE:
        raise BadMagicError(
            f"file too short for a MAT-file header ({len(data)} < {HEADER_SIZE} bytes)"
        )
    if any(b == 0 for b in data[:4]):
        raise BadMagicError("descriptive header text absent (zero bytes in first 4)")

    endian_tag = data[126:128]
    if endian_tag == b"IM":
        order = "<"
    elif endian_tag == b"MI":
        order = ">"
    else:
        raise BadMagicError(f"bad endian indicator {endian_tag!r}")

    version = int(np.frombuffer(data, dtype=order + "u2", count=1, offset=124)[0])
    if version != SUPPORTED_VERSION:
        raise UnsupportedVersionError(
            f"unsupported MAT-file version 0x{version:04x} (want 0x{SUPPORTED_VERSION:04x})"
        )

    variables: dict[str, np.ndarray] = {}
    pos = HEADER_SIZE
    while pos < len(data):
        pos = _read_top_element(data, pos, order, variables)
    return variables


def select_channel(variables: dict[str, np.ndarray], suffix: str = "_DE_time") -> np.ndarray:
    """Return the single variable whose name ends with ``suffix``, flattened to 1D.

    The default suffix picks the drive-end accelerometer time series out of a
    benchmark recording; pass ``"_FE_time"`` for the fan-end channel.

    Raises:
        ChannelMissingError: no name matches.
        ChannelAmbiguousError: more than one name matches.
    """
    matches = [name for name in variables if name.endswith(suffix)]
    if not matches:
        raise ChannelMissingError(
            f"no variable ends with {suffix!r} (have {sorted(variables)})"
        )
    if len(matches) > 1:
        raise ChannelAmbiguousError(
            f"{len(matches)} variables end with {suffix!r}: {sorted(matches)}"
        )
    return np.asarray(variables[matches[0]]).reshape(-1, order="F")


def _read_tag(data: bytes, pos: int, order: str) -> tuple[int, int, int, bool]:
    """Decode one element tag.

    Returns (mdtype, nbytes, payload_offset, is_small).
    """
    if pos + 8 > len(data):
        raise TruncatedElementError(f"element tag at {pos} runs past end of data")
    raw = int(np.frombuffer(data, dtype=order + "u4", count=1, offset=pos)[0])
    if raw >> 16:
        # small data element: byte count lives in the high half-word,
        # payload in the second tag word
        return raw & 0xFFFF, raw >> 16, pos + 4, True
    nbytes = int(np.frombuffer(data, dtype=order + "u4", count=1, offset=pos + 4)[0])
    return raw, nbytes, pos + 8, False


def _read_top_element(
    data: bytes, pos: int, order: str, out: dict[str, np.ndarray]
) -> int:
    """Parse one top-level element starting at ``pos``; return the next offset."""
    mdtype, nbytes, payload, small = _read_tag(data, pos, order)
    if payload + nbytes > len(data):
        raise TruncatedElementError(
            f"element at {pos} declares {nbytes} bytes, "
            f"only {len(data) - payload} remain"
        )

    if mdtype == MI_COMPRESSED:
        try:
            inflated = zlib.decompress(data[payload : payload + nbytes])
        except zlib.error as exc:
            raise DecompressFailureError(f"element at {pos}: {exc}") from exc
        _read_top_element(inflated, 0, order, out)
        # compressed elements are not padded to the 8-byte grid
        return payload + nbytes

    if mdtype == MI_MATRIX:
        parsed = _parse_matrix(data[payload : payload + nbytes], order)
        if parsed is not None:
            name, array = parsed
            out[name] = array
    else:
        warnings.warn(
            f"skipping non-matrix element of type {mdtype} at offset {pos}",
            SkippedVariableWarning,
            stacklevel=3,
        )

    if small:
        return pos + 8
    return payload + nbytes + (-nbytes % 8)


def _iter_subelements(buf: bytes, order: str):
    """Yield (mdtype, payload bytes) for each subelement of a matrix body."""
    pos = 0
    while pos < len(buf):
        mdtype, nbytes, payload, small = _read_tag(buf, pos, order)
        if payload + nbytes > len(buf):
            raise TruncatedElementError(
                f"matrix subelement at {pos} declares {nbytes} bytes, "
                f"only {len(buf) - payload} remain"
            )
        yield mdtype, buf[payload : payload + nbytes]
        if small:
            pos += 8
        else:
            pos = payload + nbytes + (-nbytes % 8)


def _parse_matrix(body: bytes, order: str) -> tuple[str, np.ndarray] | None:
    """Parse one miMATRIX body; return (name, array) or None if skipped."""
    sub = _iter_subelements(body, order)

    def next_sub(what: str) -> tuple[int, bytes]:
        try:
            return next(sub)
        except StopIteration:
            raise TruncatedElementError(f"matrix body ends before its {what}") from None

    mdtype, flags_raw = next_sub("array flags")
    if mdtype != MI_UINT32 or len(flags_raw) < 8:
        raise TruncatedElementError("matrix is missing its array-flags subelement")
    flags_word = int(np.frombuffer(flags_raw, dtype=order + "u4", count=1)[0])
    mx_class = flags_word & 0xFF

    _, dims_raw = next_sub("dimensions")
    dims = tuple(int(d) for d in np.frombuffer(dims_raw, dtype=order + "i4"))

    _, name_raw = next_sub("name")
    name = bytes(name_raw).decode("ascii")

    if mx_class != MX_DOUBLE_CLASS or flags_word & _COMPLEX_FLAG:
        kind = _MX_CLASS_NAMES.get(mx_class, f"class {mx_class}")
        if flags_word & _COMPLEX_FLAG:
            kind = f"complex {kind}"
        warnings.warn(
            f"skipping variable {name!r}: unsupported array class ({kind})",
            SkippedVariableWarning,
            stacklevel=4,
        )
        return None

    storage_type, values_raw = next_sub("data")
    dtype = _STORAGE_DTYPES.get(storage_type)
    if dtype is None:
        warnings.warn(
            f"skipping variable {name!r}: unsupported storage type {storage_type}",
            SkippedVariableWarning,
            stacklevel=4,
        )
        return None

    values = np.frombuffer(values_raw, dtype=order + dtype).astype(np.float64)
    expected = int(np.prod(dims)) if dims else 0
    if values.size != expected:
        raise TruncatedElementError(
            f"variable {name!r}: {values.size} values for dimensions {dims}"
        )
    return name, values.reshape(dims, order="F")
