"""Raster codecs (binary PGM, 8-bit PNG), 16-bit label maps and scale annotations."""

from __future__ import annotations

import io as _stdio
from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np

from .errors import (
    EmptyAnnotation,
    MalformedHeader,
    ParseError,
    TruncatedPayload,
    UnsupportedDepth,
)

PathLike = Union[str, Path]

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_WHITESPACE = b" \t\n\r\x0b\x0c"


class Raster:
    """Immutable 8-bit single-channel image.

    ``samples`` is a read-only ``(height, width)`` uint8 array in row-major order.
    """

    __slots__ = ("_samples",)

    def __init__(self, width: int, height: int, samples) -> None:
        width, height = int(width), int(height)
        if width <= 0 or height <= 0:
            raise ValueError(f"raster dimensions must be positive, got {width}x{height}")
        arr = np.asarray(samples)
        if arr.size != width * height:
            raise ValueError(f"expected {width * height} samples, got {arr.size}")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("sample values must lie in 0..255")
            arr = arr.astype(np.uint8)
        arr = np.array(arr.reshape(height, width), dtype=np.uint8, copy=True)
        arr.setflags(write=False)
        self._samples = arr

    @classmethod
    def from_array(cls, arr) -> "Raster":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise ValueError("raster arrays must be 2-D")
        return cls(arr.shape[1], arr.shape[0], arr)

    @property
    def width(self) -> int:
        return self._samples.shape[1]

    @property
    def height(self) -> int:
        return self._samples.shape[0]

    @property
    def samples(self) -> np.ndarray:
        return self._samples

    def __eq__(self, other) -> bool:
        if not isinstance(other, Raster):
            return NotImplemented
        return self._samples.shape == other._samples.shape and bool(
            np.array_equal(self._samples, other._samples)
        )

    def __hash__(self) -> int:
        return hash((self.width, self.height, self._samples.tobytes()))

    def __repr__(self) -> str:
        return f"Raster(width={self.width}, height={self.height})"


def _read_header_tokens(data: bytes, count: int):
    """Return ``count`` ASCII header tokens after the magic and the payload offset."""
    tokens = []
    pos = 2
    n = len(data)
    while len(tokens) < count:
        # whitespace and comments between tokens
        while pos < n and (data[pos] in _WHITESPACE or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                while pos < n and data[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
            pos += 1
        tok = data[start:pos]
        if not tok:
            raise MalformedHeader("header ended before all fields were read")
        if not tok.isdigit():
            raise MalformedHeader(f"non-numeric header field {tok!r}")
        tokens.append(int(tok))
    # exactly one whitespace byte separates maxval from the payload
    if pos >= n or data[pos] not in _WHITESPACE:
        raise MalformedHeader("missing whitespace after maxval")
    return tokens, pos + 1


def _parse_pgm(data: bytes, want_maxval: int) -> np.ndarray:
    if len(data) < 2 or data[:2] != b"P5":
        raise MalformedHeader("not a binary PGM (missing P5 magic)")
    (width, height, maxval), offset = _read_header_tokens(data, 3)
    if width <= 0 or height <= 0:
        raise MalformedHeader(f"invalid dimensions {width}x{height}")
    if maxval != want_maxval:
        raise UnsupportedDepth(f"maxval {maxval} not supported (expected {want_maxval})")
    bytes_per = 1 if maxval < 256 else 2
    need = width * height * bytes_per
    payload = data[offset:]
    if len(payload) < need:
        raise TruncatedPayload(f"expected {need} payload bytes, found {len(payload)}")
    if len(payload) > need:
        raise MalformedHeader(f"{len(payload) - need} unexpected bytes after payload")
    dtype = np.uint8 if bytes_per == 1 else np.dtype(">u2")
    return np.frombuffer(payload, dtype=dtype).reshape(height, width)


def decode_raster(data: bytes) -> Raster:
    """Decode a binary PGM (P5, maxval 255) or an 8-bit grayscale PNG."""
    data = bytes(data)
    if data.startswith(_PNG_MAGIC):
        return _decode_png(data)
    return Raster.from_array(_parse_pgm(data, 255))


def _decode_png(data: bytes) -> Raster:
    from PIL import Image

    try:
        img = Image.open(_stdio.BytesIO(data))
        img.load()
    except Exception as exc:  # Pillow raises a zoo of types for corrupt files
        raise MalformedHeader(f"unreadable PNG: {exc}") from exc
    if img.mode != "L":
        raise UnsupportedDepth(f"PNG mode {img.mode!r} is not 8-bit grayscale")
    return Raster.from_array(np.asarray(img, dtype=np.uint8))


def encode_raster(r: Raster, format: str = "PGM") -> bytes:
    fmt = format.upper()
    if fmt == "PGM":
        header = f"P5\n{r.width} {r.height}\n255\n".encode("ascii")
        return header + r.samples.tobytes()
    if fmt == "PNG":
        from PIL import Image

        buf = _stdio.BytesIO()
        Image.fromarray(np.ascontiguousarray(r.samples), mode="L").save(
            buf, format="PNG", optimize=False, compress_level=6
        )
        return buf.getvalue()
    raise ValueError(f"unknown raster format {format!r}")


def read_raster(path: PathLike) -> Raster:
    return decode_raster(Path(path).read_bytes())


def write_raster(path: PathLike, r: Raster) -> None:
    path = Path(path)
    fmt = "PNG" if path.suffix.lower() == ".png" else "PGM"
    path.write_bytes(encode_raster(r, fmt))


def encode_label_map(labels: np.ndarray) -> bytes:
    """Encode a label map as a 16-bit binary PGM (maxval 65535, big-endian)."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError("label maps must be 2-D")
    if labels.size and (labels.min() < 0 or labels.max() > 65535):
        raise ValueError("labels must fit in 16 bits")
    h, w = labels.shape
    header = f"P5\n{w} {h}\n65535\n".encode("ascii")
    return header + labels.astype(">u2").tobytes()


def decode_label_map(data: bytes) -> np.ndarray:
    return _parse_pgm(bytes(data), 65535).astype(np.int32)


def write_label_map(path: PathLike, labels: np.ndarray) -> None:
    Path(path).write_bytes(encode_label_map(labels))


def read_label_map(path: PathLike) -> np.ndarray:
    return decode_label_map(Path(path).read_bytes())


@dataclass(frozen=True)
class TracedCircle:
    cx: float  # px
    cy: float  # px
    radius: float  # px
    diameter_mm: float


def read_scale_annotation(text: str) -> List[TracedCircle]:
    """Parse ``cx_px,cy_px,radius_px,diameter_mm`` records.

    Blank lines, ``#`` comments and a leading header row are skipped.
    """
    circles = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if not circles and fields and fields[0].lower().startswith("cx"):
            continue
        if len(fields) != 4:
            raise ParseError(f"expected 4 fields, got {len(fields)}", line=lineno)
        try:
            cx, cy, radius, diameter = (float(f) for f in fields)
        except ValueError:
            raise ParseError(f"non-numeric field in {line!r}", line=lineno) from None
        if not all(np.isfinite([cx, cy, radius, diameter])):
            raise ParseError("non-finite value", line=lineno)
        if radius <= 0:
            raise ParseError(f"radius must be positive, got {radius}", line=lineno)
        if diameter <= 0:
            raise ParseError(f"diameter must be positive, got {diameter}", line=lineno)
        circles.append(TracedCircle(cx, cy, radius, diameter))
    if not circles:
        raise EmptyAnnotation("annotation contains no traced scale objects")
    return circles
