import numpy as np
import pytest

from granulometer.errors import EmptyAnnotation, MalformedHeader, ParseError, TruncatedPayload, UnsupportedDepth
from granulometer.io import (
    Raster,
    decode_label_map,
    decode_raster,
    encode_label_map,
    encode_raster,
    read_scale_annotation,
)


def test_decode_small_pgm():
    r = decode_raster(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
    assert (r.width, r.height) == (2, 2)
    assert r.samples.ravel().tolist() == [0, 255, 128, 64]


def test_canonical_pgm_round_trip():
    data = b"P5\n3 2\n255\n" + bytes(range(6))
    assert encode_raster(decode_raster(data)) == data


def test_full_frame_zero_pgm():
    r = decode_raster(b"P5\n856 480\n255\n" + bytes(856 * 480))
    assert (r.width, r.height) == (856, 480)
    assert not r.samples.any()


def test_smallest_frame_encoding():
    assert encode_raster(Raster(1, 1, [0]), "PGM") == b"P5\n1 1\n255\n\x00"


@pytest.mark.parametrize("fmt", ["PGM", "PNG"])
def test_random_round_trip_and_determinism(fmt):
    arr = np.random.default_rng(5).integers(0, 256, (32, 32), dtype=np.uint8)
    r = Raster.from_array(arr)
    a, b = encode_raster(r, fmt), encode_raster(r, fmt)
    assert a == b
    assert decode_raster(a) == r


def test_comments_in_header():
    r = decode_raster(b"P5\n# made by hand\n2 1\n# depth\n255\n\x01\x02")
    assert r.samples.tolist() == [[1, 2]]


@pytest.mark.parametrize(
    "data, err",
    [
        (b"P6\n1 1\n255\n\x00", MalformedHeader),
        (b"P5\n0 1\n255\n", MalformedHeader),
        (b"P5\n2 2\n255\n\x00\x00", TruncatedPayload),
        (b"P5\n1 1\n65535\n\x00\x00", UnsupportedDepth),
        (b"P5\n1 1\n255\n\x00\x00", MalformedHeader),  # trailing bytes
    ],
)
def test_decode_errors(data, err):
    with pytest.raises(err):
        decode_raster(data)


def test_label_map_round_trip():
    lab = np.array([[0, 1, 70000 % 65536], [65535, 2, 3]], dtype=np.int32)
    back = decode_label_map(encode_label_map(lab))
    assert back.dtype == np.int32
    assert np.array_equal(back, lab)
    assert encode_label_map(lab).startswith(b"P5\n3 2\n65535\n")


def test_annotation_single_record():
    circles = read_scale_annotation("100,100,60,60\n")
    assert len(circles) == 1
    assert circles[0].diameter_mm == 60
    assert circles[0].radius == 60


def test_annotation_header_and_comments():
    text = "cx_px,cy_px,radius_px,diameter_mm\n# sphere A\n\n10,20,30,60\n"
    assert len(read_scale_annotation(text)) == 1


def test_annotation_empty():
    with pytest.raises(EmptyAnnotation):
        read_scale_annotation("")


@pytest.mark.parametrize("text, line", [("1,2,0,60\n", 1), ("1,2,3,60\n1,2,3\n", 2), ("1,2,x,60", 1), ("1,2,3,-1", 1)])
def test_annotation_errors_report_line(text, line):
    with pytest.raises(ParseError) as exc:
        read_scale_annotation(text)
    assert exc.value.line == line


def test_raster_is_immutable():
    r = Raster.from_array(np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(ValueError):
        r.samples[0, 0] = 1
