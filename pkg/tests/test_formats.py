from __future__ import annotations

import hashlib
import io
import struct

import numpy as np
import pytest
from PIL import Image

from gyroflow_services.errors import ArgumentError, FormatError, LengthError, OrderingError
from gyroflow_services.formats.colorize import flow_to_color, flow_to_hsv, heatmap_to_image, overlay
from gyroflow_services.formats.correspondences import parse_correspondences, write_correspondences
from gyroflow_services.formats.flo import read_flo, write_flo
from gyroflow_services.formats.frames import FrameIndex, FrameRecord, parse_frame_index, write_frame_index
from gyroflow_services.formats.gyro_log import GyroLog, parse_gyro_log, write_gyro_log
from gyroflow_services.formats.homography import parse_homography_array, write_homography_array
from gyroflow_services.formats.images import crop_to, decode_image, encode_image, luma_uint8, pad_to_multiple
from gyroflow_services.types import Correspondence, FlowField, HomographyArray

PARSERS = (parse_gyro_log, parse_correspondences, parse_frame_index, parse_homography_array, read_flo)


def test_gyro_log_header_and_comments():
    log = parse_gyro_log("# capture 3\ngyro_v1,rad_s,imu0\n0,0.1,0.2,0.3  # first\n\n1000,0.0,0.0,-1.5\n")
    assert log.clock_id == "imu0"
    assert log.timestamps.tolist() == [0, 1000]
    assert log.omegas[1].tolist() == [0.0, 0.0, -1.5]
    with pytest.raises(FormatError):
        parse_gyro_log("0,0.1,0.2,0.3\n")
    with pytest.raises(FormatError):
        parse_gyro_log("gyro_v1,deg_s\n0,1,2,3\n")


def test_gyro_log_ordering_error_names_the_line():
    text = "gyro_v1,rad_s\n1000,0,0,0\n1000,0,0,0\n"
    with pytest.raises(OrderingError) as info:
        parse_gyro_log(text, "bad.csv")
    assert info.value.context["line"] == 3
    assert info.value.context["file"] == "bad.csv"


@pytest.mark.parametrize(
    "row",
    ["-5,0,0,0", "12,0,0", "12,0,nan,0", "12,0,inf,0", "1.5,0,0,0", "99999999999999999999,0,0,0"],
)
def test_gyro_log_rejects_bad_rows(row):
    with pytest.raises(FormatError) as info:
        parse_gyro_log(f"gyro_v1,rad_s\n{row}\n")
    assert info.value.context["line"] == 2


def test_gyro_log_round_trip_is_exact():
    rng = np.random.default_rng(0)
    timestamps = np.cumsum(rng.integers(1, 5_000_000, 1000)).astype(np.int64)
    log = GyroLog(timestamps, rng.normal(0, 2.0, (1000, 3)), clock_id="imu")
    again = parse_gyro_log(write_gyro_log(log))
    assert np.array_equal(again.timestamps, log.timestamps)
    assert np.array_equal(again.omegas, log.omegas)
    assert again.clock_id == "imu"


def test_flo_layout_is_bit_exact():
    one = write_flo(FlowField(np.array([[1.5]]), np.array([[-2.0]])))
    assert len(one) == 20
    expected = struct.pack("<fii", 202021.25, 2, 1) + struct.pack("<ffff", 1.0, 2.0, 3.0, 4.0)
    f = read_flo(expected)
    assert (f.width, f.height) == (2, 1)
    assert f.u.tolist() == [[1.0, 3.0]]
    assert f.v.tolist() == [[2.0, 4.0]]
    assert write_flo(f) == expected


def test_flo_round_trip_and_unknown_sentinels():
    rng = np.random.default_rng(1)
    u = rng.normal(0, 10, (7, 9)).astype(np.float32).astype(np.float64)
    v = rng.normal(0, 10, (7, 9)).astype(np.float32).astype(np.float64)
    valid = np.ones((7, 9), dtype=bool)
    valid[3, 4] = False
    f = read_flo(write_flo(FlowField(u, v, valid)))
    assert np.array_equal(f.validity(), valid)
    assert np.array_equal(f.u[valid], u[valid])
    assert np.array_equal(f.v[valid], v[valid])

    raw = bytearray(write_flo(FlowField(u, v)))
    struct.pack_into("<f", raw, 12, 1e10)
    assert not read_flo(bytes(raw)).validity()[0, 0]


def test_flo_rejects_bad_tags_and_lengths():
    good = write_flo(FlowField.zeros(3, 2))
    with pytest.raises(LengthError):
        read_flo(good[:8])
    with pytest.raises(LengthError):
        read_flo(good[:-4])
    with pytest.raises(LengthError):
        read_flo(good + b"\0\0\0\0")
    with pytest.raises(FormatError):
        read_flo(b"XXXX" + good[4:])
    with pytest.raises(FormatError):
        read_flo(struct.pack("<fii", 202021.25, 0, 5))


def test_correspondences_round_trip_and_line_numbers():
    rng = np.random.default_rng(2)
    pairs = [
        Correspondence(tuple(rng.uniform(0, 640, 2)), tuple(rng.uniform(0, 480, 2)), float(w))
        for w in rng.choice([1.0, 0.25, 0.0], 100)
    ]
    again = parse_correspondences(write_correspondences(pairs))
    assert again == pairs
    with pytest.raises(FormatError) as info:
        parse_correspondences("pts_v1\n1,2,3,4\n1,2,3\n")
    assert info.value.context["line"] == 3
    with pytest.raises(FormatError):
        parse_correspondences("pts_v1\n1,2,3,4,-1\n")
    assert parse_correspondences("pts_v1\n1,2,3,4\n")[0].weight == 1.0


def test_homography_array_round_trip():
    rng = np.random.default_rng(3)
    stack = np.eye(3)[None] + rng.normal(0, 0.01, (14, 3, 3))
    stack[:, 2, 2] = 1.0
    arr = HomographyArray(stack, 640, 480)
    again = parse_homography_array(write_homography_array(arr))
    assert (again.width, again.height, again.patch_count) == (640, 480, 14)
    assert np.array_equal(again.homographies, arr.homographies)


@pytest.mark.parametrize(
    "text",
    [
        "homography_v1\n",
        "homography_v1\n4,4,2\n1,0,0,0,1,0,0,0,1\n",
        "homography_v1\n4,4,1\n1,0,0,0,1,0,0,0,1\n1,0,0,0,1,0,0,0,1\n",
        "homography_v1\n4,2,3\n1,0,0,0,1,0,0,0,1\n1,0,0,0,1,0,0,0,1\n1,0,0,0,1,0,0,0,1\n",
        "homography_v1\n4,4,1\n0,0,0,0,0,0,0,0,0\n",
        "homography_v1\n4,4,1\n1,0,0,0,1,0,0,0\n",
    ],
)
def test_homography_array_rejects_malformed_files(text):
    with pytest.raises(FormatError):
        parse_homography_array(text)


def test_frame_index_round_trip_and_ordering():
    index = FrameIndex(
        (FrameRecord(0, 0, "frames/0000.png"), FrameRecord(1, 33_333_333, "frames/a,b.png"), FrameRecord(2, 66_666_666, "x.png"))
    )
    again = parse_frame_index(write_frame_index(index))
    assert again == index
    assert [(a.frame_id, b.frame_id) for a, b in again.consecutive_pairs()] == [(0, 1), (1, 2)]
    assert again.by_id(1).path == "frames/a,b.png"
    with pytest.raises(OrderingError) as info:
        parse_frame_index("frames_v1\n0,10,a.png\n1,10,b.png\n")
    assert info.value.context["line"] == 3
    with pytest.raises(FormatError):
        parse_frame_index("frames_v1\n0,10,a.png\n0,20,b.png\n")


def test_parsers_only_raise_format_errors_on_garbage():
    rng = np.random.default_rng(4)
    prefixes = (
        b"",
        b"gyro_v1,rad_s\n",
        b"pts_v1\n",
        b"frames_v1\n",
        b"homography_v1\n4,4,1\n",
        struct.pack("<fii", 202021.25, 2, 2),
    )
    alphabet = np.frombuffer(b"0123456789,.-+e#\n nanif\xff", dtype=np.uint8)
    for trial in range(10_000):
        size = int(rng.integers(0, 64))
        if trial % 2:
            body = rng.integers(0, 256, size, dtype=np.uint8).tobytes()
        else:
            body = rng.choice(alphabet, size).tobytes()
        data = prefixes[(trial // len(PARSERS)) % len(prefixes)] + body
        parser = PARSERS[trial % len(PARSERS)]
        try:
            parser(data)
        except FormatError:
            pass


def test_image_round_trip_and_luma():
    rng = np.random.default_rng(5)
    for shape in ((24, 32), (24, 32, 3)):
        img = rng.integers(0, 256, shape, dtype=np.uint8)
        again = decode_image(encode_image(img))
        assert hashlib.sha256(again.tobytes()).digest() == hashlib.sha256(img.tobytes()).digest()
    red = np.zeros((2, 2, 3), dtype=np.uint8)
    red[..., 0] = 255
    assert np.all(luma_uint8(red) == round(0.299 * 255))


def test_image_rejects_unsupported_inputs():
    with pytest.raises(FormatError):
        decode_image(b"not an image at all")
    buffer = io.BytesIO()
    Image.fromarray(np.zeros((4, 4), dtype=np.uint16)).save(buffer, format="PNG")
    with pytest.raises(FormatError):
        decode_image(buffer.getvalue())
    with pytest.raises(ArgumentError):
        encode_image(np.zeros((4, 4), dtype=np.float64))


def test_pad_to_multiple_and_crop():
    img = np.arange(50 * 30, dtype=np.float64).reshape(50, 30)
    padded, added = pad_to_multiple(img, 16)
    assert padded.shape == (64, 32)
    assert added == (14, 2)
    assert np.array_equal(padded[50, :30], img[49])
    assert np.array_equal(padded[51, :30], img[48])
    assert np.array_equal(padded[:50, 30], img[:, 29])
    assert np.array_equal(padded[:50, 31], img[:, 28])
    assert np.array_equal(crop_to(padded, 50, 30), img)
    same, none = pad_to_multiple(np.zeros((32, 16)), 16)
    assert same.shape == (32, 16) and none == (0, 0)


def test_zero_flow_renders_white_and_constant_flow_a_single_hue():
    white = flow_to_color(FlowField.zeros(6, 4))
    assert np.all(white == 255)
    hsv = flow_to_hsv(FlowField(np.full((4, 6), 2.5), np.zeros((4, 6))), max_mag=2.5)
    assert np.all(hsv[..., 0] == 0)
    assert np.all(hsv[..., 1] == 255)
    rgb = flow_to_color(FlowField(np.full((4, 6), 2.5), np.zeros((4, 6))), max_mag=2.5)
    assert np.all(rgb == np.array([255, 0, 0], dtype=np.uint8))


def test_hue_turns_with_the_flow_direction():
    ys, xs = np.mgrid[0:21, 0:21]
    radial = FlowField((xs - 10).astype(np.float64), (ys - 10).astype(np.float64))
    hue = flow_to_hsv(radial)[..., 0].astype(np.int64)
    rotated = hue[xs, 20 - ys]
    gap = np.abs((rotated - (hue + 64)) % 256)
    gap = np.minimum(gap, 256 - gap)
    gap[10, 10] = 0
    assert gap.max() <= 1


def test_unlabeled_pixels_render_black_and_heatmaps_scale():
    valid = np.ones((3, 3), dtype=bool)
    valid[1, 1] = False
    rgb = flow_to_color(FlowField(np.ones((3, 3)), np.zeros((3, 3)), valid))
    assert np.all(rgb[1, 1] == 0)
    heat = heatmap_to_image(np.array([[0.0, 1.0], [2.0, 4.0]]))
    assert heat.tolist() == [[0, 64], [128, 255]]
    assert np.all(heatmap_to_image(np.zeros((2, 2))) == 0)
    blend = overlay(np.zeros((2, 2)), np.full((2, 2), 200.0))
    assert np.all(blend == 100)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_flow_field_rejects_non_finite_values(bad):
    u = np.zeros((3, 4))
    u[2, 1] = bad
    with pytest.raises(ArgumentError) as info:
        FlowField(u, np.zeros((3, 4)))
    assert info.value.context["pixel"] == (1, 2)
    with pytest.raises(ArgumentError):
        FlowField(np.zeros((3, 4)), u)
