import struct

import numpy as np
import pytest

from scoreseg import fileio
from scoreseg.errors import FileFormatError


def test_mask_pgm_round_trip(tmp_path):
    m = (np.random.default_rng(0).random((5, 7)) < 0.5).astype(np.uint8)
    p = tmp_path / "m.pgm"
    fileio.write_pgm(p, m, binary_mask=True)
    raw = p.read_bytes()
    assert raw.startswith(b"P5\n7 5\n255\n")
    assert set(raw[len(b"P5\n7 5\n255\n"):]) <= {0, 255}
    np.testing.assert_array_equal(fileio.read_pgm(p, binary_mask=True), m)


def test_image_pgm_round_trip_on_8bit_grid(tmp_path):
    img = np.round(np.random.default_rng(1).random((4, 6)) * 255) / 255
    p = tmp_path / "i.pgm"
    fileio.write_pgm(p, img)
    np.testing.assert_array_equal(fileio.read_pgm(p), img)


def test_pgm_header_comments_are_skipped(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    np.testing.assert_array_equal(fileio.read_pgm(p, binary_mask=True), [[0, 1]])


def test_non_binary_mask_pgm_rejected(tmp_path):
    p = tmp_path / "g.pgm"
    p.write_bytes(b"P5\n2 1\n255\n\x00\x80")
    with pytest.raises(FileFormatError):
        fileio.read_pgm(p, binary_mask=True)


def test_sdf_raster_layout(tmp_path):
    f = np.array([[0.5, -0.25, 0.0], [1.0, -1.0, 0.125]])
    p = tmp_path / "a.sdf.bin"
    fileio.write_sdf(p, f, 4.0)
    raw = p.read_bytes()
    assert len(raw) == 16 + 4 * 6
    assert raw[:4] == b"SDF1"
    assert struct.unpack("<IIf", raw[4:16]) == (3, 2, 4.0)
    assert struct.unpack("<f", raw[16:20])[0] == 0.5
    back, delta = fileio.read_sdf(p)
    np.testing.assert_array_equal(back, f)
    assert delta == 4.0


def test_sdf_bad_magic_and_truncation(tmp_path):
    p = tmp_path / "b.bin"
    p.write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(FileFormatError):
        fileio.read_sdf(p)
    p.write_bytes(b"SDF1" + struct.pack("<IIf", 2, 2, 1.0) + bytes(4))
    with pytest.raises(FileFormatError):
        fileio.read_sdf(p)
