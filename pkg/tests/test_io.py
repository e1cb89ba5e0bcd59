import struct

import numpy as np
import pytest

from scatterpde.io import (
    format_equation,
    parse_equation,
    rasterize,
    read_equation,
    read_pgm,
    read_series,
    series_nbytes,
    write_equation,
    write_pgm,
    write_series,
)
from scatterpde.model import PDEModel
from scatterpde.pointcloud import Domain, sample_grid, sample_random
from scatterpde.spectral import EQUATIONS, FieldSeries, generate_series


def test_series_size_formula():
    assert series_nbytes(4096, 171) == 4 + 4 + 4 + 4 + 8 + 8 + 16 * 4096 + 8 * 171 * 4096


def test_series_round_trip_bit_exact(tmp_path, rng):
    ps = sample_random(Domain(32.0), 300, 0)
    s = FieldSeries(ps, 0.1, rng.normal(size=(7, 300)))
    path = tmp_path / "s.tpdn"
    write_series(path, s)
    assert path.stat().st_size == series_nbytes(300, 7)
    back = read_series(path)
    assert back.dt == s.dt and back.pointset.domain.extent == 32.0
    assert back.pointset.points.tobytes() == ps.points.tobytes()
    assert back.snapshots.tobytes() == s.snapshots.tobytes()


def test_series_header_layout(tmp_path):
    ps = sample_grid(Domain(2.0), 2)
    s = FieldSeries(ps, 0.25, np.arange(8.0).reshape(2, 4))
    path = tmp_path / "h.tpdn"
    write_series(path, s)
    raw = path.read_bytes()
    assert raw[:4] == b"TPDN"
    assert struct.unpack("<III", raw[4:16]) == (1, 4, 2)
    assert struct.unpack("<dd", raw[16:32]) == (2.0, 0.25)
    assert struct.unpack("<2d", raw[32:48]) == (0.5, 0.5)
    assert struct.unpack("<8d", raw[-64:]) == tuple(range(8))


def test_series_rejects_corrupt_files(tmp_path):
    ps = sample_grid(Domain(2.0), 2)
    path = tmp_path / "c.tpdn"
    write_series(path, FieldSeries(ps, 0.1, np.zeros((2, 4))))
    raw = path.read_bytes()
    for bad in (b"XPDN" + raw[4:], raw[:4] + struct.pack("<I", 2) + raw[8:], raw[:-1], raw + b"\0", raw[:10]):
        path.write_bytes(bad)
        with pytest.raises(ValueError):
            read_series(path)


def test_generated_series_file_size(tmp_path):
    ps = sample_grid(Domain(32.0), 8)
    s = generate_series(EQUATIONS[3], 0, ps, T=12)
    write_series(tmp_path / "g.tpdn", s)
    assert (tmp_path / "g.tpdn").stat().st_size == 32 + 16 * 64 + 8 * 12 * 64


def test_equation_round_trip_bit_exact(tmp_path, rng):
    for _ in range(20):
        m = PDEModel(2, 0.1, 1 + rng.normal() * 1e-3, rng.normal(size=5) / 3)
        back = parse_equation(format_equation(m))
        assert back.w0 == m.w0 and back.dt == m.dt
        assert back.w.tobytes() == m.w.tobytes()
    path = tmp_path / "eq.txt"
    write_equation(path, m)
    assert read_equation(path).params.tobytes() == m.params.tobytes()


def test_equation_layout():
    text = format_equation(PDEModel(2, 0.1, 1.0, [1.5, 1.5, 0.0, 0.0, 0.0]))
    lines = text.splitlines()
    assert lines[0] == "w0 1.0"
    assert lines[1:6] == ["1 0 1.5", "0 1 1.5", "2 0 0.0", "1 1 0.0", "0 2 0.0"]


def test_equation_parse_errors():
    with pytest.raises(ValueError):
        parse_equation("1 0 1.0\n0 1 1.0\n", dt=0.1)
    with pytest.raises(ValueError):
        parse_equation("w0 1\n1 0 1.0\n", dt=0.1)
    with pytest.raises(ValueError):
        parse_equation("w0 1\n1 0 1\n0 1 1\n2 0 1\n1 1 1\n0 2 1\n")  # no dt anywhere
    m = parse_equation("w0 1\n1 0 1\n0 1 1\n2 0 1\n1 1 1\n0 2 1\n", dt=0.05)
    assert m.dt == 0.05 and m.Q == 2


def test_rasterize_grid_is_block_upsampling():
    ps = sample_grid(Domain(32.0), 4)
    values = np.arange(16.0)
    img = rasterize(ps, values, size=8)
    # row 0 is the top of the domain (largest y), column 0 the smallest x
    expect = np.kron(values.reshape(4, 4)[::-1], np.ones((2, 2)))
    np.testing.assert_array_equal(img, expect)


def test_pgm_round_trip(tmp_path, rng):
    img = rng.normal(size=(5, 7))
    path = tmp_path / "a.pgm"
    write_pgm(path, img)
    assert path.read_bytes()[:3] == b"P5\n"
    pix, comments = read_pgm(path)
    assert pix.shape == (5, 7) and pix.dtype == np.uint8
    assert pix.min() == 0 and pix.max() == 255
    assert any("min-max" in c for c in comments)
    expect = np.rint((img - img.min()) / np.ptp(img) * 255)
    np.testing.assert_array_equal(pix, expect)


def test_pgm_constant_image(tmp_path):
    write_pgm(tmp_path / "c.pgm", np.full((3, 3), 2.0))
    pix, _ = read_pgm(tmp_path / "c.pgm")
    assert np.all(pix == 0)
