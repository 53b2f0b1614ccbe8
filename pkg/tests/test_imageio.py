import numpy as np
import pytest

from fvlab.imageio import PNMFormatError, read_pnm, write_pnm


def test_ppm_roundtrip(tmp_path, rng):
    img = rng.uniform(size=(3, 5, 7))
    p = write_pnm(tmp_path / "a.ppm", img)
    assert p.read_bytes().startswith(b"P6\n7 5\n255\n")
    back = read_pnm(p)
    assert back.shape == (3, 5, 7)
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12


def test_pgm_16bit(tmp_path, rng):
    img = rng.uniform(size=(4, 4))
    p = write_pnm(tmp_path / "a.pgm", img, maxval=65535)
    assert p.read_bytes().startswith(b"P5")
    assert np.max(np.abs(read_pnm(p) - img)) <= 0.5 / 65535 + 1e-12


def test_bad_files(tmp_path):
    (tmp_path / "x.pgm").write_bytes(b"P3\n1 1\n255\n0")
    with pytest.raises(PNMFormatError):
        read_pnm(tmp_path / "x.pgm")
    (tmp_path / "y.pgm").write_bytes(b"P5\n2 2\n255\n\x00")
    with pytest.raises(PNMFormatError):
        read_pnm(tmp_path / "y.pgm")
    with pytest.raises(ValueError):
        write_pnm(tmp_path / "z.ppm", np.zeros((2, 3, 3)))
