import numpy as np
import pytest

from elpaf.exceptions import InvalidInputError
from elpaf.imageio import read_matrix, read_pgm, write_matrix, write_pgm
from elpaf.validation import check_image, check_roi


@pytest.mark.parametrize("maxval", [255, 65535])
def test_pgm_round_trip(tmp_path, maxval):
    img = np.random.default_rng(0).integers(0, maxval + 1, (5, 7)).astype(float)
    write_pgm(tmp_path / "a.pgm", img, maxval=maxval)
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)


def test_pgm_header_comments_and_big_endian(tmp_path):
    raster = np.array([[1, 256], [513, 65535]], dtype=">u2").tobytes()
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 2\n65535\n" + raster)
    assert read_pgm(tmp_path / "c.pgm").tolist() == [[1, 256], [513, 65535]]


def test_pgm_default_maxval(tmp_path):
    write_pgm(tmp_path / "a.pgm", np.full((2, 2), 300.0))
    assert b"65535" in (tmp_path / "a.pgm").read_bytes()[:16]
    write_pgm(tmp_path / "b.pgm", np.full((2, 2), 30.0))
    assert b"255\n" in (tmp_path / "b.pgm").read_bytes()[:16]


@pytest.mark.parametrize("data", [b"P2\n1 1\n255\n0", b"P5\n2 2\n255\n\x00",
                                  b"P5\nx 2\n255\n\x00", b"P5\n1 1\n70000\n\x00\x00"])
def test_pgm_rejects_malformed(tmp_path, data):
    (tmp_path / "bad.pgm").write_bytes(data)
    with pytest.raises(InvalidInputError):
        read_pgm(tmp_path / "bad.pgm")


def test_matrix_round_trip(tmp_path):
    m = np.random.default_rng(1).random((3, 3))
    write_matrix(tmp_path / "m.txt", m)
    assert np.array_equal(read_matrix(tmp_path / "m.txt"), m)


def test_validation():
    with pytest.raises(InvalidInputError):
        check_image(np.zeros(3))
    with pytest.raises(InvalidInputError):
        check_image([[np.nan]])
    with pytest.raises(InvalidInputError):
        check_image([[-1.0]])
    assert check_roi(None, 4, 3) == (0, 0, 4, 3)
    with pytest.raises(InvalidInputError):
        check_roi((2, 0, 2, 3), 4, 3)
