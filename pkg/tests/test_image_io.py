import numpy as np
import pytest

from inverse_renderer.image_io import mask_to_ppm, ppm_to_mask, read_pfm, read_ppm, write_pfm, write_ppm


def test_pfm_rgb_round_trip(tmp_path, rng):
    image = rng.uniform(0.0, 10.0, size=(5, 7, 3)).astype(np.float32)
    path = tmp_path / "image.pfm"
    write_pfm(path, image)
    assert path.read_bytes().startswith(b"PF\n7 5\n-1.0\n")
    np.testing.assert_array_equal(read_pfm(path), image)


def test_pfm_stores_bottom_row_first(tmp_path):
    image = np.zeros((2, 1), dtype=np.float32)
    image[0, 0] = 1.0
    path = tmp_path / "gray.pfm"
    write_pfm(path, image)
    payload = path.read_bytes()[len(b"Pf\n1 2\n-1.0\n"):]
    np.testing.assert_array_equal(np.frombuffer(payload, dtype="<f4"), [0.0, 1.0])
    np.testing.assert_array_equal(read_pfm(path), image)


def test_pfm_reads_big_endian(tmp_path):
    values = np.array([1.5, -2.0, 3.25], dtype=">f4")
    path = tmp_path / "big.pfm"
    path.write_bytes(b"PF\n1 1\n1.0\n" + values.tobytes())
    np.testing.assert_array_equal(read_pfm(path)[0, 0], [1.5, -2.0, 3.25])


@pytest.mark.parametrize(
    "content, match",
    [
        (b"P7\n1 1\n-1.0\n" + bytes(12), "identifier"),
        (b"PF\n1\n-1.0\n" + bytes(12), "size line"),
        (b"PF\n1 1\n0.0\n" + bytes(12), "zero scale"),
        (b"PF\n2 2\n-1.0\n" + bytes(12), "Truncated"),
        (b"PF\n2 2", "end of file"),
    ],
)
def test_pfm_header_errors(tmp_path, content, match):
    path = tmp_path / "bad.pfm"
    path.write_bytes(content)
    with pytest.raises(ValueError, match=match):
        read_pfm(path)


def test_pfm_missing_and_bad_shape(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_pfm(tmp_path / "missing.pfm")
    with pytest.raises(ValueError, match="H x W"):
        write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 4)))


def test_ppm_round_trip(tmp_path, rng):
    image = rng.integers(0, 256, size=(4, 6, 3), dtype=np.uint8)
    path = tmp_path / "image.ppm"
    write_ppm(path, image)
    np.testing.assert_array_equal(read_ppm(path), image)


def test_ppm_header_comments_and_whitespace(tmp_path):
    path = tmp_path / "commented.ppm"
    path.write_bytes(b"P6 # made by hand\n2\t1\n# maxval follows\n255\n" + bytes([255, 0, 0, 0, 255, 0]))
    np.testing.assert_array_equal(read_ppm(path)[0], [[255, 0, 0], [0, 255, 0]])


@pytest.mark.parametrize(
    "content, match",
    [
        (b"P3\n1 1\n255\n" + bytes(3), "magic"),
        (b"P6\n1 1\n65535\n" + bytes(6), "maxval"),
        (b"P6\n2 2\n255\n" + bytes(3), "Truncated"),
        (b"P6\n1", "Malformed"),
    ],
)
def test_ppm_errors(tmp_path, content, match):
    path = tmp_path / "bad.ppm"
    path.write_bytes(content)
    with pytest.raises(ValueError, match=match):
        read_ppm(path)


def test_write_ppm_rejects_out_of_range(tmp_path):
    with pytest.raises(ValueError, match="0, 255"):
        write_ppm(tmp_path / "x.ppm", np.full((1, 1, 3), 300))


def test_mask_conversion():
    mask = np.array([[True, False], [False, True]])
    image = mask_to_ppm(mask)
    assert image.dtype == np.uint8 and image.shape == (2, 2, 3)
    np.testing.assert_array_equal(ppm_to_mask(image), mask)
