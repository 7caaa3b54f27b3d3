"""PFM (HDR float) and PPM (8-bit) image files.

Arrays are row-major with the top row first. PFM stores rows bottom to top
and is written little-endian (scale -1.0); big-endian files are swapped on
read.
"""

import logging
from pathlib import Path
from typing import BinaryIO, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _read_token_line(f: BinaryIO, path: PathLike) -> str:
    line = f.readline()
    if not line or not line.endswith(b"\n"):
        raise ValueError(f"Malformed image header in {path}: unexpected end of file")
    return line.decode("ascii", errors="replace").strip()


def _parse_size(line: str, path: PathLike) -> Tuple[int, int]:
    parts = line.split()
    if len(parts) != 2:
        raise ValueError(f"Malformed image header in {path}: bad size line '{line}'")
    try:
        width, height = int(parts[0]), int(parts[1])
    except ValueError:
        raise ValueError(f"Malformed image header in {path}: bad size line '{line}'") from None
    if width < 1 or height < 1:
        raise ValueError(f"Malformed image header in {path}: size {width}x{height}")
    return width, height


def read_pfm(path: PathLike) -> np.ndarray:
    """Read a PFM file as float32, shape (H, W, 3) for "PF" or (H, W) for "Pf".

    Raises:
        FileNotFoundError: If the file is missing.
        ValueError: On a malformed header or truncated payload.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"PFM file not found: {path}")
    with open(path, "rb") as f:
        ident = _read_token_line(f, path)
        if ident == "PF":
            channels = 3
        elif ident == "Pf":
            channels = 1
        else:
            raise ValueError(f"Malformed PFM header in {path}: identifier '{ident}'")
        width, height = _parse_size(_read_token_line(f, path), path)
        try:
            scale = float(_read_token_line(f, path))
        except ValueError:
            raise ValueError(f"Malformed PFM header in {path}: bad scale line") from None
        if scale == 0.0:
            raise ValueError(f"Malformed PFM header in {path}: zero scale")
        dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
        count = width * height * channels
        payload = f.read()

    if len(payload) < count * 4:
        raise ValueError(f"Truncated PFM payload in {path}: {len(payload)} bytes, expected {count * 4}")
    data = np.frombuffer(payload[: count * 4], dtype=dtype).astype(np.float32)
    shape = (height, width, 3) if channels == 3 else (height, width)
    image = np.flipud(data.reshape(shape)).copy()
    logger.debug("Read PFM %s (%dx%d, %s)", path, width, height, "little" if scale < 0 else "big")
    return image


def write_pfm(path: PathLike, image: np.ndarray) -> None:
    """Write (H, W, 3) or (H, W) float data as little-endian PFM.

    Raises:
        ValueError: On an unsupported shape.
    """
    data = np.asarray(image, dtype=np.float32)
    if data.ndim == 3 and data.shape[2] == 3:
        ident = "PF"
    elif data.ndim == 2:
        ident = "Pf"
    else:
        raise ValueError(f"PFM images must be H x W x 3 or H x W, got shape {data.shape}")
    height, width = data.shape[:2]
    header = f"{ident}\n{width} {height}\n-1.0\n".encode("ascii")
    payload = np.flipud(data).astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)
    logger.debug("Wrote PFM %s (%dx%d)", path, width, height)


def write_ppm(path: PathLike, image: np.ndarray) -> None:
    """Write an 8-bit (H, W, 3) image as binary P6.

    Raises:
        ValueError: If the data is not H x W x 3 bytes.
    """
    data = np.asarray(image)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ValueError(f"PPM images must be H x W x 3, got shape {data.shape}")
    if data.dtype != np.uint8:
        if np.any(data < 0) or np.any(data > 255):
            raise ValueError("PPM values must lie in [0, 255]")
        data = data.astype(np.uint8)
    height, width = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(data).tobytes())
    logger.debug("Wrote PPM %s (%dx%d)", path, width, height)


def read_ppm(path: PathLike) -> np.ndarray:
    """Read a binary P6 file with maxval 255 as (H, W, 3) uint8.

    Header tokens may be separated by any whitespace; comments are skipped.

    Raises:
        FileNotFoundError: If the file is missing.
        ValueError: On a malformed header or truncated payload.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"PPM file not found: {path}")
    raw = path.read_bytes()

    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"Malformed PPM header in {path}")
        tokens.append(raw[start:pos].decode("ascii", errors="replace"))
    pos += 1  # single whitespace after maxval

    if tokens[0] != "P6":
        raise ValueError(f"Malformed PPM header in {path}: magic '{tokens[0]}'")
    width, height = _parse_size(f"{tokens[1]} {tokens[2]}", path)
    if tokens[3] != "255":
        raise ValueError(f"Unsupported PPM maxval in {path}: {tokens[3]}")
    count = width * height * 3
    if len(raw) - pos < count:
        raise ValueError(f"Truncated PPM payload in {path}")
    return np.frombuffer(raw[pos:pos + count], dtype=np.uint8).reshape(height, width, 3).copy()


def mask_to_ppm(mask: np.ndarray) -> np.ndarray:
    """Boolean (H, W) mask as a white-on-black 8-bit image."""
    return np.repeat(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)[..., None], 3, axis=2)


def ppm_to_mask(image: np.ndarray) -> np.ndarray:
    """Pixels with any channel above 127 are foreground."""
    return np.any(np.asarray(image) > 127, axis=-1)
