"""Netpbm images, CSV count maps and raw float dumps."""
import numpy as np

from .errors import FormatError

GAMMA = 2.2


def linear_to_srgb8(img):
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.round(255.0 * img ** (1.0 / GAMMA)).astype(np.uint8)


def srgb8_to_linear(img):
    return (np.asarray(img, dtype=np.float64) / 255.0) ** GAMMA


def write_ppm(path, img_linear):
    data = linear_to_srgb8(img_linear)
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(data).tobytes())


def write_pgm(path, gray):
    """Write an 8-bit or 16-bit graymap of non-negative integers."""
    gray = np.asarray(gray)
    maxval = max(int(gray.max()) if gray.size else 0, 1)
    h, w = gray.shape
    with open(path, "wb") as f:
        if maxval < 256:
            f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            f.write(gray.astype(np.uint8).tobytes())
        else:
            f.write(f"P5\n{w} {h}\n{min(maxval, 65535)}\n".encode("ascii"))
            f.write(np.minimum(gray, 65535).astype(">u2").tobytes())


def _read_netpbm(path, magic):
    with open(path, "rb") as f:
        raw = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header")
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != magic:
        raise FormatError(f"{path}: expected {magic.decode()} image, found {tokens[0]!r}")
    w, h, maxval = (int(x) for x in tokens[1:])
    return raw[pos:], w, h, maxval


def read_ppm(path):
    """Read a P6 image as 8-bit sRGB values (h, w, 3)."""
    body, w, h, maxval = _read_netpbm(path, b"P6")
    if maxval != 255 or len(body) < w * h * 3:
        raise FormatError(f"{path}: unsupported or truncated pixel data")
    return np.frombuffer(body[: w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()


def read_pgm(path):
    body, w, h, maxval = _read_netpbm(path, b"P5")
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    n = w * h * np.dtype(dtype).itemsize
    if len(body) < n:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(body[:n], dtype=dtype).reshape(h, w).astype(np.int64)


def write_csv_counts(path, counts):
    np.savetxt(path, np.asarray(counts, dtype=np.int64), fmt="%d", delimiter=",")


def write_float_planar(path, img):
    """Raw little-endian float32, channel-planar (C, H, W), no header."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    np.ascontiguousarray(np.moveaxis(img, -1, 0), dtype="<f4").tofile(path)


def read_float_planar(path, height, width, channels=3):
    data = np.fromfile(path, dtype="<f4")
    if data.size != channels * height * width:
        raise FormatError(f"{path}: expected {channels * height * width} floats, found {data.size}")
    return np.moveaxis(data.reshape(channels, height, width), 0, -1).astype(np.float64)
