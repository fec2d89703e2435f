"""Binary Netpbm readers/writers (P5 grayscale, P6 RGB)."""

import numpy as np


def write_p6(path, rgb):
    """Write an (H,W,3) uint8 array as binary PPM."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError("write_p6 expects (H,W,3) uint8")
    h, w = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def write_p5(path, gray):
    """Write an (H,W) uint8 array as binary PGM."""
    gray = np.asarray(gray)
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ValueError("write_p5 expects (H,W) uint8")
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


def _read_header(f, magic):
    if f.read(2) != magic:
        raise ValueError(f"not a {magic.decode()} file")
    fields = []
    while len(fields) < 3:
        line = f.readline()
        if not line:
            raise ValueError("truncated netpbm header")
        line = line.split(b"#", 1)[0]
        fields.extend(int(tok) for tok in line.split())
    w, h, maxval = fields[:3]
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    return w, h


def read_p6(path):
    with open(path, "rb") as f:
        w, h = _read_header(f, b"P6")
        data = f.read(w * h * 3)
    if len(data) != w * h * 3:
        raise ValueError("truncated P6 payload")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()


def read_p5(path):
    with open(path, "rb") as f:
        w, h = _read_header(f, b"P5")
        data = f.read(w * h)
    if len(data) != w * h:
        raise ValueError("truncated P5 payload")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()
