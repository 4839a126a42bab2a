"""16-bit PGM output for decoded frames.

Binary P5 with maxval 65535 and big-endian samples, per the format.  Values
map affinely from a fixed clip range to the integer range; the range is
recorded in a header comment so files round-trip without side metadata.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

DEFAULT_RANGE = (-2.0, 2.0)
_MAXVAL = 65535


def write_pgm(path, image: np.ndarray, lo: float = DEFAULT_RANGE[0], hi: float = DEFAULT_RANGE[1]):
    """Write a 2-D grid as 16-bit PGM, clipping to [lo, hi]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim != 2:
        raise ValueError(f"PGM output needs a 2-D grid, got shape {img.shape}")
    if not hi > lo:
        raise ValueError(f"need hi > lo, got ({lo!r}, {hi!r})")
    scaled = (np.clip(img, lo, hi) - lo) / (hi - lo) * _MAXVAL
    quantized = np.round(scaled).astype(">u2")
    h, w = img.shape
    header = f"P5\n# range {lo!r} {hi!r}\n{w} {h}\n{_MAXVAL}\n"
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(quantized.tobytes())


def read_pgm(path):
    """Read a PGM written by `write_pgm`; returns (grid, (lo, hi)).

    The grid is mapped back to the recorded range, so write-read round-trips
    up to the 16-bit quantization step.
    """
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM")
    fields = []
    lo, hi = DEFAULT_RANGE
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            end = raw.index(b"\n", pos)
            comment = raw[pos + 1 : end].decode("ascii").split()
            if len(comment) == 3 and comment[0] == "range":
                lo, hi = float(comment[1]), float(comment[2])
            pos = end + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if maxval != _MAXVAL:
        raise ValueError(f"{path}: expected maxval {_MAXVAL}, got {maxval}")
    data = np.frombuffer(raw[pos : pos + 2 * w * h], dtype=">u2").reshape(h, w)
    return data.astype(np.float64) / _MAXVAL * (hi - lo) + lo, (lo, hi)
