"""Image, sinogram and model-checkpoint file formats.

Raw image (little-endian)::

    b"ACTISCAN1" | u32 h | u32 w | f64[h*w]

Raw sinogram::

    b"ACTISCAN1" | u32 h | u32 w | u32 D | u32 T | u32 round(alpha_max*1000)
    | u32 M | u32[M] angle indices | f64 pixel_size | f64 detector_spacing
    | f64[M*D]

Checkpoint::

    b"ACTIMODEL1" | u32 n_sections
    then per section: 4-byte tag | u32 n_arrays
        then per array: u32 ndim | u32[ndim] shape | f64[prod(shape)]

16-bit PGM (``P5``, big-endian samples) for viewing only; the intensity
window is stored in a ``# window lo hi`` header comment.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import FormatError
from .tomo import Geometry, Sinogram

IMAGE_MAGIC = b"ACTISCAN1"
MODEL_MAGIC = b"ACTIMODEL1"
PGM_MAX = 65535


def _atomic_write(path, payload):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated file while reading {what}", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u32s(self, count, what):
        return struct.unpack(f"<{count}I", self.take(4 * count, what))

    def f64(self, count, what):
        return np.frombuffer(self.take(8 * count, what), dtype="<f8").astype(np.float64)

    def expect_magic(self, magic):
        got = self.buf[:len(magic)]
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)
        self.pos = len(magic)

    def done(self):
        if self.pos != len(self.buf):
            raise FormatError("trailing bytes after payload", self.pos)


def image_bytes(image):
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    return IMAGE_MAGIC + struct.pack("<2I", h, w) + image.astype("<f8").tobytes()


def write_image(path, image):
    _atomic_write(path, image_bytes(image))


def read_image(path):
    with open(path, "rb") as f:
        r = _Reader(f.read())
    r.expect_magic(IMAGE_MAGIC)
    h, w = r.u32s(2, "image shape")
    data = r.f64(h * w, "image payload").reshape(h, w)
    r.done()
    return data


def sinogram_bytes(sino):
    g = sino.geometry
    head = struct.pack("<6I", g.image_h, g.image_w, g.num_detectors, g.num_angles,
                       int(round(g.alpha_max * 1000)), len(sino))
    return (IMAGE_MAGIC + head + sino.angles.astype("<u4").tobytes()
            + struct.pack("<2d", g.pixel_size, g.detector_spacing)
            + sino.data.astype("<f8").tobytes())


def write_sinogram(path, sino):
    _atomic_write(path, sinogram_bytes(sino))


def read_sinogram(path):
    with open(path, "rb") as f:
        r = _Reader(f.read())
    r.expect_magic(IMAGE_MAGIC)
    h, w, D, T, amax, M = r.u32s(6, "sinogram header")
    angles = np.array(r.u32s(M, "angle list"), dtype=np.int64)
    ps, ds = r.f64(2, "pixel/detector spacing")
    data = r.f64(M * D, "sinogram payload").reshape(M, D)
    r.done()
    geom = Geometry(h, w, D, T, amax / 1000.0, float(ps), float(ds))
    return Sinogram(geom, angles, data)


def write_pgm(path, image, window=None):
    """16-bit binary PGM; values mapped linearly from ``window`` with
    round-half-to-even quantization.  Defaults to the image min/max."""
    image = np.asarray(image, dtype=np.float64)
    lo, hi = (float(image.min()), float(image.max())) if window is None else map(float, window)
    if hi <= lo:
        hi = lo + 1.0
    q = np.rint(np.clip((image - lo) / (hi - lo), 0.0, 1.0) * PGM_MAX).astype(">u2")
    h, w = image.shape
    header = f"P5\n# window {lo!r} {hi!r}\n{w} {h}\n{PGM_MAX}\n".encode("ascii")
    _atomic_write(path, header + q.tobytes())


def read_pgm(path):
    """Returns ``(image, (lo, hi))`` with samples mapped back through the window."""
    with open(path, "rb") as f:
        buf = f.read()
    if not buf.startswith(b"P5"):
        raise FormatError("not a binary PGM", 0)
    pos, tokens, window = 2, [], (0.0, 1.0)
    while len(tokens) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            raise FormatError("truncated PGM header", pos)
        if buf[pos:pos + 1] == b"#":
            end = buf.find(b"\n", pos)
            end = len(buf) if end < 0 else end
            parts = buf[pos + 1:end].split()
            if len(parts) == 3 and parts[0] == b"window":
                window = (float(parts[1]), float(parts[2]))
            pos = end
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        try:
            tokens.append(int(buf[start:pos]))
        except ValueError:
            raise FormatError("bad PGM header token", start) from None
    pos += 1
    w, h, maxval = tokens
    if maxval != PGM_MAX:
        raise FormatError(f"expected maxval {PGM_MAX}, got {maxval}", pos)
    if len(buf) - pos != 2 * w * h:
        raise FormatError("PGM payload size mismatch", pos)
    q = np.frombuffer(buf[pos:], dtype=">u2").reshape(h, w).astype(np.float64)
    lo, hi = window
    return lo + q / PGM_MAX * (hi - lo), window


def checkpoint_bytes(sections):
    """Serialize ``{tag: [arrays]}``; tags are 4 ASCII bytes."""
    out = [MODEL_MAGIC, struct.pack("<I", len(sections))]
    for tag, arrays in sections.items():
        tag_b = tag.encode("ascii")
        if len(tag_b) != 4:
            raise ValueError("section tags must be 4 ASCII characters")
        out.append(tag_b + struct.pack("<I", len(arrays)))
        for a in arrays:
            a = np.asarray(a, dtype=np.float64)
            out.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
            out.append(a.astype("<f8").tobytes())
    return b"".join(out)


def write_checkpoint(path, sections):
    _atomic_write(path, checkpoint_bytes(sections))


def read_checkpoint(path):
    with open(path, "rb") as f:
        r = _Reader(f.read())
    r.expect_magic(MODEL_MAGIC)
    sections = {}
    for _ in range(r.u32("section count")):
        tag = r.take(4, "section tag").decode("ascii", errors="replace")
        arrays = []
        for _ in range(r.u32("array count")):
            ndim = r.u32("array rank")
            shape = r.u32s(ndim, "array shape")
            arrays.append(r.f64(int(np.prod(shape)), "array payload").reshape(shape))
        sections[tag] = arrays
    r.done()
    return sections
