"""Flat-tensor container and PGM image export.

Container layout, all little endian:

    magic    4 bytes  b"FFT1"
    version  u32
    records  repeated until end of file:
        name_len  u16
        name      UTF-8, name_len bytes
        rank      u8
        extents   u32 per dimension
        payload   float64, C order

Files are written atomically (temp file in the target directory, then
rename), so readers never observe partial output. Writing the same records
twice yields byte-identical files.
"""

import os
import struct
import tempfile

import numpy as np

MAGIC = b"FFT1"
VERSION = 1


class ContainerError(Exception):
    """Base class for container format violations."""


class BadMagicError(ContainerError):
    pass


class BadVersionError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


def _encode_record(name, array):
    data = np.asarray(array, dtype=np.float64)
    if data.ndim > 0 and not data.flags["C_CONTIGUOUS"]:
        data = np.ascontiguousarray(data)
    name_b = name.encode("utf-8")
    if len(name_b) > 0xFFFF:
        raise ValueError("record name too long: %r" % name)
    if data.ndim > 0xFF:
        raise ValueError("record rank too large: %d" % data.ndim)
    head = struct.pack("<H", len(name_b)) + name_b + struct.pack("<B", data.ndim)
    head += struct.pack("<%dI" % data.ndim, *data.shape)
    return head + data.tobytes()


def write_records(path, records):
    """Write an ordered mapping or iterable of (name, array) pairs atomically."""
    if hasattr(records, "items"):
        records = records.items()
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    for name, array in records:
        blob += _encode_record(name, array)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(bytes(blob))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, fh, path):
        self.fh = fh
        self.path = path

    def exact(self, n, what):
        buf = self.fh.read(n)
        if len(buf) != n:
            raise TruncatedError(
                "%s: truncated while reading %s (wanted %d bytes, got %d)"
                % (self.path, what, n, len(buf))
            )
        return buf

    def header(self):
        magic = self.exact(4, "magic")
        if magic != MAGIC:
            raise BadMagicError(
                "%s: bad magic %r, expected %r" % (self.path, magic, MAGIC)
            )
        version = struct.unpack("<I", self.exact(4, "version"))[0]
        if version != VERSION:
            raise BadVersionError(
                "%s: unsupported version %d (supported: %d)"
                % (self.path, version, VERSION)
            )

    def next_record_head(self):
        first = self.fh.read(2)
        if len(first) == 0:
            return None
        if len(first) != 2:
            raise TruncatedError("%s: truncated record header" % self.path)
        (name_len,) = struct.unpack("<H", first)
        name = self.exact(name_len, "record name").decode("utf-8")
        (rank,) = struct.unpack("<B", self.exact(1, "record rank"))
        shape = struct.unpack("<%dI" % rank, self.exact(4 * rank, "record extents"))
        return name, shape


def read_records(path):
    """Load every record into an ordered dict name -> float64 array."""
    out = {}
    with open(path, "rb") as fh:
        reader = _Reader(fh, path)
        reader.header()
        while True:
            head = reader.next_record_head()
            if head is None:
                return out
            name, shape = head
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            payload = reader.exact(8 * count, "record payload of %r" % name)
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()


def inspect_records(path):
    """Stream record names and shapes without loading payloads."""
    entries = []
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        reader = _Reader(fh, path)
        reader.header()
        while True:
            head = reader.next_record_head()
            if head is None:
                return entries
            name, shape = head
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            end = fh.tell() + 8 * count
            if end > size:
                raise TruncatedError(
                    "%s: truncated payload of %r" % (path, name)
                )
            fh.seek(end)
            entries.append((name, shape))


def write_pgm(path, image):
    """Write one grayscale image in [0, 1] as binary PGM (P5, maxval 255)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("write_pgm: expected a 2-D image, got shape %s" % (img.shape,))
    quant = np.rint(255.0 * np.clip(img, 0.0, 1.0)).astype(np.uint8)
    header = b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0])
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header + quant.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
