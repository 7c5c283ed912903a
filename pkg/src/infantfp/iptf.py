"""Binary codec for the IPTF v1 enrollment template format.

Layout, all multi-byte integers little-endian:

====================  =====  ========================================
field                 bytes  meaning
====================  =====  ========================================
magic                 4      ``IPTF``
version               1      format version, currently 1
flags                 1      bit0 embedding present, bit1 aged
ppi                   2      source resolution of the minutiae set
thumb                 1      0 left, 1 right
gender                1      0 male, 1 female, 2 unknown
age_weeks             2      subject age at capture
subject_id            1+n    u8 byte length, then UTF-8 payload
session_id            1+n    u8 byte length, then UTF-8 payload
count                 2      number of minutiae
minutiae              8*N    per minutia: x u24, y u24, theta u16
embedding (optional)  768    192 float32 values
====================  =====  ========================================

Coordinates are unsigned 24-bit fixed point with 8 fractional bits
(resolution 1/256 px); theta is stored as a 16-bit fraction of a full
turn (resolution 2*pi/65536 rad). A template whose fields already sit on
those grids round-trips exactly; arbitrary floats quantize within half a
step and are stable under a second round trip.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .core import (
    EMBEDDING_DIM,
    TWO_PI,
    Gender,
    Minutia,
    MinutiaeSet,
    Template,
    Thumb,
    ValidationError,
)

MAGIC = b"IPTF"
VERSION = 1

_FLAG_EMBEDDING = 0x01
_FLAG_AGED = 0x02

_COORD_SCALE = 256  # 8 fractional bits
_COORD_MAX_RAW = (1 << 24) - 1
_THETA_STEPS = 1 << 16

_THUMB_CODES = {Thumb.LEFT: 0, Thumb.RIGHT: 1}
_GENDER_CODES = {Gender.MALE: 0, Gender.FEMALE: 1, Gender.UNKNOWN: 2}
_THUMB_FROM_CODE = {v: k for k, v in _THUMB_CODES.items()}
_GENDER_FROM_CODE = {v: k for k, v in _GENDER_CODES.items()}


class TemplateCodecError(Exception):
    """Base class for malformed template payloads."""


class BadMagicError(TemplateCodecError):
    pass


class UnsupportedVersionError(TemplateCodecError):
    pass


class TruncatedTemplateError(TemplateCodecError):
    pass


def quantize_coord(value: float) -> int:
    raw = round(value * _COORD_SCALE)
    if raw < 0 or raw > _COORD_MAX_RAW:
        raise ValidationError(f"coordinate {value} outside the encodable range [0, {_COORD_MAX_RAW / _COORD_SCALE}]")
    return raw


def quantize_theta(theta: float) -> int:
    return round(theta / TWO_PI * _THETA_STEPS) % _THETA_STEPS


def write_template(template: Template) -> bytes:
    """Serialize a template to IPTF v1 bytes."""
    if not isinstance(template, Template):
        raise ValidationError("write_template expects a Template")
    flags = 0
    if template.embedding is not None:
        flags |= _FLAG_EMBEDDING
    if template.aged:
        flags |= _FLAG_AGED

    out = bytearray()
    out += MAGIC
    out += struct.pack("<BBHBBH", VERSION, flags, template.minutiae.source_ppi,
                       _THUMB_CODES[template.thumb], _GENDER_CODES[template.gender],
                       template.age_weeks_at_capture)
    for name in ("subject_id", "session_id"):
        payload = getattr(template, name).encode("utf-8")
        out += struct.pack("<B", len(payload))
        out += payload
    if template.minutiae.source_ppi > 0xFFFF:
        raise ValidationError("source_ppi exceeds the 16-bit field")
    if len(template.minutiae) > 0xFFFF:
        raise ValidationError("minutiae count exceeds the 16-bit field")
    out += struct.pack("<H", len(template.minutiae))
    for m in template.minutiae:
        out += quantize_coord(m.x).to_bytes(3, "little")
        out += quantize_coord(m.y).to_bytes(3, "little")
        out += struct.pack("<H", quantize_theta(m.theta))
    if template.embedding is not None:
        out += np.asarray(template.embedding, dtype="<f4").tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedTemplateError(f"template truncated while reading {what}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk


def read_template(data: bytes) -> Template:
    """Parse IPTF v1 bytes back into a validated Template."""
    r = _Reader(bytes(data))
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, flags, ppi, thumb_code, gender_code, age_weeks = struct.unpack(
        "<BBHBBH", r.take(8, "header"))
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported template version {version}")
    if thumb_code not in _THUMB_FROM_CODE:
        raise ValidationError(f"unknown thumb code {thumb_code}")
    if gender_code not in _GENDER_FROM_CODE:
        raise ValidationError(f"unknown gender code {gender_code}")

    ids = []
    for what in ("subject_id", "session_id"):
        (length,) = struct.unpack("<B", r.take(1, f"{what} length"))
        raw = r.take(length, what)
        try:
            ids.append(raw.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise ValidationError(f"{what} is not valid UTF-8") from exc

    (count,) = struct.unpack("<H", r.take(2, "minutiae count"))
    minutiae = []
    for i in range(count):
        block = r.take(8, f"minutia {i}")
        x_raw = int.from_bytes(block[0:3], "little")
        y_raw = int.from_bytes(block[3:6], "little")
        (theta_raw,) = struct.unpack("<H", block[6:8])
        minutiae.append(Minutia(x_raw / _COORD_SCALE, y_raw / _COORD_SCALE,
                                theta_raw * TWO_PI / _THETA_STEPS))

    embedding = None
    if flags & _FLAG_EMBEDDING:
        raw = r.take(4 * EMBEDDING_DIM, "embedding")
        embedding = np.frombuffer(raw, dtype="<f4").astype(np.float32)
    if r.pos != len(r.data):
        raise ValidationError(f"{len(r.data) - r.pos} trailing bytes after template payload")

    return Template(
        subject_id=ids[0],
        thumb=_THUMB_FROM_CODE[thumb_code],
        session_id=ids[1],
        age_weeks_at_capture=age_weeks,
        gender=_GENDER_FROM_CODE[gender_code],
        minutiae=MinutiaeSet(tuple(minutiae), ppi),
        embedding=embedding,
        aged=bool(flags & _FLAG_AGED),
    )


def save_template(template: Template, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_template(template))


def load_template(path) -> Template:
    with open(path, "rb") as fh:
        return read_template(fh.read())
