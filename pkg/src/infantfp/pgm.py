"""Binary PGM (P5) image reading and writing.

Resolution metadata travels in a ``# ppi <n>`` comment inside the header;
readers may also supply it explicitly, which wins over the comment.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from .core import GrayImage, ValidationError


class PgmFormatError(ValueError):
    pass


def write_pgm(img: GrayImage, path) -> None:
    data = np.round(img.pixels * 255.0).astype(np.uint8)
    header = f"P5\n# ppi {img.ppi}\n{img.width} {img.height}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path, ppi: Optional[int] = None) -> GrayImage:
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(b"P5"):
        raise PgmFormatError(f"{path}: not a binary PGM (P5) file")

    comment_ppi = None
    values: list[int] = []
    i = 2
    while len(values) < 3:
        c = raw[i:i + 1]
        if not c:
            raise PgmFormatError(f"{path}: truncated header")
        if c == b"#":
            j = raw.find(b"\n", i)
            j = len(raw) if j < 0 else j
            parts = raw[i + 1:j].decode("ascii", "replace").split()
            if len(parts) == 2 and parts[0] == "ppi":
                try:
                    comment_ppi = int(parts[1])
                except ValueError:
                    pass
            i = j + 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(raw) and not raw[j:j + 1].isspace():
                j += 1
            try:
                values.append(int(raw[i:j]))
            except ValueError:
                raise PgmFormatError(f"{path}: bad header token {raw[i:j]!r}")
            i = j
    width, height, maxval = values
    if maxval != 255:
        raise PgmFormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    i += 1  # single whitespace byte separating header from pixels
    pixels = raw[i:i + width * height]
    if len(pixels) != width * height:
        raise PgmFormatError(f"{path}: expected {width * height} pixel bytes, got {len(pixels)}")

    effective_ppi = ppi if ppi is not None else comment_ppi
    if effective_ppi is None:
        raise ValidationError(f"{path}: no ppi given and none recorded in the file")
    arr = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width).astype(np.float64) / 255.0
    return GrayImage(arr, effective_ppi)
