"""Shared domain types for the infant fingerprint toolkit.

All types are immutable after construction and validate their invariants
eagerly, raising :class:`ValidationError` on violation. Numpy arrays held by
these objects are copied and marked read-only so instances can be shared
freely between threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

EMBEDDING_DIM = 192
MAX_AGE_WEEKS = 1040
MAP_CHANNELS = 12


class ValidationError(ValueError):
    """A domain object or operation argument violates an invariant."""


class Thumb(enum.Enum):
    LEFT = "left"
    RIGHT = "right"


class Gender(enum.Enum):
    MALE = "male"
    FEMALE = "female"
    UNKNOWN = "unknown"


def wrap_angle(theta: float) -> float:
    """Reduce an angle to [0, 2*pi)."""
    if not math.isfinite(theta):
        raise ValidationError(f"angle must be finite, got {theta!r}")
    wrapped = math.fmod(theta, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    if wrapped >= TWO_PI:  # fmod rounding at the seam
        wrapped -= TWO_PI
    return wrapped


def _read_only(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class GrayImage:
    """Single-channel image with intensities in [0, 1] plus resolution metadata.

    ``pixels`` is a (height, width) float64 array; x indexes columns and y
    indexes rows, origin at the top-left.
    """

    pixels: np.ndarray
    ppi: int

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ValidationError("image pixels must form a non-empty 2-d array")
        if not np.all(np.isfinite(px)):
            raise ValidationError("image intensities must be finite")
        lo, hi = float(px.min()), float(px.max())
        if lo < 0.0 or hi > 1.0:
            raise ValidationError(f"image intensities must lie in [0, 1], got [{lo}, {hi}]")
        ppi = int(self.ppi)
        if ppi <= 0:
            raise ValidationError(f"ppi must be positive, got {self.ppi!r}")
        object.__setattr__(self, "pixels", _read_only(px))
        object.__setattr__(self, "ppi", ppi)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class Minutia:
    """A ridge ending or bifurcation: position in pixels, direction in radians.

    x is the column coordinate, y the row coordinate, theta measured
    counter-clockwise from the +x axis in [0, 2*pi).
    """

    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        for name in ("x", "y"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0:
                raise ValidationError(f"minutia {name} must be finite and non-negative, got {v!r}")
        if not math.isfinite(self.theta) or not (0.0 <= self.theta < TWO_PI):
            raise ValidationError(f"minutia theta must lie in [0, 2*pi), got {self.theta!r}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", float(self.theta))


@dataclass(frozen=True)
class MinutiaeSet:
    """Ordered collection of minutiae extracted from one impression."""

    minutiae: tuple[Minutia, ...]
    source_ppi: int

    def __post_init__(self) -> None:
        mins = tuple(self.minutiae)
        for m in mins:
            if not isinstance(m, Minutia):
                raise ValidationError(f"expected Minutia, got {type(m).__name__}")
        ppi = int(self.source_ppi)
        if ppi <= 0:
            raise ValidationError(f"source_ppi must be positive, got {self.source_ppi!r}")
        object.__setattr__(self, "minutiae", mins)
        object.__setattr__(self, "source_ppi", ppi)

    def __len__(self) -> int:
        return len(self.minutiae)

    def __iter__(self) -> Iterator[Minutia]:
        return iter(self.minutiae)

    def xy(self) -> np.ndarray:
        """Positions as an (N, 2) array of (x, y)."""
        if not self.minutiae:
            return np.zeros((0, 2))
        return np.array([(m.x, m.y) for m in self.minutiae], dtype=np.float64)

    def thetas(self) -> np.ndarray:
        return np.array([m.theta for m in self.minutiae], dtype=np.float64)

    @staticmethod
    def from_arrays(xy: np.ndarray, thetas: np.ndarray, source_ppi: int) -> "MinutiaeSet":
        mins = tuple(
            Minutia(float(x), float(y), wrap_angle(float(t)))
            for (x, y), t in zip(np.asarray(xy, dtype=np.float64), np.asarray(thetas, dtype=np.float64))
        )
        return MinutiaeSet(mins, source_ppi)


@dataclass(frozen=True)
class MinutiaeMap:
    """12-channel hot-spot tensor over the image grid.

    ``values`` has shape (height, width, 12) indexed [row][col][channel].
    Channel k encodes directions near 2*pi*k/12. Values are non-negative and,
    by construction of the encoder, never exceed the number of encoded
    minutiae.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != MAP_CHANNELS:
            raise ValidationError(f"map must have shape (h, w, {MAP_CHANNELS}), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("map values must be finite")
        if v.size and float(v.min()) < 0.0:
            raise ValidationError("map values must be non-negative")
        object.__setattr__(self, "values", _read_only(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return MAP_CHANNELS


@dataclass(frozen=True)
class Template:
    """Persisted enrollment record for a single impression."""

    subject_id: str
    thumb: Thumb
    session_id: str
    age_weeks_at_capture: int
    gender: Gender
    minutiae: MinutiaeSet
    embedding: Optional[np.ndarray] = None
    aged: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.thumb, Thumb):
            raise ValidationError(f"thumb must be a Thumb enum, got {self.thumb!r}")
        if not isinstance(self.gender, Gender):
            raise ValidationError(f"gender must be a Gender enum, got {self.gender!r}")
        if not isinstance(self.minutiae, MinutiaeSet):
            raise ValidationError("minutiae must be a MinutiaeSet")
        age = int(self.age_weeks_at_capture)
        if age < 0 or age >= MAX_AGE_WEEKS:
            raise ValidationError(f"age_weeks_at_capture must lie in [0, {MAX_AGE_WEEKS}), got {age}")
        for name in ("subject_id", "session_id"):
            value = getattr(self, name)
            if not isinstance(value, str):
                raise ValidationError(f"{name} must be a string")
            if len(value.encode("utf-8")) > 255:
                raise ValidationError(f"{name} must encode to at most 255 UTF-8 bytes")
        if self.embedding is not None:
            emb = np.asarray(self.embedding, dtype=np.float32)
            if emb.shape != (EMBEDDING_DIM,):
                raise ValidationError(f"embedding must have shape ({EMBEDDING_DIM},), got {emb.shape}")
            norm = float(np.linalg.norm(emb.astype(np.float64)))
            if abs(norm - 1.0) > 1e-6:
                raise ValidationError(f"embedding must have unit norm, got {norm}")
            object.__setattr__(self, "embedding", _read_only(emb))
        object.__setattr__(self, "age_weeks_at_capture", age)
        object.__setattr__(self, "aged", bool(self.aged))


@dataclass(frozen=True)
class ScoreBundle:
    """Per-matcher scores: minutiae (s_m), texture (s_t), external (s_l)."""

    s_m: Optional[float] = None
    s_t: Optional[float] = None
    s_l: Optional[float] = None

    def __post_init__(self) -> None:
        for name in ("s_m", "s_t", "s_l"):
            v = getattr(self, name)
            if v is None:
                continue
            v = float(v)
            if not math.isfinite(v):
                raise ValidationError(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, v)

    def present(self) -> tuple[str, ...]:
        return tuple(name for name in ("s_m", "s_t", "s_l") if getattr(self, name) is not None)


@dataclass(frozen=True)
class FusionWeights:
    """Convex weights over the three matchers; must sum to one."""

    lambda_m: float = 0.6
    lambda_t: float = 0.1
    lambda_l: float = 0.3

    def __post_init__(self) -> None:
        for name in ("lambda_m", "lambda_t", "lambda_l"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0.0:
                raise ValidationError(f"{name} must be finite and non-negative, got {v!r}")
            object.__setattr__(self, name, v)
        total = self.lambda_m + self.lambda_t + self.lambda_l
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"fusion weights must sum to 1, got {total}")

    def as_dict(self) -> dict[str, float]:
        return {"s_m": self.lambda_m, "s_t": self.lambda_t, "s_l": self.lambda_l}
