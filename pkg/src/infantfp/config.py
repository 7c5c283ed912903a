"""Flat key = value configuration shared by the CLI and the harness.

Precedence is CLI overrides > config file > built-in defaults. Unknown keys
are rejected. ``dumps`` writes every effective key so dump-then-load round
trips exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

from .aging import AgingPolicy
from .core import FusionWeights
from .evaluate import EvalParams
from .extract import ExtractParams
from .match import ExternalMatcher, MatchParams, NormalizationBounds
from .minmap import MinmapParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    minmap: MinmapParams = MinmapParams()
    extract: ExtractParams = ExtractParams()
    aging: AgingPolicy = AgingPolicy()
    match: MatchParams = MatchParams()
    weights: FusionWeights = FusionWeights()
    bounds: NormalizationBounds = NormalizationBounds()
    external_command: Optional[str] = None
    external_timeout_s: float = 10.0
    eval_params: EvalParams = EvalParams()

    def external_matcher(self) -> Optional[ExternalMatcher]:
        if self.external_command is None:
            return None
        return ExternalMatcher(self.external_command, self.external_timeout_s)


def _parse_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise ConfigError(f"expected a number, got {text!r}") from exc
    if not math.isfinite(value):
        raise ConfigError(f"expected a finite number, got {text!r}")
    return value


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {text!r}") from exc


def _parse_optional_float(text: str) -> Optional[float]:
    return None if text.lower() == "none" else _parse_float(text)


def _parse_optional_str(text: str) -> Optional[str]:
    return None if text.lower() == "none" else text


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(_parse_float(part) for part in text.split(",") if part.strip())


def _parse_buckets(text: str) -> tuple[tuple[int, int], ...]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        if not sep:
            raise ConfigError(f"expected lo-hi bucket, got {part!r}")
        out.append((_parse_int(lo), _parse_int(hi)))
    return tuple(out)


def _parse_pair(text: str) -> tuple[float, float]:
    values = _parse_floats(text)
    if len(values) != 2:
        raise ConfigError(f"expected two comma-separated numbers, got {text!r}")
    return values  # type: ignore[return-value]


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)  # shortest exact representation, round trips bit-for-bit
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{lo}-{hi}" for lo, hi in value)
        return ",".join(_fmt(v) for v in value)
    return str(value)


# key -> (section attr, field name, parser, getter)
def _schema() -> dict[str, tuple[str, str, Callable[[str], object]]]:
    return {
        "minmap.sigma_s": ("minmap", "sigma_s", _parse_float),
        "minmap.peak_threshold": ("minmap", "peak_threshold", _parse_float),
        "minmap.nms_radius": ("minmap", "nms_radius", _parse_float),
        "extract.block_size": ("extract", "block_size", _parse_int),
        "extract.gabor_wavelength": ("extract", "gabor_wavelength", _parse_optional_float),
        "extract.binarize_threshold": ("extract", "binarize_threshold", str),
        "extract.min_quality_coherence": ("extract", "min_quality_coherence", _parse_float),
        "extract.border_margin": ("extract", "border_margin", _parse_int),
        "aging.scale_factor": ("aging", "scale_factor", _parse_float),
        "aging.age_cutoff_weeks": ("aging", "age_cutoff_weeks", _parse_int),
        "match.pos_tolerance": ("match", "pos_tolerance", _parse_float),
        "match.angle_tolerance": ("match", "angle_tolerance", _parse_float),
        "match.rotation_range": ("match", "rotation_range", _parse_float),
        "match.rotation_step": ("match", "rotation_step", _parse_float),
        "match.max_hypotheses": ("match", "max_hypotheses", _parse_int),
        "weights.lambda_m": ("weights", "lambda_m", _parse_float),
        "weights.lambda_t": ("weights", "lambda_t", _parse_float),
        "weights.lambda_l": ("weights", "lambda_l", _parse_float),
        "bounds.minutiae": ("bounds", "minutiae", _parse_pair),
        "bounds.texture": ("bounds", "texture", _parse_pair),
        "bounds.external": ("bounds", "external", _parse_pair),
        "external.command": ("", "external_command", _parse_optional_str),
        "external.timeout_s": ("", "external_timeout_s", _parse_float),
        "eval.far_targets": ("eval_params", "far_targets", _parse_floats),
        "eval.age_buckets_weeks": ("eval_params", "age_buckets_weeks", _parse_buckets),
        "eval.lapse_buckets_weeks": ("eval_params", "lapse_buckets_weeks", _parse_buckets),
    }


def parse_assignments(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines, ignoring blanks and # comments."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
        out[key.strip()] = value.strip()
    return out


def apply_overrides(config: Config, assignments: dict[str, str]) -> Config:
    schema = _schema()
    section_updates: dict[str, dict[str, object]] = {}
    top_updates: dict[str, object] = {}
    for key, raw in assignments.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {key!r}")
        section, attr, parser = schema[key]
        try:
            value = parser(raw)
        except ConfigError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
        if section:
            section_updates.setdefault(section, {})[attr] = value
        else:
            top_updates[attr] = value
    updates: dict[str, object] = dict(top_updates)
    for section, fields in section_updates.items():
        updates[section] = replace(getattr(config, section), **fields)
    return replace(config, **updates)


def loads(text: str, base: Optional[Config] = None, source: str = "<config>") -> Config:
    return apply_overrides(base or Config(), parse_assignments(text, source))


def load_file(path, base: Optional[Config] = None) -> Config:
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read(), base, source=str(path))


def dumps(config: Config) -> str:
    lines = []
    for key, (section, attr, _) in _schema().items():
        holder = getattr(config, section) if section else config
        lines.append(f"{key} = {_fmt(getattr(holder, attr))}")
    return "\n".join(lines) + "\n"
