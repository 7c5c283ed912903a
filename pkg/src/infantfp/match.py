"""Score production and fusion.

A from-scratch minutiae matcher (alignment hypothesis voting plus greedy
one-to-one pairing), an embedding inner-product texture comparator with a
deterministic hand-crafted fallback embedding, a pluggable external-matcher
slot, min-max score normalization, weighted sum fusion with missing-slot
renormalization, the gender gate, multi-impression average fusion, and the
authenticate/search entry points.
"""

from __future__ import annotations

import logging
import math
import shlex
import subprocess
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .aging import AgingPolicy, age_minutiae_set, select_scale_factor
from .core import (
    EMBEDDING_DIM,
    TWO_PI,
    FusionWeights,
    Gender,
    GrayImage,
    MinutiaeSet,
    ScoreBundle,
    Template,
    Thumb,
    ValidationError,
)

log = logging.getLogger(__name__)

_REFERENCE_PPI = 1900


@dataclass(frozen=True)
class MatchParams:
    """Minutiae matcher tolerances and alignment search grid.

    ``pos_tolerance`` is expressed at 1,900 ppi and rescaled by callers that
    know the template resolution (see :func:`params_for_ppi`).
    """

    pos_tolerance: float = 12.0
    angle_tolerance: float = math.pi / 6.0
    rotation_range: float = math.pi / 4.0
    rotation_step: float = math.pi / 90.0
    max_hypotheses: int = 8

    def __post_init__(self) -> None:
        for name in ("pos_tolerance", "angle_tolerance", "rotation_range", "rotation_step"):
            if not (getattr(self, name) > 0):
                raise ValidationError(f"{name} must be positive")
        if int(self.max_hypotheses) < 1:
            raise ValidationError("max_hypotheses must be at least 1")


def params_for_ppi(params: MatchParams, ppi: int) -> MatchParams:
    """Rescale the position tolerance to a template resolution."""
    factor = ppi / _REFERENCE_PPI
    return replace(params, pos_tolerance=params.pos_tolerance * factor)


@dataclass(frozen=True)
class NormalizationBounds:
    """Fixed per-matcher (min, max) ranges for min-max normalization."""

    minutiae: tuple[float, float] = (0.0, 1.0)
    texture: tuple[float, float] = (-1.0, 1.0)
    external: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        for name in ("minutiae", "texture", "external"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise ValidationError(f"{name} bounds must satisfy max > min")


@dataclass(frozen=True)
class RankedCandidate:
    subject_id: str
    fused_score: float
    rank: int


@dataclass(frozen=True)
class MinutiaeMatchResult:
    score: float
    n_matched: int
    no_features: bool
    rotation: float
    translation: tuple[float, float]


def _wrap_pi(values: np.ndarray) -> np.ndarray:
    """Wrap angle differences to (-pi, pi]."""
    out = np.mod(values + math.pi, TWO_PI) - math.pi
    return np.where(out == -math.pi, math.pi, out)


def _angle_abs_diff(values: np.ndarray) -> np.ndarray:
    return np.abs(_wrap_pi(values))


def _greedy_pair_count(a_xy: np.ndarray, a_th: np.ndarray, b_xy: np.ndarray, b_th: np.ndarray,
                       rotation: float, tx: float, ty: float, params: MatchParams) -> int:
    cos_r, sin_r = math.cos(rotation), math.sin(rotation)
    rx = a_xy[:, 0] * cos_r - a_xy[:, 1] * sin_r + tx
    ry = a_xy[:, 0] * sin_r + a_xy[:, 1] * cos_r + ty
    dx = b_xy[None, :, 0] - rx[:, None]
    dy = b_xy[None, :, 1] - ry[:, None]
    dist = np.hypot(dx, dy)
    ang = _angle_abs_diff(b_th[None, :] - (a_th[:, None] + rotation))
    ok = (dist <= params.pos_tolerance) & (ang <= params.angle_tolerance)
    ai, bj = np.nonzero(ok)
    if ai.size == 0:
        return 0
    order = np.lexsort((bj, ai, dist[ai, bj]))
    used_a = np.zeros(a_xy.shape[0], dtype=bool)
    used_b = np.zeros(b_xy.shape[0], dtype=bool)
    count = 0
    for k in order:
        i, j = ai[k], bj[k]
        if used_a[i] or used_b[j]:
            continue
        used_a[i] = used_b[j] = True
        count += 1
    return count


def _best_alignment(a: MinutiaeSet, b: MinutiaeSet, params: MatchParams) -> tuple[int, float, float, float]:
    """Best pairing count over voted (rotation, translation) hypotheses.

    Every angle-compatible minutia pair proposes the rotation implied by its
    direction difference (snapped to the search grid) and the translation
    aligning its positions; the densest vote bins are then scored exactly.
    """
    a_xy, a_th = a.xy(), a.thetas()
    b_xy, b_th = b.xy(), b.thetas()
    na, nb = len(a), len(b)

    delta = _wrap_pi(b_th[None, :] - a_th[:, None])
    feasible = np.abs(delta) <= params.rotation_range + params.rotation_step
    ai, bj = np.nonzero(feasible)
    if ai.size == 0:
        return 0, 0.0, 0.0, 0.0

    snapped = np.round(delta[ai, bj] / params.rotation_step) * params.rotation_step
    snapped = np.clip(snapped, -params.rotation_range, params.rotation_range)
    cos_r, sin_r = np.cos(snapped), np.sin(snapped)
    tx = b_xy[bj, 0] - (a_xy[ai, 0] * cos_r - a_xy[ai, 1] * sin_r)
    ty = b_xy[bj, 1] - (a_xy[ai, 0] * sin_r + a_xy[ai, 1] * cos_r)

    bin_w = max(params.pos_tolerance, 1e-6)
    rot_bin = np.round(snapped / params.rotation_step).astype(np.int64)
    tx_bin = np.floor(tx / bin_w).astype(np.int64)
    ty_bin = np.floor(ty / bin_w).astype(np.int64)
    keys = np.stack([rot_bin, tx_bin, ty_bin], axis=1)
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)

    # Strongest bins first; np.unique sorts keys, so ties stay deterministic.
    top = np.argsort(-counts, kind="stable")[:params.max_hypotheses]
    best = (0, 0.0, 0.0, 0.0)
    for bin_idx in top:
        members = inverse == bin_idx
        rot = float(uniq[bin_idx, 0]) * params.rotation_step
        hyp_tx = float(np.mean(tx[members]))
        hyp_ty = float(np.mean(ty[members]))
        count = _greedy_pair_count(a_xy, a_th, b_xy, b_th, rot, hyp_tx, hyp_ty, params)
        if count > best[0]:
            best = (count, rot, hyp_tx, hyp_ty)
        if best[0] == min(na, nb):
            break
    return best


def minutiae_match_detail(a: MinutiaeSet, b: MinutiaeSet, params: MatchParams) -> MinutiaeMatchResult:
    """Symmetric minutiae similarity: 2 * matched / (|a| + |b|) in [0, 1]."""
    if len(a) == 0 or len(b) == 0:
        return MinutiaeMatchResult(0.0, 0, True, 0.0, (0.0, 0.0))
    fwd = _best_alignment(a, b, params)
    bwd = _best_alignment(b, a, params)
    if bwd[0] > fwd[0]:
        count = bwd[0]
        rot, tx, ty = -bwd[1], *(_invert_translation(bwd[1], bwd[2], bwd[3]))
    else:
        count = fwd[0]
        rot, tx, ty = fwd[1], fwd[2], fwd[3]
    score = 2.0 * count / (len(a) + len(b))
    return MinutiaeMatchResult(float(min(1.0, score)), count, False, rot, (tx, ty))


def _invert_translation(rotation: float, tx: float, ty: float) -> tuple[float, float]:
    cos_r, sin_r = math.cos(-rotation), math.sin(-rotation)
    return (-(tx * cos_r - ty * sin_r), -(tx * sin_r + ty * cos_r))


def minutiae_match(a: MinutiaeSet, b: MinutiaeSet, params: MatchParams) -> float:
    return minutiae_match_detail(a, b, params).score


def texture_match(e: np.ndarray, p: np.ndarray) -> float:
    """Inner product of two unit-norm 192-dim representations, in [-1, 1]."""
    e = np.asarray(e, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    for name, v in (("e", e), ("p", p)):
        if v.shape != (EMBEDDING_DIM,):
            raise ValidationError(f"{name} must have shape ({EMBEDDING_DIM},), got {v.shape}")
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > 1e-5:
            raise ValidationError(f"{name} must be unit norm, got {norm}")
    return float(np.clip(np.dot(e, p), -1.0, 1.0))


def fallback_embedding(img: GrayImage) -> np.ndarray:
    """Deterministic hand-crafted 192-dim image descriptor, L2 normalized.

    The image is split into a 4x4 grid; each cell contributes an 8-bin
    gradient-orientation histogram (doubled angles, energy weighted) and a
    4-bin radial spectral-energy histogram, giving 16 * 12 = 192 features.
    Structure-free images map to the uniform unit vector.
    """
    px = img.pixels
    gy, gx = np.gradient(px)
    energy = gx * gx + gy * gy
    doubled = np.mod(np.arctan2(2 * gx * gy, gx * gx - gy * gy), TWO_PI)

    h, w = px.shape
    rows = np.linspace(0, h, 5).astype(int)
    cols = np.linspace(0, w, 5).astype(int)
    features = []
    for bi in range(4):
        for bj in range(4):
            cell = slice(rows[bi], rows[bi + 1]), slice(cols[bj], cols[bj + 1])
            cell_energy = energy[cell]
            cell_angles = doubled[cell]
            hist, _ = np.histogram(cell_angles, bins=8, range=(0.0, TWO_PI), weights=cell_energy)
            block = px[cell] - px[cell].mean()
            spectrum = np.abs(np.fft.rfft2(block)) ** 2
            fy = np.fft.fftfreq(block.shape[0])[:, None]
            fx = np.fft.rfftfreq(block.shape[1])[None, :]
            freq = np.hypot(fy, fx)
            bands = np.histogram(freq.ravel(), bins=[0.02, 0.06, 0.10, 0.16, 0.30],
                                 weights=spectrum.ravel())[0]
            features.append(np.concatenate([hist, bands]))
    vec = np.concatenate(features)
    norm = float(np.linalg.norm(vec))
    if norm < 1e-12:
        vec = np.full(EMBEDDING_DIM, 1.0 / math.sqrt(EMBEDDING_DIM))
    else:
        vec = vec / norm
    out = vec.astype(np.float32)
    # Renormalize after the float32 cast so templates accept it verbatim.
    out = out / np.float32(np.linalg.norm(out.astype(np.float64)))
    return out


@dataclass(frozen=True)
class ExternalMatcher:
    """Command-line connector: placeholders {probe} and {enrolled}, score on stdout."""

    command_template: str
    timeout_s: float = 10.0


def external_match(probe_path: str, enrolled_path: str,
                   connector: Optional[ExternalMatcher]) -> Optional[float]:
    """Invoke the external matcher; any failure yields a missing score."""
    if connector is None:
        return None
    command = [part.format(probe=probe_path, enrolled=enrolled_path)
               for part in shlex.split(connector.command_template)]
    try:
        proc = subprocess.run(command, capture_output=True, text=True,
                              timeout=connector.timeout_s)
    except (subprocess.TimeoutExpired, OSError) as exc:
        log.warning("external matcher failed: %s", exc)
        return None
    if proc.returncode != 0:
        log.warning("external matcher exited %d: %s", proc.returncode, proc.stderr.strip())
        return None
    try:
        score = float(proc.stdout.strip())
    except ValueError:
        log.warning("external matcher output not a number: %r", proc.stdout)
        return None
    if not math.isfinite(score):
        log.warning("external matcher returned non-finite score")
        return None
    return score


def _normalize_one(score: float, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return float(np.clip((score - lo) / (hi - lo), 0.0, 1.0))


def normalize_scores(raw: ScoreBundle, bounds: NormalizationBounds) -> ScoreBundle:
    """Min-max normalize each present score into [0, 1]."""
    return ScoreBundle(
        s_m=None if raw.s_m is None else _normalize_one(raw.s_m, bounds.minutiae),
        s_t=None if raw.s_t is None else _normalize_one(raw.s_t, bounds.texture),
        s_l=None if raw.s_l is None else _normalize_one(raw.s_l, bounds.external),
    )


def fuse_scores(norm: ScoreBundle, weights: FusionWeights) -> float:
    """Weighted sum of the present scores, weights renormalized over present slots."""
    weight_map = weights.as_dict()
    present = norm.present()
    if not present:
        raise ValidationError("cannot fuse a bundle with no scores")
    total_weight = sum(weight_map[name] for name in present)
    if total_weight <= 0.0:
        raise ValidationError("no fusion weight on the present scores")
    fused = sum(weight_map[name] * getattr(norm, name) for name in present) / total_weight
    return float(np.clip(fused, 0.0, 1.0))


def gender_gate(a: Template, b: Template, fused: float) -> float:
    """Zero the score when both genders are known and differ."""
    if (a.gender is not Gender.UNKNOWN and b.gender is not Gender.UNKNOWN
            and a.gender is not b.gender):
        return 0.0
    return fused


def multi_sample_fuse(scores: Sequence[float]) -> float:
    """Average fusion across impressions/thumbs/sessions."""
    if not scores:
        raise ValidationError("multi_sample_fuse requires at least one score")
    return float(np.mean(np.asarray(scores, dtype=np.float64)))


@dataclass(frozen=True)
class SubjectRecord:
    """All templates of one subject captured in one session."""

    subject_id: str
    templates: tuple[Template, ...]

    def __post_init__(self) -> None:
        if not self.templates:
            raise ValidationError("subject record needs at least one template")
        object.__setattr__(self, "templates", tuple(self.templates))

    @property
    def gender(self) -> Gender:
        return self.templates[0].gender


ExternalScoreFn = Callable[[Template, Template], Optional[float]]


def _aged_minutiae(template: Template, policy: AgingPolicy) -> MinutiaeSet:
    if template.aged:
        return template.minutiae
    factor = select_scale_factor(template.age_weeks_at_capture, policy)
    if factor == 1.0:
        return template.minutiae
    return age_minutiae_set(template.minutiae, factor)


def pairwise_bundle(probe: Template, enrolled: Template, params: MatchParams,
                    policy: AgingPolicy,
                    external_fn: Optional[ExternalScoreFn] = None) -> ScoreBundle:
    """Raw per-matcher scores for one template pair (enrollment side aged)."""
    enrolled_minutiae = _aged_minutiae(enrolled, policy)
    scaled = params_for_ppi(params, min(probe.minutiae.source_ppi, enrolled.minutiae.source_ppi))
    s_m = minutiae_match(probe.minutiae, enrolled_minutiae, scaled)
    s_t = None
    if probe.embedding is not None and enrolled.embedding is not None:
        s_t = texture_match(enrolled.embedding, probe.embedding)
    s_l = external_fn(probe, enrolled) if external_fn is not None else None
    return ScoreBundle(s_m=s_m, s_t=s_t, s_l=s_l)


@dataclass(frozen=True)
class AuthResult:
    score: float            # gender-gated average of per-pair fused scores
    mean_bundle: ScoreBundle  # per-matcher normalized scores averaged over pairs, ungated
    n_pairs: int


def authenticate_detail(probe: SubjectRecord, enrolled: SubjectRecord, weights: FusionWeights,
                        bounds: NormalizationBounds, params: MatchParams, policy: AgingPolicy,
                        external_fn: Optional[ExternalScoreFn] = None) -> AuthResult:
    """Fused subject comparison per the evaluation protocol.

    Same-thumb template pairs are fused individually, averaged, and the
    result gender gated. The averaged per-matcher bundle is reported
    alongside for weight calibration; it is not gated.
    """
    scores = []
    slot_values: dict[str, list[float]] = {"s_m": [], "s_t": [], "s_l": []}
    for thumb in (Thumb.LEFT, Thumb.RIGHT):
        probe_side = [t for t in probe.templates if t.thumb is thumb]
        enrolled_side = [t for t in enrolled.templates if t.thumb is thumb]
        for pt in probe_side:
            for et in enrolled_side:
                raw = pairwise_bundle(pt, et, params, policy, external_fn)
                norm = normalize_scores(raw, bounds)
                scores.append(fuse_scores(norm, weights))
                for name in norm.present():
                    slot_values[name].append(getattr(norm, name))
    if not scores:
        raise ValidationError(
            f"no same-thumb template pairs between {probe.subject_id} and {enrolled.subject_id}")
    fused = multi_sample_fuse(scores)
    mean_bundle = ScoreBundle(**{
        name: (float(np.mean(vals)) if vals else None) for name, vals in slot_values.items()})
    gated = gender_gate(probe.templates[0], enrolled.templates[0], fused)
    return AuthResult(score=gated, mean_bundle=mean_bundle, n_pairs=len(scores))


def authenticate(probe: SubjectRecord, enrolled: SubjectRecord, weights: FusionWeights,
                 bounds: NormalizationBounds, params: MatchParams, policy: AgingPolicy,
                 external_fn: Optional[ExternalScoreFn] = None) -> float:
    return authenticate_detail(probe, enrolled, weights, bounds, params, policy, external_fn).score


def search(probe: SubjectRecord, gallery: Sequence[SubjectRecord], weights: FusionWeights,
           bounds: NormalizationBounds, params: MatchParams, policy: AgingPolicy,
           external_fn: Optional[ExternalScoreFn] = None) -> list[RankedCandidate]:
    """Rank every gallery subject against the probe, best first.

    Ties break lexicographically on subject id so results are deterministic.
    """
    if not gallery:
        raise ValidationError("search requires a non-empty gallery")
    scored = [
        (authenticate(probe, record, weights, bounds, params, policy, external_fn),
         record.subject_id)
        for record in gallery
    ]
    scored.sort(key=lambda item: (-item[0], item[1]))
    return [RankedCandidate(subject_id=sid, fused_score=score, rank=i + 1)
            for i, (score, sid) in enumerate(scored)]
