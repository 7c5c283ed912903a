"""Longitudinal evaluation harness.

Manifest parsing, genuine/imposter protocol generation, TAR@FAR / EER / CMC
metrics with their tie conventions pinned (accept when score >= threshold),
fusion-weight grid search, and deterministic CSV/text reporting.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .aging import AgingPolicy
from .core import FusionWeights, Gender, ScoreBundle, Template, Thumb, ValidationError
from .iptf import load_template
from .match import (
    AuthResult,
    MatchParams,
    NormalizationBounds,
    SubjectRecord,
    authenticate_detail,
    fuse_scores,
)

GENUINE = "genuine"
IMPOSTER = "imposter"


class ManifestError(ValueError):
    """Manifest file is malformed; message carries the line number."""


class EvalWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    session_id: str
    capture_date: date
    age_weeks: int
    gender: Gender
    thumb: Thumb
    path: str


_MANIFEST_FIELDS = ["subject_id", "session_id", "capture_date", "age_weeks", "gender", "thumb", "path"]


def parse_manifest(path) -> list[ManifestEntry]:
    """Parse the tab-separated dataset manifest, reporting bad lines by number."""
    path = Path(path)
    entries: list[ManifestEntry] = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ManifestError(f"{path}:1: empty manifest")
    header = lines[0].split("\t")
    if header != _MANIFEST_FIELDS:
        raise ManifestError(f"{path}:1: bad header {header!r}, expected {_MANIFEST_FIELDS!r}")
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != len(_MANIFEST_FIELDS):
            raise ManifestError(f"{path}:{lineno}: expected {len(_MANIFEST_FIELDS)} fields, got {len(parts)}")
        subject_id, session_id, date_str, age_str, gender_str, thumb_str, rel_path = parts
        try:
            capture = date.fromisoformat(date_str)
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: bad capture_date {date_str!r}") from exc
        try:
            age_weeks = int(age_str)
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: bad age_weeks {age_str!r}") from exc
        try:
            gender = Gender(gender_str)
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: bad gender {gender_str!r}") from exc
        try:
            thumb = Thumb(thumb_str)
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: bad thumb {thumb_str!r}") from exc
        entries.append(ManifestEntry(subject_id, session_id, capture, age_weeks, gender, thumb, rel_path))
    if not entries:
        raise ManifestError(f"{path}:2: manifest has a header but no records")
    return entries


SessionKey = tuple[str, str]  # (subject_id, session_id)


@dataclass(frozen=True)
class ProtocolPair:
    enrolled: SessionKey
    probe: SessionKey
    label: str
    time_lapse_weeks: int
    enrollment_age_weeks: int


@dataclass(frozen=True)
class _SessionInfo:
    subject_id: str
    session_id: str
    capture_date: date
    age_weeks: int

    @property
    def key(self) -> SessionKey:
        return (self.subject_id, self.session_id)


def _session_infos(entries: Sequence[ManifestEntry]) -> list[_SessionInfo]:
    seen: dict[SessionKey, _SessionInfo] = {}
    for e in entries:
        key = (e.subject_id, e.session_id)
        info = _SessionInfo(e.subject_id, e.session_id, e.capture_date, e.age_weeks)
        if key in seen and (seen[key].capture_date != info.capture_date
                            or seen[key].age_weeks != info.age_weeks):
            raise ManifestError(f"inconsistent date/age for subject {e.subject_id} session {e.session_id}")
        seen[key] = info
    return sorted(seen.values(), key=lambda s: (s.subject_id, s.capture_date, s.session_id))


def _lapse_weeks(enrolled: _SessionInfo, probe: _SessionInfo) -> int:
    return (probe.capture_date - enrolled.capture_date).days // 7


def _in_bucket(value: int, bucket: Optional[tuple[int, int]]) -> bool:
    return bucket is None or (bucket[0] <= value < bucket[1])


def build_protocol(entries: Sequence[ManifestEntry],
                   age_bucket: Optional[tuple[int, int]] = None,
                   lapse_bucket: Optional[tuple[int, int]] = None) -> list[ProtocolPair]:
    """Genuine and imposter subject-session pairs for one evaluation bucket.

    Enrollment is each subject's earliest session. Genuine pairs compare it
    with the subject's strictly later sessions; imposter pairs compare it
    with other subjects' strictly later sessions, one pair per direction.
    Template-level comparisons stay same-thumb (see :func:`template_pairs`).
    """
    sessions = _session_infos(entries)
    by_subject: dict[str, list[_SessionInfo]] = {}
    for info in sessions:
        by_subject.setdefault(info.subject_id, []).append(info)
    enrollment = {sid: min(infos, key=lambda s: (s.capture_date, s.session_id))
                  for sid, infos in by_subject.items()}

    pairs: list[ProtocolPair] = []
    for sid in sorted(by_subject):
        enr = enrollment[sid]
        if not _in_bucket(enr.age_weeks, age_bucket):
            continue
        for other_sid in sorted(by_subject):
            for probe in by_subject[other_sid]:
                if probe.capture_date <= enr.capture_date or probe.session_id == enr.session_id:
                    continue
                lapse = _lapse_weeks(enr, probe)
                if not _in_bucket(lapse, lapse_bucket):
                    continue
                pairs.append(ProtocolPair(
                    enrolled=enr.key, probe=probe.key,
                    label=GENUINE if other_sid == sid else IMPOSTER,
                    time_lapse_weeks=lapse, enrollment_age_weeks=enr.age_weeks))
    pairs.sort(key=lambda p: (p.label, p.enrolled, p.probe))
    if not pairs:
        warnings.warn("protocol bucket is empty", EvalWarning, stacklevel=2)
    return pairs


def load_session_records(entries: Sequence[ManifestEntry], base_dir) -> dict[SessionKey, SubjectRecord]:
    """Load templates grouped by (subject, session), validating metadata."""
    base = Path(base_dir)
    grouped: dict[SessionKey, list[Template]] = {}
    for e in entries:
        template = load_template(base / e.path)
        if template.subject_id != e.subject_id or template.session_id != e.session_id:
            raise ManifestError(
                f"template {e.path} carries ids ({template.subject_id}, {template.session_id}), "
                f"manifest says ({e.subject_id}, {e.session_id})")
        grouped.setdefault((e.subject_id, e.session_id), []).append(template)
    return {key: SubjectRecord(subject_id=key[0], templates=tuple(ts))
            for key, ts in sorted(grouped.items())}


def template_pairs(pair: ProtocolPair,
                   records: dict[SessionKey, SubjectRecord]) -> list[tuple[Template, Template]]:
    """Same-thumb (enrolled, probe) template combinations for one protocol pair."""
    out = []
    for thumb in (Thumb.LEFT, Thumb.RIGHT):
        enrolled_side = [t for t in records[pair.enrolled].templates if t.thumb is thumb]
        probe_side = [t for t in records[pair.probe].templates if t.thumb is thumb]
        for et in enrolled_side:
            for pt in probe_side:
                out.append((et, pt))
    return out


def score_protocol(pairs: Sequence[ProtocolPair], records: dict[SessionKey, SubjectRecord],
                   weights: FusionWeights, bounds: NormalizationBounds, params: MatchParams,
                   policy: AgingPolicy, jobs: int = 1,
                   external_fn=None) -> dict[tuple[SessionKey, SessionKey], AuthResult]:
    """Authenticate every unique (enrolled, probe) combination in the protocol."""
    keys = sorted({(p.enrolled, p.probe) for p in pairs})

    def score_one(key):
        enrolled_key, probe_key = key
        return authenticate_detail(records[probe_key], records[enrolled_key],
                                   weights, bounds, params, policy, external_fn)

    if jobs <= 1 or len(keys) < 4:
        results = [score_one(k) for k in keys]
    else:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(
                _ScoreTask(records, weights, bounds, params, policy), keys, chunksize=16))
    return dict(zip(keys, results))


class _ScoreTask:
    """Picklable scoring callable for the process pool."""

    def __init__(self, records, weights, bounds, params, policy):
        self.records = records
        self.weights = weights
        self.bounds = bounds
        self.params = params
        self.policy = policy

    def __call__(self, key):
        enrolled_key, probe_key = key
        return authenticate_detail(self.records[probe_key], self.records[enrolled_key],
                                   self.weights, self.bounds, self.params, self.policy)


def tar_at_far(genuine: Sequence[float], imposter: Sequence[float],
               far_target: float) -> tuple[float, float]:
    """True accept rate at the smallest threshold whose FAR is within target.

    Acceptance is score >= threshold. The threshold returned sits just above
    the highest imposter score that must be rejected, which maximizes TAR
    subject to FAR <= far_target.
    """
    gen = np.asarray(genuine, dtype=np.float64)
    imp = np.asarray(imposter, dtype=np.float64)
    if gen.size == 0 or imp.size == 0:
        raise ValidationError("tar_at_far requires non-empty genuine and imposter lists")
    if not (0.0 < far_target < 1.0):
        raise ValidationError(f"far_target must lie in (0, 1), got {far_target!r}")
    allowed = int(math.floor(far_target * imp.size + 1e-12))
    imp_desc = np.sort(imp)[::-1]
    critical = imp_desc[allowed]  # highest imposter score that must be rejected
    threshold = float(np.nextafter(critical, np.inf))
    tar = float(np.mean(gen >= threshold))
    return tar, threshold


def eer(genuine: Sequence[float], imposter: Sequence[float]) -> float:
    """Equal error rate, linearly interpolated between operating points."""
    gen = np.sort(np.asarray(genuine, dtype=np.float64))
    imp = np.sort(np.asarray(imposter, dtype=np.float64))
    if gen.size == 0 or imp.size == 0:
        raise ValidationError("eer requires non-empty genuine and imposter lists")
    thresholds = np.unique(np.concatenate([gen, imp]))
    thresholds = np.append(thresholds, np.nextafter(thresholds[-1], np.inf))
    far = (imp.size - np.searchsorted(imp, thresholds, side="left")) / imp.size
    frr = np.searchsorted(gen, thresholds, side="left") / gen.size
    diff = far - frr
    idx = int(np.argmax(diff <= 0.0))
    if diff[idx] == 0.0:
        return float(far[idx])
    d1, d2 = diff[idx - 1], diff[idx]
    s = d1 / (d1 - d2)
    return float(far[idx - 1] + (far[idx] - far[idx - 1]) * s)


def cmc(ranks: Sequence[int], k: int) -> float:
    """Fraction of probes whose true mate ranks within the top k."""
    if not ranks:
        raise ValidationError("cmc requires at least one ranked probe")
    if k < 1:
        raise ValidationError("k must be at least 1")
    arr = np.asarray(ranks, dtype=np.int64)
    return float(np.mean(arr <= k))


def mate_ranks(scores: dict[tuple[SessionKey, SessionKey], float],
               probes: Sequence[SessionKey]) -> dict[SessionKey, int]:
    """Rank of each probe's own subject among all enrolled candidates.

    Candidates are every enrolled key scored against the probe; ties break
    lexicographically on subject id. Probes without their mate in the
    candidate set are excluded with a warning.
    """
    by_probe: dict[SessionKey, list[tuple[float, str, SessionKey]]] = {}
    for (enrolled_key, probe_key), score in scores.items():
        by_probe.setdefault(probe_key, []).append((score, enrolled_key[0], enrolled_key))
    out: dict[SessionKey, int] = {}
    for probe_key in probes:
        candidates = by_probe.get(probe_key, [])
        candidates.sort(key=lambda item: (-item[0], item[1]))
        rank = None
        for i, (_, subject_id, _) in enumerate(candidates):
            if subject_id == probe_key[0]:
                rank = i + 1
                break
        if rank is None:
            warnings.warn(f"probe {probe_key} has no gallery mate; excluded", EvalWarning,
                          stacklevel=2)
            continue
        out[probe_key] = rank
    return out


def calibrate_weights(genuine_bundles: Sequence[ScoreBundle],
                      imposter_bundles: Sequence[ScoreBundle],
                      far_target: float = 0.01, grid_step: float = 0.05) -> FusionWeights:
    """Exhaustive simplex grid search maximizing TAR at the FAR target.

    Bundles must already be normalized. Ties prefer more minutiae weight,
    then more external weight.
    """
    if not genuine_bundles or not imposter_bundles:
        raise ValidationError("calibration requires non-empty genuine and imposter bundles")
    steps = round(1.0 / grid_step)
    if abs(steps * grid_step - 1.0) > 1e-9:
        raise ValidationError(f"grid_step {grid_step} must divide 1")

    best: Optional[tuple[float, float, float, FusionWeights]] = None
    for i in range(steps + 1):
        for j in range(steps + 1 - i):
            lam_m = i / steps
            lam_t = j / steps
            lam_l = (steps - i - j) / steps
            weights = FusionWeights(lam_m, lam_t, lam_l)
            try:
                gen = [fuse_scores(b, weights) for b in genuine_bundles]
                imp = [fuse_scores(b, weights) for b in imposter_bundles]
            except ValidationError:
                continue  # all weight on missing slots
            tar, _ = tar_at_far(gen, imp, far_target)
            key = (tar, lam_m, lam_l)
            if best is None or key > (best[0], best[1], best[2]):
                best = (tar, lam_m, lam_l, weights)
    if best is None:
        raise ValidationError("degenerate validation bundles: no weight assignment is feasible")
    return best[3]


@dataclass(frozen=True)
class EvalParams:
    far_targets: tuple[float, ...] = (0.001, 0.01)
    age_buckets_weeks: tuple[tuple[int, int], ...] = ((0, 5), (5, 9), (9, 13))
    lapse_buckets_weeks: tuple[tuple[int, int], ...] = ((1, 26), (26, 39), (39, 53))

    def __post_init__(self) -> None:
        for target in self.far_targets:
            if not (0.0 < target < 1.0):
                raise ValidationError("far targets must lie in (0, 1)")
        for buckets in (self.age_buckets_weeks, self.lapse_buckets_weeks):
            for lo, hi in buckets:
                if hi <= lo:
                    raise ValidationError("bucket bounds must satisfy hi > lo")


@dataclass
class BucketResult:
    age_bucket: Optional[tuple[int, int]]
    lapse_bucket: Optional[tuple[int, int]]
    n_subjects: int
    n_genuine: int
    n_imposter: int
    tar_by_far: dict[float, Optional[float]]
    rank1: Optional[float]
    rank5: Optional[float]


@dataclass
class EvalReport:
    pairs: list[ProtocolPair]
    scores: dict[tuple[SessionKey, SessionKey], float]
    ranks: dict[SessionKey, int]
    buckets: list[BucketResult]
    far_targets: tuple[float, ...]


def _bucket_metrics(pairs: Sequence[ProtocolPair], scores, ranks,
                    age_bucket, lapse_bucket, far_targets) -> BucketResult:
    selected = [p for p in pairs
                if _in_bucket(p.enrollment_age_weeks, age_bucket)
                and _in_bucket(p.time_lapse_weeks, lapse_bucket)]
    genuine = [scores[(p.enrolled, p.probe)] for p in selected if p.label == GENUINE]
    imposter = [scores[(p.enrolled, p.probe)] for p in selected if p.label == IMPOSTER]
    probe_keys = sorted({p.probe for p in selected if p.label == GENUINE})
    subjects = {p.enrolled[0] for p in selected if p.label == GENUINE}

    tar_by_far: dict[float, Optional[float]] = {}
    for target in far_targets:
        if genuine and imposter:
            tar_by_far[target] = tar_at_far(genuine, imposter, target)[0]
        else:
            tar_by_far[target] = None
    bucket_ranks = [ranks[key] for key in probe_keys if key in ranks]
    rank1 = cmc(bucket_ranks, 1) if bucket_ranks else None
    rank5 = cmc(bucket_ranks, 5) if bucket_ranks else None
    return BucketResult(age_bucket, lapse_bucket, len(subjects), len(genuine), len(imposter),
                        tar_by_far, rank1, rank5)


def evaluate_manifest(manifest_path, weights: FusionWeights, bounds: NormalizationBounds,
                      params: MatchParams, policy: AgingPolicy,
                      eval_params: EvalParams = EvalParams(), jobs: int = 1) -> EvalReport:
    """Full evaluation: protocol, score matrix, ranks, per-bucket metrics."""
    manifest_path = Path(manifest_path)
    entries = parse_manifest(manifest_path)
    records = load_session_records(entries, manifest_path.parent)
    pairs = build_protocol(entries)
    results = score_protocol(pairs, records, weights, bounds, params, policy, jobs=jobs)
    scores = {key: res.score for key, res in results.items()}
    genuine_probes = sorted({p.probe for p in pairs if p.label == GENUINE})
    ranks = mate_ranks(scores, genuine_probes)

    buckets = [
        _bucket_metrics(pairs, scores, ranks, age_bucket, lapse_bucket, eval_params.far_targets)
        for age_bucket in eval_params.age_buckets_weeks
        for lapse_bucket in eval_params.lapse_buckets_weeks
    ]
    buckets.append(_bucket_metrics(pairs, scores, ranks, None, None, eval_params.far_targets))
    return EvalReport(pairs=list(pairs), scores=scores, ranks=ranks, buckets=buckets,
                      far_targets=eval_params.far_targets)


def _bucket_name(bucket: Optional[tuple[int, int]]) -> str:
    return "all" if bucket is None else f"{bucket[0]}-{bucket[1]}"


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.6f}"


def render_csv(report: EvalReport) -> str:
    """Bit-stable CSV rendering of the per-bucket metrics."""
    header = ["age_bucket_weeks", "lapse_bucket_weeks", "subjects", "genuine_pairs", "imposter_pairs"]
    header += [f"tar_at_far_{target:g}" for target in report.far_targets]
    header += ["rank1", "rank5"]
    lines = [",".join(header)]
    for b in report.buckets:
        row = [_bucket_name(b.age_bucket), _bucket_name(b.lapse_bucket),
               str(b.n_subjects), str(b.n_genuine), str(b.n_imposter)]
        row += [_fmt(b.tar_by_far[t]) for t in report.far_targets]
        row += [_fmt(b.rank1), _fmt(b.rank5)]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def render_table(report: EvalReport) -> str:
    """Aligned-column text table of the same rows as the CSV."""
    rows = [line.split(",") for line in render_csv(report).strip().split("\n")]
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    out_lines = []
    for r in rows:
        out_lines.append("  ".join(cell.rjust(widths[i]) for i, cell in enumerate(r)))
    return "\n".join(out_lines) + "\n"
