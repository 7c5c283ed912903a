"""Command-line entry point.

Subcommands: enroll, match, search, eval, synth, calibrate. Configuration
comes from built-in defaults, optionally a ``--config`` file, then repeated
``--set key=value`` overrides, in increasing precedence.

Exit codes: 0 success, 1 usage error, 2 data error, 3 external matcher
failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import config as config_mod
from .aging import age_minutiae_set, select_scale_factor
from .core import Gender, Template, Thumb, ValidationError
from .evaluate import (
    GENUINE,
    ManifestError,
    build_protocol,
    calibrate_weights,
    evaluate_manifest,
    load_session_records,
    parse_manifest,
    render_csv,
    render_table,
    score_protocol,
)
from .extract import extract_from_image
from .iptf import TemplateCodecError, load_template, save_template
from .match import SubjectRecord, authenticate, external_match, fallback_embedding, search as gallery_search
from .pgm import PgmFormatError, read_pgm
from .synth import PROFILES, build_benchmark

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_EXTERNAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); keep our contract
        raise UsageError(message)


def _load_config(args) -> config_mod.Config:
    cfg = config_mod.Config()
    if args.config:
        cfg = config_mod.load_file(args.config, cfg)
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    return config_mod.apply_overrides(cfg, overrides)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="configuration file (key = value lines)")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key; repeatable")


def build_parser() -> _Parser:
    parser = _Parser(prog="infantfp", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("enroll", help="extract minutiae from images and write templates")
    _add_common(p)
    p.add_argument("images", nargs="+", help="PGM (P5) fingerprint images")
    p.add_argument("--ppi", type=int, help="image resolution; else read from the PGM header")
    p.add_argument("--subject", required=True)
    p.add_argument("--session", required=True)
    p.add_argument("--thumb", required=True, choices=[t.value for t in Thumb])
    p.add_argument("--gender", default="unknown", choices=[g.value for g in Gender])
    p.add_argument("--age-weeks", required=True, type=int)
    p.add_argument("--out-dir", default=".", help="directory for .iptf templates")
    p.add_argument("--embedding", default="fallback", choices=["fallback", "none"],
                   help="attach the hand-crafted texture embedding or skip it")
    p.add_argument("--minutiae-text", action="store_true",
                   help="also write <stem>.txt with 'x y theta_degrees type' lines")

    p = sub.add_parser("match", help="fused comparison of probe vs enrolled templates")
    _add_common(p)
    p.add_argument("--probe", nargs="+", required=True, help="probe template files")
    p.add_argument("--enrolled", nargs="+", required=True, help="enrolled template files")

    p = sub.add_parser("search", help="rank a gallery manifest against probe templates")
    _add_common(p)
    p.add_argument("--probe", nargs="+", required=True, help="probe template files")
    p.add_argument("--manifest", required=True, help="gallery dataset manifest")
    p.add_argument("--top", type=int, default=10)

    p = sub.add_parser("eval", help="run the longitudinal evaluation over a manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("synth", help="generate a synthetic longitudinal benchmark")
    _add_common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--sessions", type=int, default=2)
    p.add_argument("--profile", default="mild", choices=sorted(PROFILES))
    p.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("calibrate", help="grid-search fusion weights on a validation manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--far-target", type=float, default=0.01)
    p.add_argument("--grid-step", type=float, default=0.05)
    p.add_argument("--jobs", type=int, default=1)
    return parser


def cmd_enroll(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    warned = False
    for image_path in args.images:
        img = read_pgm(image_path, ppi=args.ppi)
        minutiae, labeled = extract_from_image(img, cfg.extract)
        factor = select_scale_factor(args.age_weeks, cfg.aging)
        aged = factor != 1.0
        if aged:
            minutiae = age_minutiae_set(minutiae, factor)
        embedding = fallback_embedding(img) if args.embedding == "fallback" else None
        template = Template(
            subject_id=args.subject, thumb=Thumb(args.thumb), session_id=args.session,
            age_weeks_at_capture=args.age_weeks, gender=Gender(args.gender),
            minutiae=minutiae, embedding=embedding, aged=aged)
        out_path = out_dir / (Path(image_path).stem + ".iptf")
        save_template(template, out_path)
        if args.minutiae_text:
            text_path = out_dir / (Path(image_path).stem + ".txt")
            with open(text_path, "w", encoding="utf-8") as fh:
                for m, kind in labeled:
                    scale = factor if aged else 1.0
                    fh.write(f"{m.x * scale:.3f} {m.y * scale:.3f} {math.degrees(m.theta):.2f} {kind}\n")
        if len(minutiae) == 0:
            print(f"warning: {image_path}: extraction found no minutiae", file=sys.stderr)
            warned = True
        print(f"wrote {out_path}: {len(minutiae)} minutiae, aged={str(aged).lower()}")
    if warned:
        print("warning: one or more templates contain no minutiae", file=sys.stderr)
    return EXIT_OK


def _records_from_templates(paths) -> SubjectRecord:
    templates = tuple(load_template(p) for p in paths)
    return SubjectRecord(subject_id=templates[0].subject_id, templates=templates)


def _external_fn_for(cfg: config_mod.Config, status: dict):
    connector = cfg.external_matcher()
    if connector is None:
        return None

    def fn(probe: Template, enrolled: Template):
        probe_img = status["paths"].get(id(probe))
        enrolled_img = status["paths"].get(id(enrolled))
        if probe_img is None or enrolled_img is None:
            return None
        status["attempted"] = True
        score = external_match(probe_img, enrolled_img, connector)
        if score is not None:
            status["succeeded"] = True
        return score

    return fn


def _sibling_images(templates, paths) -> dict[int, str]:
    out = {}
    for template, path in zip(templates, paths):
        candidate = Path(path).with_suffix(".pgm")
        if candidate.exists():
            out[id(template)] = str(candidate)
    return out


def cmd_match(args) -> int:
    cfg = _load_config(args)
    probe = _records_from_templates(args.probe)
    enrolled = _records_from_templates(args.enrolled)
    status = {"attempted": False, "succeeded": False, "paths": {}}
    status["paths"].update(_sibling_images(probe.templates, args.probe))
    status["paths"].update(_sibling_images(enrolled.templates, args.enrolled))
    external_fn = _external_fn_for(cfg, status)
    score = authenticate(probe, enrolled, cfg.weights, cfg.bounds, cfg.match, cfg.aging,
                         external_fn)
    print(f"{score:.4f}")
    if external_fn is not None and status["attempted"] and not status["succeeded"]:
        print("warning: external matcher produced no scores", file=sys.stderr)
        return EXIT_EXTERNAL
    return EXIT_OK


def cmd_search(args) -> int:
    cfg = _load_config(args)
    probe = _records_from_templates(args.probe)
    manifest_path = Path(args.manifest)
    entries = parse_manifest(manifest_path)
    records = load_session_records(entries, manifest_path.parent)
    first_session: dict[str, tuple] = {}
    for e in entries:
        key = (e.capture_date, e.session_id)
        if e.subject_id not in first_session or key < first_session[e.subject_id]:
            first_session[e.subject_id] = key
    gallery = [records[(sid, first_session[sid][1])] for sid in sorted(first_session)]
    ranked = gallery_search(probe, gallery, cfg.weights, cfg.bounds, cfg.match, cfg.aging)
    for cand in ranked[:args.top]:
        print(f"{cand.rank:4d}  {cand.subject_id}  {cand.fused_score:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    report = evaluate_manifest(args.manifest, cfg.weights, cfg.bounds, cfg.match, cfg.aging,
                               cfg.eval_params, jobs=args.jobs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_text = render_csv(report)
    table_text = render_table(report)
    (out_dir / "report.csv").write_text(csv_text, encoding="utf-8")
    (out_dir / "report.txt").write_text(table_text, encoding="utf-8")
    print(table_text, end="")
    return EXIT_OK


def cmd_synth(args) -> int:
    _load_config(args)  # synth has no tunables yet; still validate overrides
    manifest = build_benchmark(args.out_dir, n_subjects=args.subjects, sessions=args.sessions,
                               profile=args.profile, seed=args.seed)
    print(f"wrote {manifest}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    manifest_path = Path(args.manifest)
    entries = parse_manifest(manifest_path)
    records = load_session_records(entries, manifest_path.parent)
    pairs = build_protocol(entries)
    results = score_protocol(pairs, records, cfg.weights, cfg.bounds, cfg.match, cfg.aging,
                             jobs=args.jobs)
    genuine = [results[(p.enrolled, p.probe)].mean_bundle for p in pairs if p.label == GENUINE]
    imposter = [results[(p.enrolled, p.probe)].mean_bundle for p in pairs if p.label != GENUINE]
    weights = calibrate_weights(genuine, imposter, far_target=args.far_target,
                                grid_step=args.grid_step)
    print(f"weights.lambda_m = {weights.lambda_m}")
    print(f"weights.lambda_t = {weights.lambda_t}")
    print(f"weights.lambda_l = {weights.lambda_l}")
    return EXIT_OK


_COMMANDS = {
    "enroll": cmd_enroll,
    "match": cmd_match,
    "search": cmd_search,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "calibrate": cmd_calibrate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a command is required (enroll, match, search, eval, synth, calibrate)")
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, ManifestError, PgmFormatError, TemplateCodecError,
            config_mod.ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
