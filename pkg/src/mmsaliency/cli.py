"""Command-line toolkit: synth | mi | saliency | metrics | stats | report.

Every output listed in the format contracts (MMV, CSV, SVG) is a deterministic
function of the inputs and seed; measured wall times live only in the runlog
JSON files.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import report as report_mod
from .ablate import AblationPolicy, AblationVariant, shapley_mi
from .metrics import (
    MetricRecord,
    ScoreMatrix,
    estimated_mi,
    friedman,
    iou,
    kendall_tau_b,
    msfi,
    nemenyi,
)
from .oracle import ExternalCommandOracle, ShapeRuleClassifier
from .saliency import MethodConfig, SaliencyMethod, generate_maps, postprocess
from .synthgen import SynthConfig, generate_dataset, generate_probe
from .tensorio import load_dataset, load_manifest, read_saliency, write_saliency

_POLICIES = {
    "zero": AblationVariant.ZERO_WHOLE_MODALITY,
    "nonlesion": AblationVariant.NONLESION_SAMPLE_WHOLE_MODALITY,
    "feature": AblationVariant.ZERO_FEATURE_REGION,
}


def _parse_named_floats(text, modality_names, what):
    """Parse 't1:0.5,t1c:1.0,...' onto the modality order (case-insensitive)."""
    by_name = {}
    for part in text.split(","):
        if not part:
            continue
        try:
            name, value = part.split(":")
            by_name[name.strip().upper()] = float(value)
        except ValueError:
            raise SystemExit(f"cannot parse {what} entry {part!r} (want name:value)")
    upper = [n.upper() for n in modality_names]
    missing = [n for n in by_name if n not in upper]
    if missing:
        raise SystemExit(f"{what} names {missing} not in modalities {modality_names}")
    return by_name, upper


def _alignment_vector(text, modality_names, default):
    by_name, upper = _parse_named_floats(text, modality_names, "--align")
    return tuple(by_name.get(n, d) for n, d in zip(upper, default))


def _weights_vector(text, modality_names):
    by_name, upper = _parse_named_floats(text, modality_names, "--weights")
    return tuple(by_name.get(n, 0.0) for n in upper)


def _build_oracle(args, modality_names):
    spec = args.oracle
    if spec.startswith("cmd:"):
        return ExternalCommandOracle(spec[4:])
    if spec != "builtin":
        raise SystemExit("--oracle must be 'builtin' or 'cmd:<template>'")
    weights = _weights_vector(args.weights, modality_names)
    return ShapeRuleClassifier(
        weights,
        intensity_threshold=args.threshold,
        circularity_cutoff=args.cutoff,
        softness=args.softness,
    )


def _add_oracle_args(parser):
    parser.add_argument(
        "--oracle",
        default="builtin",
        help="'builtin' shape classifier or 'cmd:<template>' with {input_dir} {output_csv}",
    )
    parser.add_argument(
        "--weights",
        default="t1:0,t1c:1,t2:0,flair:1",
        help="builtin classifier modality weights, name:value pairs",
    )
    parser.add_argument("--threshold", type=float, default=0.35)
    parser.add_argument("--cutoff", type=float, default=0.7)
    parser.add_argument("--softness", type=float, default=0.08)


def _write_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fp:
        csv.writer(fp, lineterminator="\n").writerows(rows)


def cmd_synth_generate(args):
    cfg = SynthConfig(
        n_samples=args.n,
        image_size=args.size,
        alignment=_alignment_vector(
            args.align, SynthConfig.modality_names, SynthConfig.alignment
        ),
        background=args.background,
        seed=args.seed,
    )
    manifest = generate_dataset(cfg, args.out)
    print(f"wrote {len(manifest)} samples to {args.out}")


def cmd_synth_probe(args):
    cfg = SynthConfig(n_samples=args.n, image_size=args.size, seed=args.seed)
    manifest = generate_probe(cfg, args.which, args.out)
    print(f"wrote {args.which.upper()} probe ({len(manifest)} samples) to {args.out}")


def cmd_mi_compute(args):
    manifest = load_manifest(args.manifest)
    samples = load_dataset(manifest)
    names = samples[0].volume.modality_names
    oracle = _build_oracle(args, names)
    policy = AblationPolicy(_POLICIES[args.policy], rng_seed=args.seed)
    mi = shapley_mi(samples, oracle, policy)
    rows = [["modality", "phi", "normalized", "variant"]]
    for name, phi, norm in zip(names, mi.phi, mi.normalized):
        rows.append([name, repr(phi), repr(norm), mi.variant])
    _write_csv(args.out, rows)
    print(f"wrote modality importance ({mi.variant}) to {args.out}")


def _parse_params(text):
    params = {}
    if not text:
        return params
    casts = {
        "window": int,
        "stride": int,
        "block_shape": int,
        "n_samples": int,
        "target_class": int,
        "ridge_lambda": float,
        "kernel_width": float,
        "exhaustive": lambda v: v.lower() in ("1", "true", "yes"),
    }
    for part in text.split(","):
        if not part:
            continue
        try:
            key, value = part.split("=")
        except ValueError:
            raise SystemExit(f"cannot parse --params entry {part!r} (want key=value)")
        key = key.strip()
        if key not in casts:
            raise SystemExit(f"unknown method param {key!r}")
        params[key] = casts[key](value.strip())
    return params


def cmd_saliency_run(args):
    manifest = load_manifest(args.manifest)
    samples = load_dataset(manifest)
    names = samples[0].volume.modality_names
    oracle = _build_oracle(args, names)
    try:
        method = SaliencyMethod(args.method)
    except ValueError:
        raise SystemExit(
            f"unknown method {args.method!r}; choose from "
            f"{[m.value for m in SaliencyMethod]}"
        )
    cfg = MethodConfig(method=method, rng_seed=args.seed, **_parse_params(args.params))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    maps, runlog = generate_maps(samples, oracle, cfg)
    files = {}
    for s in samples:
        path = out_dir / f"{s.record.sample_id}_{method.value}.mmv"
        write_saliency(maps[s.record.sample_id], path)
        files[s.record.sample_id] = path.name
    runlog["files"] = files
    with open(out_dir / f"runlog_{method.value}.json", "w", encoding="utf-8") as fp:
        json.dump(runlog, fp, indent=2, sort_keys=True)
        fp.write("\n")
    print(f"wrote {len(files)} {method.value} maps to {out_dir}")


def _load_mi_csv(path):
    with open(path, encoding="utf-8", newline="") as fp:
        reader = csv.reader(fp)
        header = next(reader)
        if header != ["modality", "phi", "normalized", "variant"]:
            raise SystemExit(f"{path}: unexpected mi.csv header {header}")
        names, phi, norm = [], [], []
        for row in reader:
            names.append(row[0])
            phi.append(float(row[1]))
            norm.append(float(row[2]))
    return names, np.array(phi), np.array(norm)


def _iter_runlogs(saliency_dir):
    saliency_dir = Path(saliency_dir)
    paths = sorted(saliency_dir.glob("runlog_*.json"))
    if not paths:
        raise SystemExit(f"no runlog_*.json found in {saliency_dir}")
    for p in paths:
        with open(p, encoding="utf-8") as fp:
            yield p.parent, json.load(fp)


def cmd_metrics(args):
    manifest = load_manifest(args.manifest)
    samples = load_dataset(manifest)
    phi = norm = None
    if args.metric in ("msfi", "mi-corr"):
        if not args.mi:
            raise SystemExit(f"--mi is required for {args.metric}")
        _, phi, norm = _load_mi_csv(args.mi)
    rows = [["sample_id", "method", "metric", "value"]]
    for directory, runlog in _iter_runlogs(args.saliency_dir):
        method = runlog["method"]
        for s in samples:
            fname = runlog["files"].get(s.record.sample_id)
            if fname is None:
                raise SystemExit(f"{method}: no saliency file for {s.record.sample_id}")
            if args.metric in ("msfi", "iou") and s.mask is None:
                raise SystemExit(f"{s.record.sample_id}: {args.metric} needs a mask")
            smap = read_saliency(directory / fname)
            if args.metric == "msfi":
                value = msfi(postprocess(smap), s.mask, norm)
                metric = "msfi"
            elif args.metric == "mi-corr":
                value = kendall_tau_b(estimated_mi(smap), phi)
                metric = "mi_corr"
            else:
                value = iou(postprocess(smap), s.mask, threshold=args.iou_threshold)
                metric = "iou"
            rows.append([s.record.sample_id, method, metric, repr(value)])
    _write_csv(args.out, rows)
    if args.metric == "mi-corr":
        meta = {"metric": "mi_corr", "estimated_mi_source": "raw_positive_part"}
        with open(f"{args.out}.meta.json", "w", encoding="utf-8") as fp:
            json.dump(meta, fp, indent=2, sort_keys=True)
            fp.write("\n")
    print(f"wrote {len(rows) - 1} scores to {args.out}")


def _read_scores(path, metric=None):
    records = []
    with open(path, encoding="utf-8", newline="") as fp:
        reader = csv.reader(fp)
        header = next(reader)
        if header != ["sample_id", "method", "metric", "value"]:
            raise SystemExit(f"{path}: unexpected scores header {header}")
        for sid, method, met, value in reader:
            if metric is None or met == metric:
                records.append(MetricRecord(sid, method, met, float(value)))
    return records


def cmd_stats_friedman(args):
    records = _read_scores(args.scores, metric=args.metric)
    if not records:
        raise SystemExit(f"no {args.metric!r} rows in {args.scores}")
    methods = sorted({r.method for r in records})
    sample_ids = sorted({r.sample_id for r in records})
    table = {(r.sample_id, r.method): r.value for r in records}
    try:
        values = np.array(
            [[table[(sid, m)] for m in methods] for sid in sample_ids]
        )
    except KeyError as exc:
        raise SystemExit(f"score matrix incomplete: missing cell {exc}")
    matrix = ScoreMatrix(values, tuple(methods), tuple(sample_ids))
    try:
        chi2, df, p = friedman(matrix)
        nem = nemenyi(matrix)
    except ValueError as exc:
        raise SystemExit(f"friedman: {exc}")
    print(f"friedman metric={args.metric} n={len(sample_ids)} k={len(methods)}")
    print(f"chi2={chi2:.6f} df={df} p={p:.6g}")
    print(f"nemenyi cd={nem.critical_difference:.6f}")
    for name, rank in zip(methods, nem.mean_ranks):
        print(f"mean_rank {name} {rank:.4f}")
    for i in range(len(methods)):
        for j in range(i + 1, len(methods)):
            if nem.significant[i, j]:
                print(f"significant {methods[i]} vs {methods[j]}")


def _load_wall_times(runlog_arg):
    path = Path(runlog_arg)
    paths = sorted(path.glob("runlog_*.json")) if path.is_dir() else [path]
    wall = {}
    for p in paths:
        with open(p, encoding="utf-8") as fp:
            doc = json.load(fp)
        wall[doc["method"]] = list(doc["wall_time"].values())
    return wall


def cmd_report_matrix(args):
    records = _read_scores(args.scores)
    wall = _load_wall_times(args.runlog) if args.runlog else None
    summaries = report_mod.summarize(records, wall)
    svg = report_mod.render_matrix(summaries)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fp:
        fp.write(svg)
    if args.csv:
        _write_csv(args.csv, report_mod.summary_csv_rows(summaries))
    order = ", ".join(s.method for s in summaries)
    print(f"wrote matrix ({order}) to {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mmsaliency",
        description="Saliency-map evaluation toolkit for multi-modal images",
    )
    sub = parser.add_subparsers(dest="group", required=True)

    synth = sub.add_parser("synth", help="synthetic dataset generation")
    synth_sub = synth.add_subparsers(dest="command", required=True)
    gen = synth_sub.add_parser("generate", help="controllable multi-modal dataset")
    gen.add_argument("--n", type=int, default=200)
    gen.add_argument("--size", type=int, default=64)
    gen.add_argument("--align", default="", help="t1:0.5,t1c:1.0,t2:0.5,flair:0.7")
    gen.add_argument("--background", default="brain_texture", choices=["brain_texture", "none"])
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_synth_generate)
    probe = synth_sub.add_parser("probe", help="tumor-only probe dataset")
    probe.add_argument("--which", required=True, choices=["t1c", "flair"])
    probe.add_argument("--n", type=int, default=200)
    probe.add_argument("--size", type=int, default=64)
    probe.add_argument("--seed", type=int, default=0)
    probe.add_argument("--out", required=True)
    probe.set_defaults(func=cmd_synth_probe)

    mi = sub.add_parser("mi", help="ground-truth modality importance")
    mi_sub = mi.add_subparsers(dest="command", required=True)
    compute = mi_sub.add_parser("compute", help="exact Shapley modality importance")
    compute.add_argument("--manifest", required=True)
    compute.add_argument("--policy", default="zero", choices=sorted(_POLICIES))
    compute.add_argument("--seed", type=int, default=0, help="nonlesion sampling seed")
    compute.add_argument("--out", required=True)
    _add_oracle_args(compute)
    compute.set_defaults(func=cmd_mi_compute)

    sal = sub.add_parser("saliency", help="perturbation saliency maps")
    sal_sub = sal.add_subparsers(dest="command", required=True)
    run = sal_sub.add_parser("run", help="generate maps for every sample")
    run.add_argument("--manifest", required=True)
    run.add_argument("--method", required=True)
    run.add_argument("--params", default="", help="k=v,... method parameters")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out-dir", required=True)
    _add_oracle_args(run)
    run.set_defaults(func=cmd_saliency_run)

    met = sub.add_parser("metrics", help="score saliency maps")
    met_sub = met.add_subparsers(dest="command", required=True)
    for name in ("msfi", "mi-corr", "iou"):
        p = met_sub.add_parser(name)
        p.add_argument("--manifest", required=True)
        p.add_argument("--saliency-dir", required=True)
        p.add_argument("--mi", default=None, help="mi.csv from `mi compute`")
        p.add_argument("--iou-threshold", type=float, default=0.5)
        p.add_argument("--out", required=True)
        p.set_defaults(func=cmd_metrics, metric=name)

    stats = sub.add_parser("stats", help="method-comparison statistics")
    stats_sub = stats.add_subparsers(dest="command", required=True)
    fr = stats_sub.add_parser("friedman", help="Friedman test plus Nemenyi post hoc")
    fr.add_argument("--scores", required=True)
    fr.add_argument("--metric", default="msfi")
    fr.set_defaults(func=cmd_stats_friedman)

    rep = sub.add_parser("report", help="summaries and figures")
    rep_sub = rep.add_subparsers(dest="command", required=True)
    mat = rep_sub.add_parser("matrix", help="comparison-matrix SVG + summary CSV")
    mat.add_argument("--scores", required=True)
    mat.add_argument("--runlog", default=None, help="runlog json file or directory")
    mat.add_argument("--out", required=True)
    mat.add_argument("--csv", default=None)
    mat.set_defaults(func=cmd_report_matrix)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
