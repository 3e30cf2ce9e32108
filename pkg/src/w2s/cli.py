"""Command-line front end: run experiments, check bounds, rank weak models,
export serialized networks.

Exit codes: 0 success (and no hard violations for `check`), 1 hard bound
violations, 2 invalid configuration or input files, 3 runtime failure inside
a task.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .checks import (VERDICT_VIOLATED, check_nonrealizable_skeleton,
                     check_pythagorean, check_realizable_bound, check_triangle,
                     heuristic_rank, pythagorean_identity)
from .heads import predictor, sample_linear_task
from .io import (ConfigError, apply_overrides, bundled_config_path,
                 list_bundled_configs, load_config, load_result, write_run_outputs)
from .metrics import DataDistribution
from .nn import mlp_to_doc
from .pipeline import (TaskError, build_ground_truth, run_w2s_experiment,
                       task_check_stream)

CHECK_NAMES = ("realizable", "pythagoras", "triangle", "skeleton")

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _resolve_config_path(name_or_path: str) -> Path:
    path = Path(name_or_path)
    if path.is_file():
        return path
    bundled = bundled_config_path(name_or_path)
    if bundled is not None:
        return bundled
    raise ConfigError(
        f"config {name_or_path!r} is neither a file nor a bundled scenario "
        f"(bundled: {', '.join(list_bundled_configs())})")


def _load_run_config(args):
    path = _resolve_config_path(args.config)
    config = load_config(path)
    env_seed = os.environ.get("W2S_SEED")
    if env_seed is not None:
        try:
            config = apply_overrides(config, [f"master_seed={int(env_seed, 0)}"])
        except ValueError:
            raise ConfigError("W2S_SEED must be an integer") from None
    if args.set:
        config = apply_overrides(config, args.set)
    config.validate()
    return path, config


def cmd_run(args) -> int:
    try:
        path, config = _load_run_config(args)
    except ConfigError as e:
        return _fail(str(e), EXIT_CONFIG)
    try:
        result = run_w2s_experiment(config, jobs=args.jobs)
    except ConfigError as e:
        return _fail(str(e), EXIT_CONFIG)
    except TaskError as e:
        return _fail(str(e), EXIT_RUNTIME)
    realizable = config.rep_mode == "realizable_strong"
    reports = [check_realizable_bound(r, realizable=realizable,
                                      n_sigma=config.bound_tol_sigma)
               for r in result.records]
    out_dir = Path(args.out) if args.out else Path("runs") / config.experiment_id
    manifest = write_run_outputs(result, out_dir, config_path=str(path),
                                 config_bytes=path.read_bytes(),
                                 bound_reports=reports, embed_models=args.embed_models)
    gains = np.array([r.gain for r in result.records])
    misfits = np.array([r.misfit for r in result.records])
    print(f"{config.experiment_id}: {len(result.records)} tasks in {result.wall_seconds:.1f}s"
          f" -> {out_dir}")
    print(f"mean gain {gains.mean():.6g}  mean misfit {misfits.mean():.6g}"
          f"  records sha256 {manifest.records_csv_sha256[:16]}")
    return EXIT_OK


def _check_rows_realizable(doc, config, records):
    realizable = config.rep_mode == "realizable_strong"
    rows = []
    for rec in records:
        rep = check_realizable_bound(rec, realizable=realizable,
                                     n_sigma=config.bound_tol_sigma)
        rows.append({"check": "realizable", "task_id": rep.task_id, "lhs": rep.lhs,
                     "rhs": rep.rhs, "slack": rep.slack, "tolerance": rep.tolerance,
                     "verdict": rep.verdict, "informational": rep.informational})
    return rows


def _check_rows_skeleton(doc, config, records):
    rows = []
    for rec in records:
        if rec.epsilon_hat is None:
            rows.append({"check": "skeleton", "task_id": rec.task_id,
                         "verdict": "skipped", "informational": True,
                         "note": "no epsilon_hat recorded"})
            continue
        rep = check_nonrealizable_skeleton(rec, k1=config.skeleton_k1,
                                           kn=config.skeleton_kn,
                                           n_sigma=config.bound_tol_sigma)
        rows.append({"check": "skeleton", "task_id": rep.task_id, "lhs": rep.lhs,
                     "rhs": rep.rhs, "slack": rep.slack, "tolerance": rep.tolerance,
                     "budget": rep.budget, "required_slack": rep.required_slack,
                     "verdict": rep.verdict, "informational": True})
    return rows


def _task_predictors(doc, config, task_id):
    """Rebuild (true_fn, weak_fn, w2s_fn) for one task from a result doc."""
    h_star, task_sampler = build_ground_truth(config)
    weak_heads = doc.heads("weak")
    w2s_heads = doc.heads("w2s")
    h_w = doc.model("h_w")
    h_s = doc.model("h_s")
    true_fn = predictor(task_sampler(task_id), h_star)
    weak_fn = predictor(weak_heads[task_id], h_w)
    w2s_fn = predictor(w2s_heads[task_id], h_s)
    return true_fn, weak_fn, w2s_fn, h_s


def _check_rows_pythagoras(doc, config, records, n_probes, n_samples):
    if config.head_kind != "linear":
        return [{"check": "pythagoras", "verdict": "skipped", "informational": True,
                 "note": "projection structure is only exact for the linear head class"}]
    realizable = config.rep_mode == "realizable_strong"
    h_star, task_sampler = build_ground_truth(config)
    h_w = doc.model("h_w")
    h_s = doc.model("h_s")
    weak_heads = doc.heads("weak")
    dist = DataDistribution(config.input_dim, config.sigma)
    rows = []
    for rec in records:
        i = rec.task_id
        stream = task_check_stream(config, i)
        X = dist.sample(n_samples, stream.child(0))
        weak_fn = predictor(weak_heads[i], h_w)
        weak_vals = weak_fn(X)
        a, b, c, fitted = pythagorean_identity(
            predictor(task_sampler(i), h_star), weak_fn, h_s, X, bias=config.head_bias)
        features = h_s.forward(X)
        proj = fitted(features)
        scale_res = float(np.sqrt(np.mean((proj - weak_vals) ** 2)))
        worst = 0.0
        for j in range(n_probes):
            probe = sample_linear_task(config.rep_dim, stream.child(1, j))
            cross = check_pythagorean(weak_fn, h_s, probe, X,
                                      w2s_head=fitted, bias=config.head_bias)
            probe_vals = probe(features)
            scale = float(np.sqrt(np.mean((probe_vals - proj) ** 2))) * scale_res
            worst = max(worst, abs(cross) / max(scale, 1e-300))
        row = {"check": "pythagoras", "task_id": i, "max_rel_cross": worst,
               "tolerance": 1e-8, "informational": False,
               "verdict": "holds" if worst <= 1e-8 else VERDICT_VIOLATED}
        if realizable:
            rel_identity = abs(b - (a + c)) / max(b, 1e-300)
            row["rel_identity_gap"] = rel_identity
            if rel_identity > 1e-8:
                row["verdict"] = VERDICT_VIOLATED
        rows.append(row)
    return rows


def _check_rows_triangle(doc, config, records, n_samples):
    dist = DataDistribution(config.input_dim, config.sigma)
    rows = []
    for rec in records:
        i = rec.task_id
        true_fn, weak_fn, w2s_fn, _ = _task_predictors(doc, config, i)
        X = dist.sample(n_samples, task_check_stream(config, i).child(2))
        ok = check_triangle(w2s_fn, true_fn, weak_fn, X)
        rows.append({"check": "triangle", "task_id": i, "informational": False,
                     "verdict": "holds" if ok else VERDICT_VIOLATED})
    return rows


def cmd_check(args) -> int:
    try:
        doc = load_result(args.result)
        config = doc.config()
        records = doc.records()
    except (OSError, ValueError, KeyError, ConfigError) as e:
        return _fail(str(e), EXIT_CONFIG)
    names = [n.strip() for n in args.checks.split(",") if n.strip()]
    for n in names:
        if n not in CHECK_NAMES:
            return _fail(f"unknown check {n!r} (available: {', '.join(CHECK_NAMES)})",
                         EXIT_CONFIG)
    rows = []
    try:
        for n in names:
            if n == "realizable":
                rows += _check_rows_realizable(doc, config, records)
            elif n == "skeleton":
                rows += _check_rows_skeleton(doc, config, records)
            elif n == "pythagoras":
                rows += _check_rows_pythagoras(doc, config, records,
                                               args.probes, args.samples)
            elif n == "triangle":
                rows += _check_rows_triangle(doc, config, records, args.samples)
    except FileNotFoundError as e:
        return _fail(str(e), EXIT_CONFIG)

    hard_violations = sum(1 for r in rows
                          if r["verdict"] == VERDICT_VIOLATED and not r.get("informational"))
    for r in rows:
        bits = [f"{r['check']:<11}", f"task {r.get('task_id', '-'):>4}"]
        for key in ("lhs", "rhs", "slack", "tolerance", "max_rel_cross",
                    "rel_identity_gap", "budget"):
            if key in r:
                bits.append(f"{key}={r[key]:.6g}")
        bits.append(f"[{r['verdict']}{' info' if r.get('informational') else ''}]")
        if "note" in r:
            bits.append(f"({r['note']})")
        print("  ".join(bits))
    print(f"{len(rows)} checks, {hard_violations} hard violations")
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump({"rows": rows, "hard_violations": hard_violations}, fh, indent=1)
            fh.write("\n")
    return EXIT_VIOLATIONS if hard_violations else EXIT_OK


def cmd_rank(args) -> int:
    if len(args.results) < 2:
        return _fail("rank compares weak models across result files; give at least two",
                     EXIT_CONFIG)
    try:
        docs = [load_result(p) for p in args.results]
    except (OSError, ValueError) as e:
        return _fail(str(e), EXIT_CONFIG)
    fingerprints = {d.gt_fingerprint for d in docs}
    if len(fingerprints) > 1:
        return _fail("results come from different ground truths (fingerprint mismatch)",
                     EXIT_CONFIG)
    groups: dict[str, list] = {}
    for d in docs:
        for rec in d.records():
            groups.setdefault(rec.weak_model_id, []).append(rec)
    entries, coincides = heuristic_rank(groups)
    print(f"{'weak model':<24} {'gap (weak err - misfit)':>28} {'w2s true err':>24} {'n':>5}")
    for e in entries:
        print(f"{e.weak_model_id:<24} {e.mean_gap:>17.6g} +/- {e.std_gap:<8.4g}"
              f" {e.mean_true_err:>13.6g} +/- {e.std_true_err:<8.4g} {e.count:>3}")
    print(f"smallest gap also has the smallest true error: {'yes' if coincides else 'no'}")
    if args.json_out:
        doc = {"coincides": coincides,
               "entries": [dict(weak_model_id=e.weak_model_id, mean_gap=e.mean_gap,
                                std_gap=e.std_gap, mean_true_err=e.mean_true_err,
                                std_true_err=e.std_true_err, count=e.count)
                           for e in entries]}
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
    return EXIT_OK


def cmd_export_models(args) -> int:
    try:
        doc = load_result(args.result)
    except (OSError, ValueError) as e:
        return _fail(str(e), EXIT_CONFIG)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        for name in ("h_star", "h_w", "h_s"):
            net = doc.model(name)
            with open(out / f"{name}.json", "w", encoding="utf-8") as fh:
                json.dump(mlp_to_doc(net), fh)
                fh.write("\n")
    except FileNotFoundError as e:
        return _fail(str(e), EXIT_CONFIG)
    print(f"wrote h_star.json, h_w.json, h_s.json to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="w2s",
                                     description="Weak-to-strong regression experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config end to end")
    p_run.add_argument("--config", required=True,
                       help="TOML config path or bundled scenario name")
    p_run.add_argument("--out", default=None, help="output directory (default runs/<id>)")
    p_run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. finetune.tasks=10")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel task workers")
    p_run.add_argument("--embed-models", action="store_true",
                       help="embed the serialized networks in result.json")
    p_run.set_defaults(func=cmd_run)

    p_check = sub.add_parser("check", help="verify bound/structure checks on a result")
    p_check.add_argument("--result", required=True, help="path to a result.json")
    p_check.add_argument("--checks", default="realizable",
                         help=f"comma-separated subset of {','.join(CHECK_NAMES)}")
    p_check.add_argument("--probes", type=int, default=8,
                         help="random probe heads per task for the cross-term check")
    p_check.add_argument("--samples", type=int, default=2000,
                         help="sample size for structure checks")
    p_check.add_argument("--json-out", default=None, help="also write rows as JSON")
    p_check.set_defaults(func=cmd_check)

    p_rank = sub.add_parser("rank", help="rank weak models by observable gap")
    p_rank.add_argument("results", nargs="+", help="result.json files to pool")
    p_rank.add_argument("--json-out", default=None)
    p_rank.set_defaults(func=cmd_rank)

    p_export = sub.add_parser("export-models", help="write serialized networks to files")
    p_export.add_argument("--result", required=True)
    p_export.add_argument("--out", required=True)
    p_export.set_defaults(func=cmd_export_models)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
