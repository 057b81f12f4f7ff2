"""Command-line interface.

Subcommands: build (banks from one annotated sample), score (CSV of
score vectors), validate (Monte-Carlo weight search), eval (dataset
evaluation with reports). Data goes to stdout or files; diagnostics go
to stderr. Exit codes: 0 success, 2 bad input, 1 internal failure.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
import traceback
from pathlib import Path

from ._concurrency import resolve_threads
from .bundle_io import TextStatePair, read_bundle, read_mask, read_text_states, write_text_states
from .config import EngineConfig, config_hash, load_config_file, make_config
from .errors import AnomemError, InsufficientDataError, ScaleMismatchError, StorageError
from .evaluation import (
    build_tasks,
    load_dataset_manifest,
    run_task,
    write_reports,
)
from .memory import BankRole, build_anomalous_bank, build_reference_bank, load_bank, save_bank
from .scoring import aggregate, baseline_weights, score_vector
from .weights import SamplingSpec, monte_carlo_search, read_weights_json, write_trace_csv, write_weights_json

STATES_FILE = "text_states.aeb1"


def _eprint(*parts: object) -> None:
    print(*parts, file=sys.stderr)


def _states_for_class(path_str: str, cls: str) -> TextStatePair:
    """Load text states from a tensor file, or a directory of per-class files."""
    p = Path(path_str)
    if p.is_dir():
        for name in (f"{cls}.aeb1", "default.aeb1"):
            cand = p / name
            if cand.exists():
                return read_text_states(cand)
        raise StorageError(f"no text states for class {cls!r} under {p}")
    return read_text_states(p)


def _find_entry(entries, train_id: str):
    for e in entries:
        if e.id == train_id:
            return e
    for e in entries:
        if Path(e.bundle_path).name == train_id:
            return e
    for e in entries:
        try:
            manifest = json.loads(
                (Path(e.bundle_path) / "manifest.json").read_text(encoding="utf-8")
            )
        except (OSError, json.JSONDecodeError):
            continue
        if manifest.get("image_id") == train_id:
            return e
    return None


# ---------------------------------------------------------------------------
# subcommands


def cmd_build(args: argparse.Namespace) -> int:
    manifest = load_dataset_manifest(args.manifest)
    if args.class_name not in manifest.classes:
        raise InsufficientDataError(f"class {args.class_name!r} not in manifest")
    entry = _find_entry(manifest.classes[args.class_name], args.train_id)
    if entry is None:
        raise InsufficientDataError(
            f"class {args.class_name!r} has no bundle with id {args.train_id!r}"
        )
    if entry.label != 1:
        raise InsufficientDataError(
            f"training bundle {args.train_id!r} is not labeled anomalous"
        )
    if entry.mask_path is None:
        raise InsufficientDataError(
            f"training bundle {args.train_id!r} has no pixel mask"
        )
    bundle = read_bundle(entry.bundle_path)
    mask = read_mask(entry.mask_path, bundle.image_width, bundle.image_height)
    ref = build_reference_bank([bundle], [mask], args.theta)
    anom = build_anomalous_bank([bundle], [mask], args.theta)
    out = Path(args.out)
    save_bank(ref, out / BankRole.REFERENCE.value)
    save_bank(anom, out / BankRole.ANOMALOUS.value)
    if args.text_states:
        write_text_states(read_text_states(args.text_states), out / STATES_FILE)
    report = {
        "class": args.class_name,
        "train_id": args.train_id,
        "theta": args.theta,
        "scales": list(ref.scales),
        "counts": {
            str(s): {"reference": ref.count(s), "anomalous": anom.count(s)}
            for s in ref.scales
        },
    }
    try:
        (out / "build_report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise StorageError(f"cannot write build report under {out}: {exc}") from exc
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _load_banks(banks_dir: str):
    root = Path(banks_dir)
    ref = load_bank(root / BankRole.REFERENCE.value)
    anom_dir = root / BankRole.ANOMALOUS.value
    anom = load_bank(anom_dir) if anom_dir.exists() else None
    return ref, anom


def _resolve_states(args_states: str | None, banks_dir: str, cls: str = "") -> TextStatePair:
    if args_states:
        return _states_for_class(args_states, cls)
    fallback = Path(banks_dir) / STATES_FILE
    if fallback.exists():
        return read_text_states(fallback)
    raise StorageError(
        f"no text states: pass --text-states or place {STATES_FILE} in the banks directory"
    )


def cmd_score(args: argparse.Namespace) -> int:
    ref, anom = _load_banks(args.banks)
    states = _resolve_states(args.text_states, args.banks)
    n = len(ref.scales)
    if args.weights == "baseline":
        weights = baseline_weights(n)
    else:
        weights = read_weights_json(args.weights, 1 + 2 * n)
    header = ["image_id", "a_zs"]
    header += [f"a_n{i + 1}" for i in range(n)]
    header += [f"a_p{i + 1}" for i in range(n)]
    header += ["aggregate"]
    print(",".join(header))
    for path in args.bundles:
        bundle = read_bundle(path)
        if bundle.scales != ref.scales:
            raise ScaleMismatchError(
                f"bundle {path} scales {bundle.scales} != bank scales {ref.scales}"
            )
        sc = score_vector(bundle, ref, anom, states, args.tau)
        row = [bundle.image_id]
        row += [repr(float(v)) for v in sc.as_array()]
        row += [repr(aggregate(sc, weights))]
        print(",".join(row))
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    ref, anom = _load_banks(args.banks)
    states = _resolve_states(args.text_states, args.banks)
    n = len(ref.scales)
    pairs = []
    for path in args.val_bundles:
        bundle = read_bundle(path)
        if bundle.scales != ref.scales:
            raise ScaleMismatchError(
                f"bundle {path} scales {bundle.scales} != bank scales {ref.scales}"
            )
        if bundle.label is None:
            raise InsufficientDataError(
                f"validation bundle {path} has no label; refusing to guess"
            )
        pairs.append((score_vector(bundle, ref, anom, states, args.tau), bundle.label))
    spec = SamplingSpec(
        distribution=args.dist,
        n_samples=args.n,
        seed=args.seed,
        sd_factor=args.sd_factor,
        student_df=args.df,
        include_baseline=not args.no_baseline,
        n_scales=n,
    )
    workers = resolve_threads(args.threads)
    best_w, best_auroc, trace = monte_carlo_search(pairs, spec, workers=workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_weights_json(best_w, out / "weights.json")
    write_trace_csv(trace, out / "trace.csv", n)
    _eprint(f"best validation AUROC {best_auroc} over {len(trace)} candidates")
    print(json.dumps([float(w) for w in best_w]))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    file_values = load_config_file(args.config) if args.config else {}
    overrides = {
        "mode": args.mode,
        "weight_source": args.weights,
        "seed": args.seed,
        "runs_per_class": args.runs,
        "max_test": args.max_test,
        "theta": args.theta,
        "tau": args.tau,
        "distribution": args.dist,
        "n_samples": args.n_samples,
        "sd_factor": args.sd_factor,
        "student_df": args.df,
        "threads": args.threads,
        "text_states": args.text_states,
        "confidence": args.confidence,
        "renormalize_empty_anomalous": True if args.renormalize_empty else None,
        "scales": tuple(int(s) for s in args.scales.split(",")) if args.scales else None,
    }
    config = make_config(file_values, overrides)
    cfg_hash = config_hash(config)
    manifest = load_dataset_manifest(args.manifest)
    workers = resolve_threads(config.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_lines = [f"{datetime.datetime.now().isoformat()} start config={cfg_hash}"]

    per_class = {}
    skipped: dict[str, str] = {}
    for cls in sorted(manifest.classes):
        try:
            states_path = config.text_states or manifest.text_states.get(cls)
            if not states_path:
                raise StorageError(
                    f"class {cls}: no text states in manifest or --text-states"
                )
            states = _states_for_class(states_path, cls)
            tasks = build_tasks(
                manifest,
                runs_per_class=config.runs_per_class,
                max_test=config.max_test,
                seed=config.seed,
                mode=config.mode,
                weight_source=config.weight_source,
                class_names=[cls],
            )
            per_class[cls] = [run_task(t, config, states, workers) for t in tasks]
            log_lines.append(f"{datetime.datetime.now().isoformat()} class {cls} ok")
        except AnomemError as exc:
            skipped[cls] = str(exc)
            _eprint(f"skipping class {cls}: {exc}")
            log_lines.append(f"{datetime.datetime.now().isoformat()} class {cls} skipped: {exc}")
    if not per_class:
        _eprint("error: every class failed; nothing to report")
        return 2
    csv_path, json_path, csv_text = write_reports(
        per_class, skipped, out, cfg_hash, config.confidence
    )
    log_lines.append(f"{datetime.datetime.now().isoformat()} reports {csv_path} {json_path}")
    (out / "run.log").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    print(csv_text, end="")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anomem",
        description="Few-shot anomaly scoring over precomputed embedding bundles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build", help="build memory banks from one annotated sample")
    p_build.add_argument("--manifest", required=True)
    p_build.add_argument("--class", dest="class_name", required=True)
    p_build.add_argument("--train-id", required=True)
    p_build.add_argument("--out", required=True)
    p_build.add_argument("--theta", type=float, default=0.25)
    p_build.add_argument("--text-states", default=None)
    p_build.set_defaults(func=cmd_build)

    p_score = sub.add_parser("score", help="score bundles against saved banks")
    p_score.add_argument("--banks", required=True)
    p_score.add_argument("--bundles", nargs="+", required=True)
    p_score.add_argument("--text-states", default=None)
    p_score.add_argument("--weights", default="baseline", help="weights JSON file or 'baseline'")
    p_score.add_argument("--tau", type=float, default=100.0)
    p_score.set_defaults(func=cmd_score)

    p_val = sub.add_parser("validate", help="Monte-Carlo weight search on labeled bundles")
    p_val.add_argument("--banks", required=True)
    p_val.add_argument("--val-bundles", nargs="+", required=True)
    p_val.add_argument("--dist", choices=["uniform", "normal", "student-t"], required=True)
    p_val.add_argument("--n", type=int, default=100)
    p_val.add_argument("--seed", type=int, default=0)
    p_val.add_argument("--text-states", default=None)
    p_val.add_argument("--tau", type=float, default=100.0)
    p_val.add_argument("--sd-factor", type=float, default=0.5)
    p_val.add_argument("--df", type=float, default=3.0)
    p_val.add_argument("--no-baseline", action="store_true")
    p_val.add_argument("--out", default=".")
    p_val.add_argument("--threads", type=int, default=0)
    p_val.set_defaults(func=cmd_validate)

    p_eval = sub.add_parser("eval", help="evaluate a dataset manifest into reports")
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--runs", type=int, default=None)
    p_eval.add_argument("--max-test", type=int, default=None)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--mode", choices=["composite", "winclip-compat"], default=None)
    p_eval.add_argument("--weights", choices=["baseline", "validated"], default=None)
    p_eval.add_argument("--out", default="anomem-report")
    p_eval.add_argument("--config", default=None, help="JSON config file")
    p_eval.add_argument("--text-states", default=None, help="tensor file or per-class directory")
    p_eval.add_argument("--theta", type=float, default=None)
    p_eval.add_argument("--tau", type=float, default=None)
    p_eval.add_argument("--dist", choices=["uniform", "normal", "student-t"], default=None)
    p_eval.add_argument("--n-samples", type=int, default=None)
    p_eval.add_argument("--sd-factor", type=float, default=None)
    p_eval.add_argument("--df", type=float, default=None)
    p_eval.add_argument("--threads", type=int, default=None)
    p_eval.add_argument("--scales", default=None, help="comma-separated window sizes")
    p_eval.add_argument("--confidence", type=float, default=None)
    p_eval.add_argument("--renormalize-empty", action="store_true")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except (AnomemError, ValueError) as exc:
        _eprint(f"error: {exc}")
        return 2
    except Exception:
        traceback.print_exc(file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
