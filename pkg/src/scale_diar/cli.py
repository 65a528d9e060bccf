"""``scale-diar`` command line: generate, train, diarise, score, sweep, compare, gradcheck.

Exit codes: 0 success, 1 runtime or data error, 2 configuration error.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .encoder import checkpoint_to_json, load_checkpoint, train
from .errors import ConfigError, ScaleDiarError
from .experiment import sweep, tune_and_evaluate
from .gradcheck import run_gradcheck
from .pipeline import FeatureTable, diarise, parse_segments_jsonl, results_to_rttm, segments_to_jsonl
from .scoring import read_rttm, score, sign_test, write_rttm
from .synthetic import corpus_from_json, corpus_to_json, features_to_jsonl, generate_corpus, generate_meetings

logger = logging.getLogger("scale_diar")

SEED_ENV = "SCALE_DIAR_SEED"
RESOLVED_NAME = "config.resolved.json"


def resolve_seed(cli_seed, cfg_seed: int) -> int:
    """``--seed`` beats ``$SCALE_DIAR_SEED`` beats the config file."""
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return cfg_seed


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    cfg.seed = resolve_seed(args.seed, cfg.seed)
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = args.out or cfg.paths.get("out_dir")
    if not out:
        raise ConfigError("no output directory: pass --out or set paths.out_dir")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write(path: Path, text: str):
    with open(path, "w", newline="") as f:
        f.write(text)
    logger.info("wrote %s", path)


def _write_resolved(out: Path, cfg: ExperimentConfig):
    _write(out / RESOLVED_NAME, cfg.validate().to_json())


def _read_text(path) -> str:
    with open(path) as f:
        return f.read()


def _load_params(path):
    if path is None:
        return None
    params, _ = load_checkpoint(path)
    return params


def _float_list(text: str):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def _apply_cluster_overrides(cfg: ExperimentConfig, args):
    if getattr(args, "p", None) is not None:
        cfg.cluster["p_percentile"] = args.p
    if getattr(args, "sigma", None) is not None:
        cfg.cluster["sigma_blur"] = args.sigma
    if getattr(args, "fixed_k", None) is not None:
        cfg.cluster["fixed_k"] = args.fixed_k


def _apply_score_overrides(cfg: ExperimentConfig, args):
    if getattr(args, "collar", None) is not None:
        cfg.score["collar"] = args.collar
    if getattr(args, "exclude_overlap", None) is not None:
        cfg.score["exclude_overlap"] = args.exclude_overlap


def _write_split(out: Path, ms):
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "meetings.jsonl", segments_to_jsonl(ms.segments))
    _write(out / "features.jsonl", features_to_jsonl(ms.feature_rows))
    _write(out / "reference.rttm", write_rttm(ms.reference))


def cmd_generate(args) -> int:
    cfg = _load(args)
    cfg.validate()
    out = _out_dir(args, cfg)
    spec = cfg.corpus_spec()
    corpus = generate_corpus(spec)
    _write(out / "corpus.json", corpus_to_json(corpus, spec))
    for split in ("dev", "eval"):
        _write_split(out / split, generate_meetings(cfg.meeting_spec(split), corpus))
    _write_resolved(out, cfg)
    return 0


def loss_curve_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "lr", "loss", "ap", "am", "scale_w", "am_degenerate"])
    for i in range(len(history.loss)):
        w.writerow([i, repr(history.lr[i]), repr(history.loss[i]), repr(history.ap[i]),
                    repr(history.am[i]), repr(history.scale_w[i]), int(history.am_degenerate[i])])
    return buf.getvalue()


def cmd_train(args) -> int:
    cfg = _load(args)
    loss = dict(cfg.train.get("loss", {}))
    for key, attr in (("alpha", "alpha"), ("threshold_t", "threshold"),
                      ("mask_mode", "mask_mode"), ("mask_scope", "mask_scope")):
        if getattr(args, attr) is not None:
            loss[key] = getattr(args, attr)
    cfg.train["loss"] = loss
    if args.steps is not None:
        cfg.train["steps"] = args.steps
    cfg.validate()
    out = _out_dir(args, cfg)
    corpus, _ = corpus_from_json(_read_text(args.corpus))
    tcfg = cfg.train_config()
    params, history = train(corpus, tcfg)
    _write(out / "checkpoint.json", checkpoint_to_json(params, tcfg))
    _write(out / "loss.csv", loss_curve_csv(history))
    _write_resolved(out, cfg)
    return 0


def _read_meetings(args):
    segments = parse_segments_jsonl(_read_text(args.meetings))
    features = FeatureTable.from_jsonl(_read_text(args.features))
    return segments, features


def cmd_diarise(args) -> int:
    cfg = _load(args)
    _apply_cluster_overrides(cfg, args)
    cfg.validate()
    out = _out_dir(args, cfg)
    segments, features = _read_meetings(args)
    params = _load_params(args.checkpoint)
    results = diarise(segments, features, params, cfg.cluster_config())
    _write(out / "hypothesis.rttm", write_rttm(results_to_rttm(results)))
    _write_resolved(out, cfg)
    return 0


def cmd_score(args) -> int:
    cfg = _load(args)
    _apply_score_overrides(cfg, args)
    cfg.validate()
    sc = cfg.score_section()
    report = score(read_rttm(args.ref), read_rttm(args.hyp), sc.collar, sc.exclude_overlap)
    text = json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n"
    if args.out or cfg.paths.get("out_dir"):
        out = _out_dir(args, cfg)
        _write(out / "score.json", text)
        _write_resolved(out, cfg)
    else:
        sys.stdout.write(text)
    print(report.table())
    return 0


def grid_csv(result) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["p", "sigma", "ser_pct", "ms_pct", "fa_pct", "der_pct"])
    for p, sigma, rep in result.rows:
        w.writerow([repr(p), repr(sigma), repr(rep.ser_pct), repr(rep.ms_pct), repr(rep.fa_pct),
                    repr(rep.der_pct)])
    return buf.getvalue()


def _sweep_grids(cfg, args):
    sw = cfg.sweep_section()
    p_grid = _float_list(args.p_grid) if args.p_grid is not None else sw.p_grid
    sigma_grid = _float_list(args.sigma_grid) if args.sigma_grid is not None else sw.sigma_grid
    if not p_grid or not sigma_grid:
        raise ConfigError("sweep grid is empty")
    cfg.sweep["p_grid"], cfg.sweep["sigma_grid"] = list(p_grid), list(sigma_grid)
    return p_grid, sigma_grid


def cmd_sweep(args) -> int:
    cfg = _load(args)
    _apply_score_overrides(cfg, args)
    p_grid, sigma_grid = _sweep_grids(cfg, args)
    cfg.validate()
    out = _out_dir(args, cfg)
    segments, features = _read_meetings(args)
    reference = read_rttm(args.reference)
    params = _load_params(args.checkpoint)
    sc = cfg.score_section()
    result = sweep(segments, features, reference, params, p_grid, sigma_grid, cfg.cluster_config(),
                   sc.collar, sc.exclude_overlap)
    _write(out / "grid.csv", grid_csv(result))
    best = {"p_percentile": result.best_p, "sigma_blur": result.best_sigma, "dev_ser_pct": result.best_ser}
    _write(out / "best.json", json.dumps(best, indent=2, sort_keys=True) + "\n")
    _write_resolved(out, cfg)
    print(f"best p={result.best_p:g} sigma={result.best_sigma:g} dev SER={result.best_ser:.2f}%")
    return 0


def cmd_compare(args) -> int:
    """Generate data, train a baseline and a candidate loss, tune each on dev, compare on eval."""
    cfg = _load(args)
    _apply_score_overrides(cfg, args)
    cfg.validate()
    out = _out_dir(args, cfg)
    report = run_comparison(cfg)
    _write(out / "compare.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    _write_resolved(out, cfg)
    s = report["sign_test"]
    print(f"baseline eval SER {report['baseline']['eval_ser_pct']:.2f}%  "
          f"candidate eval SER {report['candidate']['eval_ser_pct']:.2f}%")
    print(f"improved {s['n_improved']} degraded {s['n_degraded']} tied {s['n_tied']} "
          f"sign-test p={s['p_value']:.3g}")
    return 0


BASELINE_LOSS = {"alpha": 0.0, "mask_mode": "none"}


def run_comparison(cfg: ExperimentConfig, baseline_loss=None) -> dict:
    """Train the configured loss and an AP-only baseline on the same corpus and seed.

    Everything except ``train.loss`` is shared. Returns a JSON-ready report;
    the sign test counts a meeting as improved when the candidate's eval SER
    is lower.
    """
    corpus = generate_corpus(cfg.corpus_spec())
    dev = generate_meetings(cfg.meeting_spec("dev"), corpus)
    evl = generate_meetings(cfg.meeting_spec("eval"), corpus)
    sw, sc = cfg.sweep_section(), cfg.score_section()
    base = cfg.cluster_config()
    systems = {}
    for name, loss in (("baseline", baseline_loss or BASELINE_LOSS), ("candidate", None)):
        c = ExperimentConfig(**{**cfg.__dict__})
        if loss is not None:
            c.train = {**cfg.train, "loss": dict(loss)}
        params, _ = train(corpus, c.train_config())
        systems[name] = tune_and_evaluate(name, params, dev, evl, base, sw.p_grid, sw.sigma_grid,
                                          sc.collar, sc.exclude_overlap)
    a = systems["candidate"].per_meeting_ser
    b = systems["baseline"].per_meeting_ser
    st = sign_test(a, b)
    meetings = list(systems["candidate"].eval_report.per_meeting)
    return {
        "meetings": meetings,
        "sign_test": {"n_improved": st.n_improved, "n_degraded": st.n_degraded, "n_tied": st.n_tied,
                      "p_value": st.p_value},
        "n_not_worse": int(sum(x <= y for x, y in zip(a, b))),
        **{name: {"best_p": r.sweep.best_p, "best_sigma": r.sweep.best_sigma, "dev_ser_pct": r.sweep.best_ser,
                  "eval_ser_pct": r.eval_report.ser_pct, "eval_der_pct": r.eval_report.der_pct,
                  "per_meeting_ser_pct": r.per_meeting_ser}
           for name, r in systems.items()},
    }


def cmd_gradcheck(args) -> int:
    cfg = _load(args)
    report = run_gradcheck(tolerance=args.tolerance, seed=cfg.seed, corrupt=args.corrupt)
    lines = []
    for r in report.results:
        status = "ok" if r.max_error <= report.tolerance else "FAIL"
        lines.append(f"{status:<5}N={r.n:<2} D={r.d:<3} alpha={r.alpha:<4g} mode={r.mask_mode:<9} "
                     f"scope={r.mask_scope:<8} max_rel_err={r.max_error:.3e}")
    lines.append(f"{'PASS' if report.passed else 'FAIL'}: {len(report.results)} configurations, "
                 f"max relative error {report.max_error:.3e} (tolerance {report.tolerance:g}), "
                 f"{report.seconds:.1f}s")
    print("\n".join(lines))
    if args.out:
        out = _out_dir(args, cfg)
        doc = {"passed": report.passed, "tolerance": report.tolerance, "max_error": report.max_error,
               "results": [{"n": r.n, "d": r.d, "alpha": r.alpha, "mask_mode": r.mask_mode,
                            "mask_scope": r.mask_scope, "errors": r.errors, "max_error": r.max_error}
                           for r in report.results]}
        _write(out / "gradcheck.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help=f"overrides ${SEED_ENV} and the config seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    cluster = argparse.ArgumentParser(add_help=False)
    cluster.add_argument("--p", type=float, help="row percentile for affinity thresholding")
    cluster.add_argument("--sigma", type=float, help="Gaussian blur sigma for affinity refinement")
    cluster.add_argument("--fixed-k", type=int, help="skip eigengap estimation and use this speaker count")

    scoring = argparse.ArgumentParser(add_help=False)
    scoring.add_argument("--collar", type=float, help="no-score collar in seconds on each side of a boundary")
    scoring.add_argument("--exclude-overlap", action=argparse.BooleanOptionalAction, default=None,
                         help="drop regions where two or more reference speakers overlap")

    meetings = argparse.ArgumentParser(add_help=False)
    meetings.add_argument("--meetings", required=True, help="segments JSONL")
    meetings.add_argument("--features", required=True, help="window features JSONL")
    meetings.add_argument("--checkpoint", help="encoder checkpoint; raw features are clustered without one")

    parser = argparse.ArgumentParser(prog="scale-diar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="synthetic corpus plus dev and eval meetings")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="train an encoder")
    p.add_argument("--corpus", required=True, help="corpus.json from generate")
    p.add_argument("--alpha", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--mask-mode", choices=("none", "absolute", "relative"))
    p.add_argument("--mask-scope", choices=("am_only", "both"))
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("diarise", parents=[common, meetings, cluster], help="write hypothesis RTTM")
    p.set_defaults(func=cmd_diarise)

    p = sub.add_parser("score", parents=[common, scoring], help="SER/MS/FA/DER of a hypothesis RTTM")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("sweep", parents=[common, meetings, scoring], help="dev-set grid search over p and sigma")
    p.add_argument("--reference", required=True, help="dev reference RTTM")
    p.add_argument("--p-grid", help="comma-separated percentiles")
    p.add_argument("--sigma-grid", help="comma-separated blur sigmas")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", parents=[common, scoring],
                       help="baseline vs configured loss, tuned on dev and scored on eval")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the loss gradients")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ScaleDiarError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
