"""Command-line entry point.

Subcommands write CSV results plus a ``manifest.json`` describing how to
reproduce them.  Settings come from built-in presets, then an optional
``key=value`` config file, then flags (flags win).  Exit codes: 0 ok,
1 runtime failure, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .assignment import ConfigurationError, build_assignment, plan_to_csv
from .audit import STRATEGIES, run_audit
from .dataset import load_dataset, records_to_csv, run_dataset_experiment, synthesize_dataset
from .simulation import MECHANISMS, RELIABILITY_GRID, ExperimentConfig, GraderBehavior, run_experiment

log = logging.getLogger("peermech")

SCALES = {
    "desk": dict(n=50, probes=10, k=10, trials_outer=10, trials_inner=10),
    "paper": dict(n=500, probes=50, k=10, trials_outer=10, trials_inner=10),
}
PRESETS = {
    "truthful": dict(behavior="truthful"),
    "strategic": dict(behavior="strategic"),
    "mismatched": dict(behavior="truthful", eta=1600.0 / 9.0, prior_mu=1.25, prior_gamma=16.0),
}

# config-file key -> parser for its value
CONFIG_KEYS = {
    "preset": str, "scale": str, "n": int, "probes": int, "k": int, "eta": float,
    "reliability_means": str, "prior_mu": float, "prior_gamma": float, "threshold": float,
    "seed": int, "out_dir": str, "jobs": int, "trials_outer": int, "trials_inner": int,
    "gibbs_iterations": int, "gibbs_burn_in": int, "gamma_shape": float,
"replications": int, "reliability": float, "strategies": str,
    "trupeqa_manipulated": lambda v: v.strip().lower() in ("1", "true", "yes", "on"),
}


class ConfigError(Exception):
    pass


def read_config(path: str | None) -> dict:
    """Parse a flat ``key=value`` file; ``#`` starts a comment."""
    if not path:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return out


def _settings(args: argparse.Namespace, keys) -> dict:
    merged = read_config(getattr(args, "config", None))
    for key in keys:
        v = getattr(args, key, None)
        if v is not None:
            merged[key] = v
    if "seed" not in merged:
        env = os.environ.get("PEERMECH_SEED")
        try:
            merged["seed"] = int(env) if env else 0
        except ValueError:
            raise ConfigError(f"PEERMECH_SEED must be an integer, got {env!r}") from None
    return merged


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(row.get(h)) for h in header])
    path.write_text(buf.getvalue(), encoding="utf-8")


def write_manifest(out_dir: Path, command: str, config: dict, seed: int, outputs: list[Path],
                   started: float, extra_inputs: bytes = b"") -> Path:
    canonical = json.dumps(config, sort_keys=True, default=str).encode()
    digest = hashlib.sha256(canonical + extra_inputs).hexdigest()
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "input_hash": f"sha256:{digest}",
        "master_seed": seed,
        "outputs": [str(p) for p in outputs],
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def _experiment_config(s: dict) -> ExperimentConfig:
    scale = s.get("scale", "desk")
    preset = s.get("preset", "truthful")
    if scale not in SCALES:
        raise ConfigError(f"unknown scale {scale!r}; choose from {sorted(SCALES)}")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    fields = {**SCALES[scale], **PRESETS[preset]}
    mapping = {
        "n": "n", "probes": "probes", "k": "k", "eta": "eta", "prior_mu": "prior_mu",
        "prior_gamma": "prior_gamma", "threshold": "regrade_threshold", "seed": "master_seed",
        "trials_outer": "trials_outer", "trials_inner": "trials_inner",
        "gibbs_iterations": "gibbs_iterations", "gibbs_burn_in": "gibbs_burn_in",
        "gamma_shape": "gamma_shape", "trupeqa_manipulated": "trupeqa_sees_manipulation",
    }
    for key, field_name in mapping.items():
        if key in s:
            fields[field_name] = s[key]
    try:
        cfg = ExperimentConfig(**fields)
        build_assignment(cfg.n, cfg.probes, cfg.k, 0)
        if not 0 <= cfg.gibbs_burn_in < cfg.gibbs_iterations:
            raise ValueError("gibbs burn-in must be below the iteration count")
    except (ValueError, ConfigurationError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def cmd_simulate(args: argparse.Namespace) -> int:
    started = time.time()
    s = _settings(args, CONFIG_KEYS)
    cfg = _experiment_config(s)
    grid = _float_list(s["reliability_means"]) if "reliability_means" in s else RELIABILITY_GRID
    jobs = int(s.get("jobs", 1))
    out_dir = Path(s.get("out_dir", "results"))
    out_dir.mkdir(parents=True, exist_ok=True)
    aggregate, outputs = [], []
    for rel in grid:
        rcfg = replace(cfg, mean_reliability=rel)
        log.info("running %s reliability=%g (%d replications)", s.get("preset", "truthful"), rel, rcfg.replications)
        result = run_experiment(rcfg, MECHANISMS, jobs=jobs)
        for name in MECHANISMS:
            rep = result.reports[name]
            aggregate.append(dict(
                mechanism=name, mean_reliability=rel, eta=cfg.eta, rmse=rep.rmse,
                rmse_ci=rep.ci_halfwidth_rmse, regrade_fraction=rep.regrade_fraction,
                frac_ci=rep.ci_halfwidth_frac,
            ))
        path = out_dir / f"replications_rel{rel:g}.csv"
        write_csv(path, ["mechanism", "replication", "rmse", "regrade_fraction",
                         "total_transfer_min", "total_transfer_mean"], result.replication_rows)
        outputs.append(path)
    path = out_dir / "aggregate.csv"
    write_csv(path, ["mechanism", "mean_reliability", "eta", "rmse", "rmse_ci", "regrade_fraction", "frac_ci"], aggregate)
    outputs.insert(0, path)
    echo = cfg.echo() | {"reliability_means": list(grid), "gibbs_final_score": "posterior mean of retained draws"}
    outputs.append(write_manifest(out_dir, "simulate", echo, cfg.master_seed, outputs, started))
    print(f"wrote {len(outputs)} files to {out_dir}")
    return 0


def cmd_audit(args: argparse.Namespace) -> int:
    started = time.time()
    s = _settings(args, CONFIG_KEYS)
    cfg = _experiment_config(s)
    cfg = replace(cfg, mean_reliability=float(s.get("reliability", 2500.0)), behavior=GraderBehavior.TRUTHFUL)
    strategies = tuple(v.strip() for v in s.get("strategies", ",".join(STRATEGIES)).split(",") if v.strip())
    unknown = [v for v in strategies if v not in (*STRATEGIES, "truthful")]
    if unknown:
        raise ConfigError(f"unknown strategies {unknown}")
    replications = int(s.get("replications", 2000))
    if replications < 2:
        raise ConfigError("audit needs at least 2 replications")
    out_dir = Path(s.get("out_dir", "results"))
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, _ = run_audit(cfg, replications, strategies, jobs=int(s.get("jobs", 1)))
    table = [dict(check=r.check, strategy=r.strategy, truthful_mean=r.truthful_mean,
                  deviation_mean=r.deviation_mean, difference=r.difference, se=r.se,
                  verdict="pass" if r.passed else "fail") for r in rows]
    path = out_dir / "audit.csv"
    write_csv(path, ["check", "strategy", "truthful_mean", "deviation_mean", "difference", "se", "verdict"], table)
    echo = cfg.echo() | {"replications": replications, "strategies": list(strategies)}
    manifest = write_manifest(out_dir, "audit", echo, cfg.master_seed, [path], started)
    for row in table:
        print(f"{row['check']:5s} {row['strategy']:14s} {row['verdict']}")
    print(f"wrote {path} and {manifest}")
    return 0


def cmd_dataset(args: argparse.Namespace) -> int:
    started = time.time()
    s = _settings(args, ("seed", "out_dir", "gibbs_iterations", "gibbs_burn_in"))
    path = Path(args.path)
    if not path.is_file():
        raise ConfigError(f"dataset {path} not found")
    data = load_dataset(path, args.probes_per_grader)
    out_dir = Path(s.get("out_dir", "results"))
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, outcome = run_dataset_experiment(
        data, args.prior, reruns=args.reruns, seed=s["seed"],
        gibbs_iterations=s.get("gibbs_iterations", 1000), gibbs_burn_in=s.get("gibbs_burn_in", 200),
        normalized=args.normalized_likelihood,
    )
    metrics = out_dir / f"dataset_{args.prior}.csv"
    write_csv(metrics, ["mechanism", "prior", "rmse", "rmse_ci", "regrade_fraction", "frac_ci"], rows)
    score_path = out_dir / f"dataset_{args.prior}_trupeqa_scores.csv"
    score_path.write_text(outcome.scores_csv(data.truths), encoding="utf-8")
    transfer_path = out_dir / f"dataset_{args.prior}_trupeqa_transfers.csv"
    transfer_path.write_text(outcome.transfers_csv(args.transfer_scale), encoding="utf-8")
    echo = {"path": str(path), "prior": args.prior, "probes_per_grader": args.probes_per_grader,
            "reruns": args.reruns, "transfer_scale": args.transfer_scale, "normalized_likelihood": args.normalized_likelihood,
            "gibbs_iterations": s.get("gibbs_iterations", 1000), "gibbs_burn_in": s.get("gibbs_burn_in", 200),
            "gibbs_final_score": "mode of retained draws"}
    write_manifest(out_dir, "dataset", echo, s["seed"], [metrics, score_path, transfer_path], started, path.read_bytes())
    print(f"wrote {metrics}")
    return 0


def cmd_synth_dataset(args: argparse.Namespace) -> int:
    s = _settings(args, ("seed",))
    records = synthesize_dataset(seed=s["seed"])
    Path(args.out).write_text(records_to_csv(records), encoding="utf-8")
    print(f"wrote {len(records)} grades to {args.out}")
    return 0


def cmd_assign(args: argparse.Namespace) -> int:
    s = _settings(args, ("seed",))
    try:
        plan = build_assignment(args.n, args.probes, args.k, s["seed"])
    except ConfigurationError as exc:
        raise ConfigError(str(exc)) from exc
    Path(args.out).write_text(plan_to_csv(plan), encoding="utf-8")
    print(f"wrote {len(plan.edges())} assignments to {args.out}")
    return 0


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value settings file (flags override it)")
    p.add_argument("--seed", type=int, help="master seed (fallback: $PEERMECH_SEED, then 0)")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--jobs", type=int, help="worker processes for replications")


def _experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--scale", choices=sorted(SCALES))
    p.add_argument("--n", type=int)
    p.add_argument("--probes", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--prior-mu", dest="prior_mu", type=float)
    p.add_argument("--prior-gamma", dest="prior_gamma", type=float)
    p.add_argument("--threshold", type=float, help="regrading threshold (default 0.005)")
    p.add_argument("--trials-outer", dest="trials_outer", type=int)
    p.add_argument("--trials-inner", dest="trials_inner", type=int)
    p.add_argument("--gibbs-iterations", dest="gibbs_iterations", type=int)
    p.add_argument("--gibbs-burn-in", dest="gibbs_burn_in", type=int)
    p.add_argument("--gamma-shape", dest="gamma_shape", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="peermech", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="continuous-score experiments across the reliability grid")
    _common(p)
    _experiment_flags(p)
    p.add_argument("--reliability-means", dest="reliability_means", help="comma-separated list")
    p.add_argument("--trupeqa-manipulated", dest="trupeqa_manipulated", action="store_true", default=None,
                   help="feed manipulated reports to TRUPEQA as well (strategic preset)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("audit", help="Monte-Carlo participation and truthfulness checks")
    _common(p)
    _experiment_flags(p)
    p.add_argument("--reliability", type=float, help="mean reliability (default 2500)")
    p.add_argument("--replications", type=int, help="paired replications (default 2000)")
    p.add_argument("--strategies", help=f"comma-separated subset of {','.join(STRATEGIES)},truthful")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("dataset", help="discrete-score run on a peer-grading CSV")
    _common(p)
    p.add_argument("path")
    p.add_argument("--prior", choices=("uniform", "empirical"), default="uniform")
    p.add_argument("--probes-per-grader", dest="probes_per_grader", type=int, default=5)
    p.add_argument("--reruns", type=int, default=10)
    p.add_argument("--gibbs-iterations", dest="gibbs_iterations", type=int)
    p.add_argument("--gibbs-burn-in", dest="gibbs_burn_in", type=int)
    p.add_argument("--transfer-scale", dest="transfer_scale", type=float, default=1.0,
                   help="multiplier turning transfers into bonus marks")
    p.add_argument("--normalized-likelihood", dest="normalized_likelihood", action="store_true",
                   help="use the normalized error PMF in scoring and Gibbs")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("synth-dataset", help="write a synthetic stand-in dataset CSV")
    p.add_argument("out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth_dataset)

    p = sub.add_parser("assign", help="write a grader/paper assignment CSV")
    p.add_argument("out")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--probes", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_assign)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"peermech: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"peermech: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
