"""Command-line entry point: ``batdeg <command> [options]``.

Exit codes: 0 success, 1 validation error (bad config, arguments or inputs),
2 runtime error. Every command prints its resolved configuration as JSON to
stderr before running.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .features.dsl import FeatureSyntaxError, FeatureValidationError

log = logging.getLogger("batdeg")


class ValidationError(ValueError):
    """Bad arguments or missing inputs (exit code 1)."""


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ValidationError(f"{what} not found: {path}")
    return path


def _json_safe(x):
    if isinstance(x, float) and math.isnan(x):
        return None
    return x


# -- commands ---------------------------------------------------------------

def _power_model(cfg: RunConfig, reuse: bool = True):
    """The saved protocol HMM when there is one (and ``reuse``), else a fresh fit."""
    from .protocol import GaussianHmm, PowerTrace, fit_hmm, load_vehicle_params, read_speed_csv, \
        scale_power, speed_to_power, synthetic_drive_cycle
    pc = cfg.protocol
    model_path = cfg.paths.resolve("protocols") / "hmm.json"
    if reuse and model_path.exists():
        return GaussianHmm.load(model_path), model_path
    vehicle = load_vehicle_params(pc.vehicle or None)
    speed = read_speed_csv(_require(Path(pc.speed_trace), "speed trace")) if pc.speed_trace \
        else synthetic_drive_cycle(3600.0, pc.seed)
    trace = scale_power(speed_to_power(speed, vehicle), pc.mean_power)
    model = fit_hmm(PowerTrace(trace.time, trace.power), pc.n_states, pc.seed, pc.max_iter, pc.tol)
    return model, None


def cmd_gen_protocol(args, cfg: RunConfig) -> int:
    from .protocol import generate_protocol, write_protocols
    if args.count < 1:
        raise ValidationError("--count must be >= 1")
    out = Path(args.out) if args.out else cfg.paths.resolve("protocols")
    out.mkdir(parents=True, exist_ok=True)
    model, _ = _power_model(cfg, reuse=False)
    model.save(out / "hmm.json")
    pc = cfg.protocol
    specs = [generate_protocol(model, pc.seed * 1_000_003 + i, pc.duration, pc.step, pc.cap, pc.zero_keep_ratio)
             for i in range(args.count)]
    paths = write_protocols(specs, out)
    mean_steps = np.mean([len(s.steps) for s in specs])
    print(f"wrote {len(paths)} protocols and hmm.json to {out} (mean {mean_steps:.1f} power steps)")
    return 0


def cmd_simulate(args, cfg: RunConfig) -> int:
    from .cell import write_history
    from .pipeline.fleet import build_fleet
    n = cfg.fleet.n_cells if args.cells is None else args.cells
    if n < 1:
        raise ValidationError(f"--cells must be >= 1, got {n}")
    fc = replace(cfg.fleet.fleet_config(), n_cells=n,
                 protocol_duration=cfg.protocol.duration, protocol_step=cfg.protocol.step,
                 cap=cfg.protocol.cap, zero_keep_ratio=cfg.protocol.zero_keep_ratio)
    model, src = _power_model(cfg)
    log.info("power model: %s", src or "fitted from the drive cycle")
    fleet = build_fleet(fc, model, jobs=args.jobs)
    out = Path(args.out) if args.out else cfg.paths.resolve("dataset")
    for h in fleet:
        write_history(h, out)
    ends = {}
    for h in fleet:
        ends[h.end_reason] = ends.get(h.end_reason, 0) + 1
    print(f"simulated {len(fleet)} cells into {out}: {ends}")
    return 0


def _dataset(cfg: RunConfig, path=None):
    from .cell import read_dataset
    d = _require(Path(path) if path else cfg.paths.resolve("dataset"), "dataset directory")
    data = read_dataset(d)
    if not data:
        raise ValidationError(f"no cell histories (*.jsonl) in {d}")
    return data


def cmd_featurize(args, cfg: RunConfig) -> int:
    from .features import compile_plan, enumerate_space, evaluate_matrix, read_feature_list, \
        write_feature_matrix
    fc = cfg.features
    data = _dataset(cfg, args.dataset)
    keep = [h for h in data if len(h.cycles) >= fc.N]
    for h in data:
        if len(h.cycles) < fc.N:
            log.warning("cell %s skipped: %d cycles < N=%d", h.cell_id, len(h.cycles), fc.N)
    if not keep:
        raise ValidationError(f"no cell has the required {fc.N} cycles")
    exprs = read_feature_list(_require(Path(args.features), "feature list")) if args.features \
        else enumerate_space(fc.space())
    plan = compile_plan(exprs)
    fm = evaluate_matrix(plan, keep, fc.N, fc.grid_len, jobs=args.jobs)
    out = Path(args.out) if args.out else cfg.paths.resolve("features")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_feature_matrix(out, fm)
    print(f"wrote {len(fm.cell_ids)} cells x {len(fm.names)} features to {out}")
    return 0


def cmd_label(args, cfg: RunConfig) -> int:
    from .pipeline.baselines import delta_q_feature
    from .pipeline.labels import label_dataset
    tc = cfg.tasks
    data = _dataset(cfg, args.dataset)
    labels = label_dataset(data, tc.life_config(), tc.knee_config())
    i, j = tc.dq_cycles
    dq = {}
    for h in data:
        if len(h.cycles) >= max(i, j):
            dq[h.cell_id] = [_json_safe(float(x)) for x in delta_q_feature(h, i, j, cfg.features.grid_len)]
    obj = labels.to_json()
    obj["delta_q"] = dq
    obj["delta_q_cycles"] = [i, j]
    out = Path(args.out) if args.out else cfg.paths.resolve("labels")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
    print(f"wrote labels for {len(data)} cells to {out}: {json.dumps(labels.summary(), sort_keys=True)}")
    return 0


def _load_inputs(args, cfg: RunConfig):
    from .features import read_feature_matrix
    fm = read_feature_matrix(_require(Path(args.features) if args.features else cfg.paths.resolve("features"),
                                      "feature matrix"))
    lp = _require(Path(args.labels) if args.labels else cfg.paths.resolve("labels"), "labels file")
    with open(lp, encoding="utf-8") as fh:
        labels = json.load(fh)
    if args.task not in labels:
        raise ValidationError(f"{lp}: no {args.task!r} labels")
    return fm, labels


def cmd_train(args, cfg: RunConfig) -> int:
    from .forest import fit
    fm, labels = _load_inputs(args, cfg)
    lab = labels[args.task]
    rows = [i for i, c in enumerate(fm.cell_ids) if lab.get(c) is not None]
    if len(rows) < 2:
        raise ValidationError(f"need >= 2 labelled cells for {args.task}, got {len(rows)}")
    y = np.array([lab[fm.cell_ids[i]] for i in rows], dtype=float if args.task == "life" else np.int64)
    tcfg = cfg.tasks.task_config(args.trees)
    model = fit(fm.values[rows], y, tcfg.forest(cfg.tasks.seed_start, args.task), fm.names)
    out = Path(args.out) if args.out else cfg.paths.resolve("reports") / f"model_{args.task}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    imp = out.with_name(f"importance_{args.task}.csv")
    model.importances().write_csv(imp, cfg.tasks.top_features)
    print(f"trained {args.task} forest on {len(rows)} cells -> {out} (importances: {imp})")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    from .pipeline.tasks import run_task
    fm, labels = _load_inputs(args, cfg)
    dq = None
    if args.task == "life" and labels.get("delta_q"):
        dq = {c: np.array([np.nan if x is None else x for x in v], dtype=float)
              for c, v in labels["delta_q"].items()}
    lab = {c: labels[args.task].get(c) for c in fm.cell_ids}
    report = run_task(args.task, fm, lab, cfg.tasks.task_config(args.trees), dq, jobs=args.jobs)
    out = Path(args.out) if args.out else cfg.paths.resolve("reports") / args.task
    report.write(out)
    for method, s in report.summary().items():
        test = ", ".join(f"{k} {v['mean']:.4g}±{v['sd']:.2g}" for k, v in s["test"].items())
        print(f"{args.task} {method}: test {test}")
    print(f"report written to {out}")
    return 0


def cmd_cluster_xps(args, cfg: RunConfig) -> int:
    from .pipeline.xps import fixture_patterns, fixture_reference, load_xps, xps_patterns
    src = args.input or cfg.paths.xps or None
    samples = load_xps(_require(Path(src), "XPS table") if src else None)
    if args.fixture:
        if src:
            raise ValidationError("--fixture uses the bundled table; drop --input")
        res = fixture_patterns(samples)
    else:
        ref = fixture_reference() if not src else None
        res = xps_patterns(samples, cfg.tasks.xps_k, cfg.tasks.seed_start, reference=ref)
    for line in res.summary_lines():
        print(line)
    print(f"{len(res.patterns)} patterns retained, {len(res.excluded)} singletons excluded")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(res.to_json(), fh, indent=1, sort_keys=True)
    return 0


def cmd_schedule(args, cfg: RunConfig) -> int:
    from .scheduler import Campaign, SimClock, WallClock, load_campaign_queues, virtual_backends
    sc = cfg.scheduler
    root = _require(Path(args.campaign) if args.campaign else cfg.paths.resolve("campaign"),
                    "campaign directory")
    queues = load_campaign_queues(root, sc.default_cycles)
    if not queues:
        raise ValidationError(f"{root}: no channel sub-directories")
    cp = Path(args.checkpoint) if args.checkpoint else root / "checkpoint.json"
    lp = Path(args.log) if args.log else root / "campaign_log.jsonl"
    clock = SimClock(tick_seconds=sc.tick_seconds) if sc.clock == "simulated" else WallClock(sc.tick_seconds)
    resume = sc.resume and not args.restart_spec
    if not args.recover:
        for p in (cp, lp):
            if p.exists():
                p.unlink()
    camp = Campaign(queues, virtual_backends(sc.ticks_per_cycle), cp, lp, sc.poll_interval, clock, resume)
    restored = camp.restore() if args.recover else False
    result = camp.run() if sc.clock == "simulated" else camp.run_threaded()
    done = len(result.completed_specs())
    total = sum(len(q) for q in queues.values())
    print(f"{'recovered' if restored else 'fresh'} campaign: {done}/{total} specs completed "
          f"in {result.ticks:g} ticks, failed channels: {result.failed_channels or 'none'}")
    print(f"log: {lp}  checkpoint: {cp}")
    return 0 if not result.failed_channels else 2


def cmd_report(args, cfg: RunConfig) -> int:
    from .pipeline.tasks import TASKS, load_report
    root = _require(Path(args.reports) if args.reports else cfg.paths.resolve("reports"), "reports directory")
    found = {t: load_report(root / t) for t in TASKS if (root / t / "report.json").exists()}
    if not found:
        raise ValidationError(f"{root}: no task reports (<task>/report.json)")
    summary = {"schema": "batdeg-report/1", "tasks": {}}
    for task, rep in found.items():
        summary["tasks"][task] = {
            "n_cells": len(rep.cell_ids),
            "seeds": rep.seeds,
            "summary": rep.summary(),
            "auc": {k: float(v["auc"]) for k, v in rep.roc.items()},
            "importance_top": [list(r) for r in rep.importance_top],
            "excluded": rep.excluded,
            "curves": sorted(p.name for p in (root / task).glob("*.csv")),
        }
    out = root / "summary.json"
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    print(f"collated {sorted(found)} into {out}")
    if not args.no_figures:
        from .plotting import report_figures
        figs = [p for rep in found.values() for p in report_figures(rep, root / "figures")]
        print(f"wrote {len(figs)} figures to {root / 'figures'}")
    return 0


COMMANDS = {
    "gen-protocol": cmd_gen_protocol,
    "simulate": cmd_simulate,
    "featurize": cmd_featurize,
    "label": cmd_label,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "cluster-xps": cmd_cluster_xps,
    "schedule": cmd_schedule,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="overrides every seed in the configuration")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="batdeg", description="Battery degradation pipeline on synthetic cells.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-protocol", parents=[common], help="fit the power HMM and sample protocols")
    s.add_argument("--count", type=int, default=10)
    s.add_argument("--out")

    s = sub.add_parser("simulate", parents=[common], help="simulate a cell fleet")
    s.add_argument("--cells", type=int)
    s.add_argument("--out")

    s = sub.add_parser("featurize", parents=[common], help="feature matrix of a dataset")
    s.add_argument("--dataset")
    s.add_argument("--features", help="feature list (one name per line); default: the full space")
    s.add_argument("--out")

    s = sub.add_parser("label", parents=[common], help="life, knee and pattern labels")
    s.add_argument("--dataset")
    s.add_argument("--out")

    for name, text in (("train", "fit one forest on every labelled cell"),
                       ("evaluate", "seeded train/test study with baselines")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--task", choices=("life", "knee", "pattern"), default="life")
        s.add_argument("--features")
        s.add_argument("--labels")
        s.add_argument("--trees", type=int, help="overrides tasks.n_trees")
        s.add_argument("--out")

    s = sub.add_parser("cluster-xps", parents=[common], help="XPS composition patterns")
    s.add_argument("--fixture", action="store_true", help="use the bundled table's reference grouping")
    s.add_argument("--input", help="composition CSV")
    s.add_argument("--out", help="write the assignment as JSON")

    s = sub.add_parser("schedule", parents=[common], help="run a test campaign on virtual cyclers")
    s.add_argument("--campaign", help="directory with one spec-queue sub-directory per channel")
    s.add_argument("--checkpoint")
    s.add_argument("--log")
    s.add_argument("--recover", action="store_true", help="continue from the checkpoint")
    s.add_argument("--restart-spec", action="store_true",
                   help="on recovery, rerun an interrupted spec from its first cycle")

    s = sub.add_parser("report", parents=[common], help="collate task reports (and figures)")
    s.add_argument("--reports")
    s.add_argument("--no-figures", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.jobs < 1:
            raise ValidationError("--jobs must be >= 1")
        print(json.dumps({"command": args.command, "config": cfg.to_dict()}, sort_keys=True),
              file=sys.stderr)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ValidationError, FeatureSyntaxError, FeatureValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:   # noqa: BLE001  (runtime failures map to exit code 2)
        log.debug("runtime error", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
