"""Command line: run, verify, fig3, sweep, default-config."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError, RunConfig, load, render
from .runner import RunAborted, fig3, run, write_trace
from .verify import REGISTRY, TraceParseError, capability_across_seeds, load_trace, verify


def _cfg(path, **over) -> RunConfig:
    if path is None:
        return RunConfig(**{k: v for k, v in over.items() if v is not None})
    return load(path, **over)


def cmd_run(a) -> int:
    cfg = _cfg(a.config, seed=a.seed, steps=a.steps)
    out = a.out or cfg.output_path
    res = run(cfg)
    write_trace(res, out)
    print(f"trace={out}")
    print(f"summary={out}.summary")
    print(f"elapsed_s={res.elapsed:.3f}")
    return 0


def cmd_verify(a) -> int:
    checks = None if a.checks is None else [c for c in a.checks.split(",") if c]
    report = verify(a.trace, checks)
    text = report.text()
    sys.stdout.write(text)
    if a.out:
        Path(a.out).write_text(text, encoding="utf-8")
    return 0 if report.all_pass else 1


def cmd_fig3(a) -> int:
    cfg = _cfg(a.config, seed=a.seed)
    cross, rate, path, _ = fig3(cfg, a.out)
    print(f"crossing_step={'none' if cross is None else cross}")
    print(f"post_crossing_activity_rate={rate:.6g}")
    print(f"plot={path}")
    return 0


def _sweep_one(args):
    cfg_path, seed, steps, out_dir = args
    cfg = _cfg(cfg_path, seed=seed, steps=steps)
    path = Path(out_dir) / f"trace_seed{seed}.csv"
    write_trace(run(cfg), path)
    return str(path)


def cmd_sweep(a) -> int:
    base = _cfg(a.config, steps=a.steps)
    seeds = [base.seed + i for i in range(a.seeds)]
    Path(a.out_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(a.config, s, a.steps, a.out_dir) for s in seeds]
    if a.jobs > 1:
        with ProcessPoolExecutor(max_workers=a.jobs) as ex:
            paths = list(ex.map(_sweep_one, jobs))
    else:
        paths = [_sweep_one(j) for j in jobs]
    report = verify(paths)
    report.results.append(capability_across_seeds([load_trace(p) for p in paths]))
    sys.stdout.write(report.text())
    return 0 if report.all_pass else 1


def cmd_default_config(a) -> int:
    text = render(RunConfig())
    if a.out:
        Path(a.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emorsi", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run the agent loop and write a CSV trace")
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.add_argument("--steps", type=int)
    r.add_argument("--out")
    r.set_defaults(fn=cmd_run)

    v = sub.add_parser("verify", help="run registry checks over traces")
    v.add_argument("--trace", nargs="+", required=True)
    v.add_argument("--checks", help="comma-separated subset of: " + ",".join(REGISTRY))
    v.add_argument("--out")
    v.set_defaults(fn=cmd_verify)

    f = sub.add_parser("fig3", help="150-step information-curve replication with SVG plot")
    f.add_argument("--config")
    f.add_argument("--seed", type=int)
    f.add_argument("--out", default="fig3.svg")
    f.set_defaults(fn=cmd_fig3)

    s = sub.add_parser("sweep", help="multi-seed runs plus verification")
    s.add_argument("--config")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--steps", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out-dir", default="sweep")
    s.set_defaults(fn=cmd_sweep)

    d = sub.add_parser("default-config", help="print the default configuration file")
    d.add_argument("--out")
    d.set_defaults(fn=cmd_default_config)
    return p


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.fn(a)
    except (ConfigError, TraceParseError, RunAborted, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
