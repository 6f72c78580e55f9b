"""Command-line interface: ``funcci {smooth,tune,test,simulate,pairwise}``."""

import argparse
import itertools
import json
import logging
import sys
import time
from typing import List, Optional

import numpy as np

from funcci import __version__
from funcci.ccco import prepare, run_test, smoothing_setup
from funcci.config import PipelineConfig, load_config
from funcci.dataset import read_panel
from funcci.errors import IO_ERROR_EXIT, ConfigError, FunCIError
from funcci.simlab import SCHEDULES, SimulationSpec, rejection_rate, run_replications, write_table
from funcci.smoothing import TimeKernelCache, gcv_smoothing, smooth_channel

log = logging.getLogger("funcci")

EIGEN_HEAD = 10


def _load_run_config(path):
    """Pipeline config plus the optional ``input`` section of an echoed report/config."""
    if path is None:
        return PipelineConfig(), {}
    cfg = load_config(path)
    with open(path) as fh:
        raw = json.load(fh)
    input_opts = raw.get("input", {}) if isinstance(raw, dict) else {}
    if not isinstance(input_opts, dict):
        raise ConfigError(f"{path}: 'input' must be an object")
    return cfg, input_opts


def _resolve(args):
    cfg, input_opts = _load_run_config(args.config)
    cfg = cfg.updated(
        grid_l=args.grid_l,
        seed=args.seed,
        draws=args.draws,
        pvalue_method=getattr(args, "method", None),
    )
    if args.balanced is not None:
        cfg = cfg.updated(balanced=args.balanced)
    opts = {
        "format": getattr(args, "format", None) or input_opts.get("format", "long_csv"),
        "x": getattr(args, "x", None) or input_opts.get("x", "X"),
        "y": getattr(args, "y", None) or input_opts.get("y", "Y"),
        "z": getattr(args, "z", None) or input_opts.get("z", "Z"),
    }
    return cfg, opts


def _write_text(text: str, path: Optional[str]):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def build_report(result, data, cfg: PipelineConfig, opts: dict) -> dict:
    """Structured report of one test run; ``timing`` is the only nondeterministic part."""
    res = result.to_dict(eigen_head=EIGEN_HEAD)
    res["eigenvalues_head"] = res.pop("eigenvalues")
    res["eigenvalue_count"] = int(len(result.eigenvalues))
    res["eigenvalue_sum"] = float(np.sum(result.eigenvalues))
    return {
        "version": __version__,
        "result": res,
        "input": dict(opts, summary=data.summary()),
        "pipeline": cfg.to_dict(),
        "timing": {k: float(v) for k, v in sorted(result.timing.items())},
    }


def cmd_test(args) -> int:
    cfg, opts = _resolve(args)
    clock = time.perf_counter()
    panel = read_panel(args.input, opts["format"])
    data = panel.triple(opts["x"], opts["y"], opts["z"])
    t_ingest = time.perf_counter() - clock
    if data.dropped:
        log.info("dropped %d incomplete subject(s)", data.dropped)
    result = run_test(data, cfg)
    result.timing["ingest"] = t_ingest
    report = build_report(result, data, cfg, opts)
    _write_text(_json_text(report), args.output)
    log.info("T_n=%.6g p=%.6g n=%d", result.statistic, result.p_value, result.n)
    return 0


def cmd_tune(args) -> int:
    cfg, opts = _resolve(args)
    data = read_panel(args.input, opts["format"]).triple(opts["x"], opts["y"], opts["z"])
    prep = prepare(data, cfg)
    rows = []
    if prep.delta_grid is not None:
        for cand, score in zip(prep.delta_grid, prep.delta_scores):
            rows.append(("delta_n", cand, score, int(cand == prep.delta_star)))
    for cand, score in zip(prep.epsilon_grid, prep.epsilon_scores):
        rows.append(("epsilon_n", cand, score, int(cand == prep.epsilon_star)))
    lines = ["parameter,candidate,score,selected"]
    lines += [f"{p},{c!r},{s!r},{sel}" for p, c, s, sel in rows]
    _write_text("\n".join(lines) + "\n", args.output)
    g = {k: prep.grams[k].bandwidth for k in "XYZ"}
    log.info(
        "gamma_T=%s gamma_X=%.6g gamma_Y=%.6g gamma_Z=%.6g balanced=%s",
        prep.gamma_T, g["X"], g["Y"], g["Z"], prep.balanced,
    )
    return 0


def cmd_smooth(args) -> int:
    cfg, opts = _resolve(args)
    data = read_panel(args.input, opts["format"]).triple(opts["x"], opts["y"], opts["z"])
    rule, gamma_T = smoothing_setup(cfg)
    cache = TimeKernelCache(gamma_T)
    delta = args.delta
    if delta is None:
        delta, _ = gcv_smoothing(data.channels, gamma_T, cfg.grid_T, cache)
    log.info("gamma_T=%.6g delta_n=%g", gamma_T, delta)
    out = ["subject_id,channel,time,value"]
    for name, channel in zip(data.names, data.channels):
        sm = smooth_channel(channel, gamma_T, delta, rule, cache)
        for s, vals in zip(channel, sm.grid_values):
            out += [f"{s.subject_id},{name},{t!r},{float(v)!r}" for t, v in zip(rule.grid.tolist(), vals)]
    _write_text("\n".join(out) + "\n", args.output)
    return 0


def cmd_simulate(args) -> int:
    cfg, _ = _resolve(args)
    spec = SimulationSpec(
        model_id=args.model,
        n=args.n,
        schedule=args.schedule,
        m=args.m,
        reps=args.reps,
        seed=args.sim_seed,
    )
    rows = run_replications(spec, cfg, jobs=args.jobs)
    to_stdout = args.output in (None, "-")
    write_table(rows, sys.stdout if to_stdout else args.output)
    pvals = [r["p_value"] for r in rows]
    failed = sum(p is None for p in pvals)
    rate = rejection_rate(pvals, args.level)
    print(
        f"model={spec.model_id} n={spec.n} schedule={spec.schedule} m={spec.m} reps={spec.reps} "
        f"failed={failed} rejection_rate@{args.level:g}={rate:.4f}",
        file=sys.stderr if to_stdout else sys.stdout,
    )
    return 0


def cmd_pairwise(args) -> int:
    """Test every pair of channels for conditional independence given one channel."""
    cfg, opts = _resolve(args)
    panel = read_panel(args.input, opts["format"])
    cond = args.condition
    names = args.channels or [c for c in panel.channel_names if c != cond]
    if cond in names:
        raise ConfigError("the conditioning channel cannot also be tested")
    k = len(names)
    pmat = [[1.0 if i == j else None for j in range(k)] for i in range(k)]
    nmat = [[None] * k for _ in range(k)]
    for i, j in itertools.combinations(range(k), 2):
        try:
            data = panel.triple(names[i], names[j], cond)
            res = run_test(data, cfg)
        except FunCIError as exc:
            log.warning("pair (%s, %s) skipped: %s", names[i], names[j], exc)
            continue
        pmat[i][j] = pmat[j][i] = res.p_value
        nmat[i][j] = nmat[j][i] = res.n

    def table(mat):
        lines = ["channel," + ",".join(names)]
        for name, row in zip(names, mat):
            lines.append(name + "," + ",".join("" if v is None else repr(v) for v in row))
        return "\n".join(lines) + "\n"

    _write_text(table(pmat), args.output)
    if args.sizes:
        _write_text(table(nmat), args.sizes)
    return 0


def _add_common(p, data=True):
    if data:
        p.add_argument("--input", "-i", required=True, help="data file")
        p.add_argument("--format", choices=["long_csv", "wide_csv"], help="input layout (default long_csv)")
    p.add_argument("--config", "-c", help="JSON file of pipeline settings (a previous report also works)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--balanced", dest="balanced", action="store_const", const=True, default=None,
                   help="use the common-grid quadrature shortcut")
    g.add_argument("--unbalanced", dest="balanced", action="store_const", const=False,
                   help="always smooth the curves")
    p.add_argument("--grid-l", type=int, help="quadrature intervals on [0, 1] (even)")
    p.add_argument("--seed", type=int, help="Monte Carlo seed for the null distribution")
    p.add_argument("--draws", type=int, help="Monte Carlo draws for the null distribution")
    p.add_argument("--output", "-o", help="output path (default stdout)")


def _add_channels(p):
    p.add_argument("--x", help="channel tested as X (default X)")
    p.add_argument("--y", help="channel tested as Y (default Y)")
    p.add_argument("--z", help="conditioning channel (default Z)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="funcci",
        description="Kernel conditional independence test for functional data.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="run the full test on a data file")
    _add_common(p)
    _add_channels(p)
    p.add_argument("--method", choices=["mc", "satterthwaite"], help="null tail evaluation")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("tune", help="GCV score tables for delta_n and epsilon_n")
    _add_common(p)
    _add_channels(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("smooth", help="reconstructed curves on the quadrature grid")
    _add_common(p)
    _add_channels(p)
    p.add_argument("--delta", type=float, help="smoothing constant (default: chosen by GCV)")
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("simulate", help="replicated simulation sweep")
    _add_common(p, data=False)
    p.add_argument("--model", type=int, required=True, choices=range(1, 6))
    p.add_argument("--n", type=int, default=100, help="subjects per replication")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--m", type=int, default=50, help="grid intervals / points per curve")
    p.add_argument("--schedule", choices=SCHEDULES, default="balanced")
    p.add_argument("--sim-seed", type=int, default=0, help="seed for the simulated data")
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--method", choices=["mc", "satterthwaite"], help="null tail evaluation")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pairwise", help="p-value matrix over all channel pairs given one channel")
    _add_common(p)
    p.add_argument("--condition", required=True, help="conditioning channel")
    p.add_argument("--channels", nargs="+", help="channels to pair (default: all others)")
    p.add_argument("--sizes", help="also write the matrix of sample sizes here")
    p.add_argument("--method", choices=["mc", "satterthwaite"], help="null tail evaluation")
    p.set_defaults(func=cmd_pairwise)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except FunCIError as exc:
        print(f"funcci: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        target = exc.filename or getattr(args, "input", "")
        print(f"funcci: error: cannot access {target}: {exc.strerror or exc}", file=sys.stderr)
        return IO_ERROR_EXIT


if __name__ == "__main__":
    sys.exit(main())
