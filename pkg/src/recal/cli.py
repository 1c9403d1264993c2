"""Command-line entry point: ``recal <subcommand> ...``.

Exit status is 0 on success, 1 on runtime errors and 2 on usage errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import io, metrics
from .data import ComparisonMode
from .exceptions import ReCalError
from .grouping import group_ece_table
from .recursive import apply, ece_trace, fit, fit_global_temperature, parse_pool_spec
from .synth import synth_cohort_scenario, synth_generate, synth_lossy_logits
from .temperature import TemperatureFitConfig
from .transforms import brightness, zoom_out

log = logging.getLogger(__name__)


class UsageError(Exception):
    pass


def _existing_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _existing_dir(path: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"no such directory: {path}")
    return p


def _output_path(path: str) -> Path:
    p = Path(path)
    if not p.parent.is_dir():
        raise UsageError(f"output directory does not exist: {p.parent}")
    return p


def transformed_path(directory: Path, index: int) -> Path:
    return directory / f"t_{index}.csv"


def _fmt_list(values) -> str:
    return ",".join(repr(float(v)) for v in values)


# ---------------------------------------------------------------------------
# subcommands


def cmd_calibrate(args) -> int:
    val_path = _existing_file(args.val)
    out = _output_path(args.out)
    tcfg = TemperatureFitConfig()
    if args.method == "ts":
        val = io.read_logits_csv(val_path)
        start = time.perf_counter()
        cmap = fit_global_temperature(val, ece_bins=args.bins, temperature_config=tcfg)
        elapsed = time.perf_counter() - start
    else:
        if args.pool is None or args.val_t is None:
            raise UsageError("--method recal requires --pool and --val-t")
        pool = parse_pool_spec(args.pool, args.seed)
        val_t_dir = _existing_dir(args.val_t)
        paths = [_existing_file(str(transformed_path(val_t_dir, j))) for j in range(len(pool))]
        val = io.read_logits_csv(val_path)
        val_t = [io.read_logits_csv(p) for p in paths]
        log.info("fitting on %d samples, pool of %d %s transforms",
                 val.n_samples, len(pool), pool.kind.value)
        start = time.perf_counter()
        cmap = fit(val, val_t, pool, max_iterations=args.max_iters, delta=args.delta,
                   ece_bins=args.bins, mode=args.mode, temperature_config=tcfg)
        elapsed = time.perf_counter() - start
    io.save_map(cmap, out)
    log.info("wrote %s", out)
    print(f"learning_time_seconds={elapsed!r}")
    print(f"iterations={cmap.n_iterations}")
    print(f"ece_trace={_fmt_list(ece_trace(cmap))}")
    print(f"fingerprint={cmap.fingerprint}")
    return 0


def cmd_apply(args) -> int:
    map_path = _existing_file(args.map)
    test_path = _existing_file(args.test)
    out = _output_path(args.out)
    cmap = io.load_map(map_path)
    needed = cmap.referenced_transforms()
    transformed = None
    if needed:
        if args.test_t is None:
            raise UsageError("this map needs --test-t with transformed logits")
        test_t_dir = _existing_dir(args.test_t)
        paths = {j: _existing_file(str(transformed_path(test_t_dir, j))) for j in needed}
        transformed = {j: io.read_logits_csv(p) for j, p in paths.items()}
    test = io.read_logits_csv(test_path)
    calibrated = apply(test, transformed, cmap, expected_fingerprint=args.expect_fingerprint)
    io.write_logits_csv(calibrated, out)
    print(f"samples={calibrated.n_samples}")
    return 0


def cmd_evaluate(args) -> int:
    path = _existing_file(args.logits)
    bins_out = _output_path(args.bins_csv) if args.bins_csv else None
    table = io.read_logits_csv(path)
    report = metrics.evaluate(table, args.bins)
    sys.stdout.write(report.to_text())
    if bins_out is not None:
        bins_out.write_text(report.bins.to_csv(), encoding="utf-8")
    return 0


def cmd_group_analysis(args) -> int:
    orig_path = _existing_file(args.logits)
    t_paths = [_existing_file(p) for p in args.transformed]
    grid_out = _output_path(args.grid_out) if args.grid_out else None
    ranks_out = _output_path(args.ranks_out) if args.ranks_out else None
    z = io.read_logits_csv(orig_path)
    z_ts = [io.read_logits_csv(p) for p in t_paths]
    grid = group_ece_table(z, z_ts, args.bins, args.mode)
    header = ["transform"] + [f"g{g}_{what}" for g in range(1, 5) for what in ("ece", "count")]
    lines = [",".join(header)]
    for path, row in zip(t_paths, grid):
        cells = [path.name]
        for e, count in row:
            cells += [repr(float(e)), str(count)]
        lines.append(",".join(cells))
    grid_text = "\n".join(lines) + "\n"

    ranks = metrics.group_rank_analysis([[e for e, _ in row] for row in grid])
    rank_lines = ["group,rank1,rank2,rank3,rank4"]
    for g in range(4):
        rank_lines.append(f"{g + 1}," + _fmt_list(ranks.fractions[g]))
    ranks_text = "\n".join(rank_lines) + "\n"

    print(f"overall_ece={metrics.ece(z, args.bins)!r}")
    sys.stdout.write(grid_text)
    sys.stdout.write(ranks_text)
    if grid_out is not None:
        grid_out.write_text(grid_text, encoding="utf-8")
    if ranks_out is not None:
        ranks_out.write_text(ranks_text, encoding="utf-8")
    return 0


def cmd_transform(args) -> int:
    src = _existing_file(args.input)
    out = _output_path(args.output)
    images = io.read_tensor(src)
    if args.kind == "zoom":
        result = zoom_out(images, args.param, fill=args.fill)
    else:
        result = brightness(images, args.param)
    io.write_tensor(result, out)
    print(f"dims={','.join(str(d) for d in result.dims)}")
    return 0


def cmd_synth_table(args) -> int:
    out = _output_path(args.out)
    table = synth_generate(args.n, args.k, args.alpha, args.sharpen, args.seed)
    io.write_logits_csv(table, out)
    return 0


def cmd_synth_lossy(args) -> int:
    src = _existing_file(args.input)
    out = _output_path(args.out)
    table = synth_lossy_logits(io.read_logits_csv(src), args.lossiness, args.noise, args.seed)
    io.write_logits_csv(table, out)
    return 0


def cmd_synth_scenario(args) -> int:
    out_dir = Path(args.out_dir)
    pool = parse_pool_spec(args.pool, args.seed)
    sc = synth_cohort_scenario(args.n, args.k, args.a_sharp, args.gap, seed=args.seed, pool=pool)
    for name, table, transformed in (("val", sc.val, sc.val_transformed),
                                     ("test", sc.test, sc.test_transformed)):
        (out_dir / f"{name}_t").mkdir(parents=True, exist_ok=True)
        io.write_logits_csv(table, out_dir / f"{name}.csv")
        for j, t in enumerate(transformed):
            io.write_logits_csv(t, transformed_path(out_dir / f"{name}_t", j))
    descriptor = dict(sc.descriptor, pool=args.pool,
                      val_cohort_a=sc.val_cohort.astype(int).tolist(),
                      test_cohort_a=sc.test_cohort.astype(int).tolist())
    (out_dir / "descriptor.json").write_text(json.dumps(descriptor) + "\n", encoding="utf-8")
    print(f"wrote {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recal", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    modes = [m.value for m in ComparisonMode]

    p = sub.add_parser("calibrate", help="learn a calibration map on validation logits")
    p.add_argument("--method", choices=["recal", "ts"], default="recal")
    p.add_argument("--val", required=True, help="labeled validation logits CSV")
    p.add_argument("--val-t", help="directory of transformed tables t_<index>.csv")
    p.add_argument("--pool", help="pool as kind:low:high:count, e.g. z:0.1:0.9:20")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--delta", type=float, default=1e-4)
    p.add_argument("--bins", type=int, default=metrics.DEFAULT_BINS)
    p.add_argument("--mode", choices=modes, default=ComparisonMode.TRANSFORMED_MAX.value)
    p.add_argument("--out", required=True, help="calibration map output path")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("apply", help="apply a calibration map to test logits")
    p.add_argument("--map", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--test-t", help="directory of transformed tables t_<index>.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--expect-fingerprint", help="warn if the map fingerprint differs")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("evaluate", help="ECE, Brier, NLL and error rate of labeled logits")
    p.add_argument("--logits", required=True)
    p.add_argument("--bins", type=int, default=metrics.DEFAULT_BINS)
    p.add_argument("--bins-csv", help="write per-bin reliability statistics here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("group-analysis", help="per-group ECE grid and rank distribution")
    p.add_argument("--logits", required=True, help="labeled original logits CSV")
    p.add_argument("--transformed", nargs="+", required=True, help="transformed logits CSVs")
    p.add_argument("--bins", type=int, default=metrics.DEFAULT_BINS)
    p.add_argument("--mode", choices=modes, default=ComparisonMode.TRANSFORMED_MAX.value)
    p.add_argument("--grid-out")
    p.add_argument("--ranks-out")
    p.set_defaults(func=cmd_group_analysis)

    p = sub.add_parser("transform", help="zoom-out or brightness on an image tensor file")
    p.add_argument("--kind", choices=["zoom", "brightness"], required=True)
    p.add_argument("--param", type=float, required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--fill", type=float, default=0.0, help="zoom-out canvas value")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("synth", help="generate synthetic logits")
    synth = p.add_subparsers(dest="synth_command", required=True)
    q = synth.add_parser("table", help="Dirichlet logits table")
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--k", type=int, required=True)
    q.add_argument("--alpha", type=float, default=1.0)
    q.add_argument("--sharpen", type=float, default=1.0)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_synth_table)
    q = synth.add_parser("lossy", help="simulated lossy-transform logits of a table")
    q.add_argument("--in", dest="input", required=True)
    q.add_argument("--lossiness", type=float, required=True)
    q.add_argument("--noise", type=float, default=0.0)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_synth_lossy)
    q = synth.add_parser("scenario", help="two-cohort validation/test scenario")
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--k", type=int, required=True)
    q.add_argument("--a-sharp", type=float, default=3.0)
    q.add_argument("--gap", type=float, default=0.4)
    q.add_argument("--pool", default="s:0.5:0.9:10")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out-dir", required=True)
    q.set_defaults(func=cmd_synth_scenario)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"recal: error: {exc}", file=sys.stderr)
        return 2
    except (ReCalError, OSError) as exc:
        print(f"recal: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
