"""Command-line entry point: ``ransec <subcommand>``.

Subcommands: run, compare, matrix, bench, plot-data, dump, suites. See
``docs/cli.md`` for the full reference. Exit status is 0 on success, 1 when an
experiment fails at runtime, 2 for usage, configuration and schema errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

from . import bench as bench_mod
from . import wire
from .config import (SCHEMA_VERSION, coerce, effective_values, env_layer, field_names,
                     load_scenario_file, resolve)
from .errors import (ConfigError, ExperimentAborted, MalformedPacket, RansecError, SchemaError,
                     UnknownSuite)
from .harness import (DEFAULT_CP_REPETITIONS, DEFAULT_UP_REPETITIONS, run_cp_experiment,
                      run_up_experiment, write_samples)
from .scenario import E1, F1C, F1U, INTERFACES, LinkSpec, ScenarioConfig, _ALLOWED_KINDS
from .stats import (SUMMARY_COLUMNS, compare_scenarios, read_csv, summary_from_row,
                    summary_row, write_csv)
from .suites import ESP_SUITES, UU_NIA2_NEA2, get_suite, suite_catalog

RUN_COLUMNS = SUMMARY_COLUMNS + ("esp_ops", "payload_size", "mode", "experiment", "procedure",
                                 "accel_flag")
MATRIX_COLUMNS = SUMMARY_COLUMNS + ("interface", "suite", "experiment", "procedure", "esp_ops",
                                    "payload_size", "accel_flag")
MATRIX_INTERFACES = (F1U, F1C, E1)
COMPARE_COLUMNS = ("baseline", "secured", "baseline_mean_us", "secured_mean_us", "delta_us",
                   "delta_ci_low_us", "delta_ci_high_us", "verdict", "baseline_crypto_ops",
                   "secured_crypto_ops", "baseline_esp_ops", "secured_esp_ops")
_PROCEDURE_ON = {F1C: "UeContextSetup", E1: "BearerContextSetup"}


class UsageError(RansecError):
    pass


# -- run -----------------------------------------------------------------------

def _flag_layer(args) -> dict:
    out = {}
    for name in ("name", "experiment", "mode", "repetitions", "payload_size", "warmup", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            out[name] = value
    if args.secure is not None:
        out["@secure"] = args.secure
    if args.transport is not None:
        out["@transport"] = args.transport
    for item in args.link or []:
        target, sep, value = item.partition("=")
        iface, dot, fname = target.rpartition(".")
        dotted = f"links.{iface}.{fname}"
        if not sep or not dot or dotted not in field_names():
            raise ConfigError(f"bad --link {item!r}; expected IFACE.FIELD=VALUE", field=dotted)
        out[dotted] = coerce(dotted, value)
    for item in args.key or []:
        iface, sep, value = item.partition("=")
        if not sep or iface not in INTERFACES:
            raise ConfigError(f"bad --key {item!r}; expected IFACE=HEX", field=f"keys.{iface}")
        out[f"keys.{iface}"] = coerce(f"keys.{iface}", value)
    if args.out is not None:
        out["output.csv"] = args.out
    if args.samples is not None:
        out["output.samples"] = args.samples
    return out


def load_run_config(args, environ=os.environ) -> tuple[ScenarioConfig, dict]:
    file_layer = load_scenario_file(args.scenario) if args.scenario else None
    return resolve(file_layer, env_layer(environ), _flag_layer(args))


def _accel() -> bool:
    return bench_mod.aes_acceleration_active()


def _emit_rows(rows, columns, path, out):
    if path:
        write_csv(path, rows, columns)
    else:
        write_csv(out, rows, columns)


def cmd_run(args, out=None) -> int:
    out = out or sys.stdout
    scenario, outputs = load_run_config(args)
    if args.show_config:
        for key, value in sorted(effective_values(scenario, outputs).items()):
            print(f"{key} = {value.hex() if isinstance(value, bytes) else value}", file=out)
        return 0
    accel = _accel()
    if scenario.experiment == "up-echo":
        res = run_up_experiment(scenario, scenario.repetitions or DEFAULT_UP_REPETITIONS,
                                scenario.payload_size, scenario.warmup,
                                keep_samples=bool(outputs.get("samples")))
        rows = [summary_row(res.scenario_id, res.summary, res.crypto_ops, esp_ops=res.esp_ops,
                            payload_size=scenario.payload_size, mode=scenario.mode,
                            experiment=scenario.experiment, procedure="echo",
                            accel_flag=accel)]
        samples = res.samples_ns
    elif scenario.experiment == "cp-procedures":
        res = run_cp_experiment(scenario, scenario.repetitions or DEFAULT_CP_REPETITIONS,
                                warmup=scenario.warmup,
                                keep_samples=bool(outputs.get("samples")))
        rows = [summary_row(f"{res.scenario_id}/{proc}", summ, res.crypto_ops,
                            esp_ops=res.ops_per_run.get("esp", 0), payload_size="",
                            mode=scenario.mode, experiment=scenario.experiment, procedure=proc,
                            accel_flag=accel)
                for proc, summ in res.summaries().items()]
        samples = None
        if res.samples_ns:
            samples = res.samples_ns["UeContextSetup"] + res.samples_ns["BearerContextSetup"]
    else:
        suites = sorted({s.security for s in scenario.links.values() if s.security}) or None
        return _bench(suites, bench_mod.DEFAULT_SIZES,
                      scenario.repetitions or bench_mod.DEFAULT_REPETITIONS,
                      outputs.get("csv"), out, seed=scenario.seed)
    _emit_rows(rows, RUN_COLUMNS, outputs.get("csv"), out)
    if samples is not None:
        write_samples(outputs["samples"], samples)
    return 0


# -- compare -------------------------------------------------------------------

def _load_summary_csv(path):
    columns, rows = read_csv(path)
    for col in SUMMARY_COLUMNS:
        if col not in columns:
            raise SchemaError(f"{path}: missing column {col!r}")
    return rows


def compare_rows(baseline_rows, secured_rows) -> list[dict]:
    if len(baseline_rows) != len(secured_rows):
        raise SchemaError(f"row count differs: {len(baseline_rows)} vs {len(secured_rows)}")
    out = []
    for b, s in zip(baseline_rows, secured_rows):
        try:
            rep = compare_scenarios(summary_from_row(b), summary_from_row(s))
        except ValueError as exc:
            raise SchemaError(f"{b['scenario_id']} vs {s['scenario_id']}: {exc}") from None
        out.append({
            "baseline": b["scenario_id"], "secured": s["scenario_id"],
            "baseline_mean_us": float(b["mean_us"]), "secured_mean_us": float(s["mean_us"]),
            "delta_us": rep.delta_mean, "delta_ci_low_us": rep.delta_ci[0],
            "delta_ci_high_us": rep.delta_ci[1], "verdict": rep.verdict,
            "baseline_crypto_ops": b["crypto_ops"], "secured_crypto_ops": s["crypto_ops"],
            "baseline_esp_ops": b.get("esp_ops", ""), "secured_esp_ops": s.get("esp_ops", ""),
        })
    return out


def _table(rows, columns) -> str:
    def cell(v):
        return f"{v:.3f}" if isinstance(v, float) else str(v)
    cells = [[cell(r.get(c, "")) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(line.rstrip() for line in lines) + "\n"


def cmd_compare(args, out=None) -> int:
    out = out or sys.stdout
    rows = compare_rows(_load_summary_csv(args.baseline), _load_summary_csv(args.secured))
    if args.csv:
        write_csv(out, rows, COMPARE_COLUMNS)
    else:
        out.write(_table(rows, COMPARE_COLUMNS))
    return 0


# -- matrix --------------------------------------------------------------------

def matrix_plan() -> list[tuple[str, Optional[str]]]:
    """(interface, suite or None for the baseline) for every valid pair."""
    plan = []
    for iface in MATRIX_INTERFACES:
        plan.append((iface, None))
        plan += [(iface, s.id) for s in suite_catalog()
                 if s.kind in _ALLOWED_KINDS[iface]]
    return plan


def matrix_row_id(iface: str, suite: Optional[str]) -> str:
    return f"{iface}/{suite or 'baseline'}"


def run_matrix_row(iface, suite, repetitions=None, payload_size=1024, warmup=100, seed=0,
                   accel=None) -> dict:
    links = {iface: LinkSpec(iface, suite)}
    accel = _accel() if accel is None else accel
    row_id = matrix_row_id(iface, suite)
    if iface == F1U:
        sc = ScenarioConfig(mode="disaggregated", links=links, experiment="up-echo",
                            payload_size=payload_size, warmup=warmup, seed=seed, name=row_id)
        res = run_up_experiment(sc, repetitions or DEFAULT_UP_REPETITIONS, payload_size, warmup)
        return summary_row(row_id, res.summary, res.crypto_ops, interface=iface,
                           suite=suite or "none", experiment="up-echo", procedure="echo",
                           esp_ops=res.esp_ops, payload_size=payload_size, accel_flag=accel)
    sc = ScenarioConfig(mode="disaggregated", links=links, experiment="cp-procedures",
                        seed=seed, name=row_id)
    res = run_cp_experiment(sc, repetitions or DEFAULT_CP_REPETITIONS, warmup=min(warmup, 100))
    proc = _PROCEDURE_ON[iface]
    return summary_row(row_id, res.summaries()[proc], res.crypto_ops, interface=iface,
                       suite=suite or "none", experiment="cp-procedures", procedure=proc,
                       esp_ops=res.ops_per_run.get("esp", 0), payload_size="",
                       accel_flag=accel)


def run_matrix(path, repetitions=None, payload_size=1024, warmup=100, seed=0, progress=None,
               plan=None) -> list[dict]:
    """Run every matrix row not already present in ``path`` and append it there.

    Rows are keyed by scenario id and written as soon as they finish, so an
    interrupted campaign resumes where it stopped.
    """
    done = {}
    if os.path.exists(path) and os.path.getsize(path):
        columns, rows = read_csv(path)
        if tuple(columns) != MATRIX_COLUMNS:
            raise SchemaError(f"{path}: existing file has columns {columns}, expected "
                              f"{list(MATRIX_COLUMNS)}")
        done = {r["scenario_id"]: r for r in rows}
    accel = _accel()
    for iface, suite in plan or matrix_plan():
        row_id = matrix_row_id(iface, suite)
        if row_id in done:
            continue
        row = run_matrix_row(iface, suite, repetitions, payload_size, warmup, seed, accel)
        write_csv(path, [row], MATRIX_COLUMNS, append=True)
        done[row_id] = row
        if progress:
            progress(row)
    _, rows = read_csv(path)
    return rows


def cmd_matrix(args, out=None) -> int:
    out = out or sys.stdout
    if args.parallel:
        raise UsageError("parallel execution is forbidden for latency experiments; "
                         "rows must run sequentially to keep timings comparable")
    if args.fresh and os.path.exists(args.out):
        os.remove(args.out)

    def progress(row):
        print(f"{row['scenario_id']}: n={row['n']} mean={row['mean_us']:.3f} us", file=out)

    run_matrix(args.out, args.repetitions, args.payload_size, args.warmup, args.seed, progress)
    return 0


# -- bench ---------------------------------------------------------------------

def parse_size(text: str) -> int:
    text = text.strip().upper().removesuffix("B").removesuffix("I")
    mult = {"K": bench_mod.KIB, "M": bench_mod.MIB, "G": bench_mod.GIB}.get(text[-1:], 1)
    number = text[:-1] if mult != 1 else text
    try:
        value = int(number) * mult
    except ValueError:
        raise UsageError(f"bad size {text!r}; use e.g. 1024, 64K, 256M") from None
    if value < 1:
        raise UsageError("sizes must be positive")
    return value


def parse_sizes(text: str) -> list[int]:
    """``1K..256M`` (every power of two in between) or a comma list."""
    if ".." in text:
        lo, hi = (parse_size(t) for t in text.split("..", 1))
        sizes = []
        while lo <= hi:
            sizes.append(lo)
            lo *= 2
        return sizes
    return [parse_size(t) for t in text.split(",")]


def _bench(suites, sizes, repetitions, path, out, seed=0) -> int:
    names = suites or [s.id for s in ESP_SUITES] + [UU_NIA2_NEA2.id]
    curves = bench_mod.bench_suites([get_suite(n) for n in names], sizes, repetitions, seed)
    rows = [r for c in curves for r in c.rows()]
    _emit_rows(rows, bench_mod.BENCH_COLUMNS, path, out)
    if any(c.truncated for c in curves):
        print("warning: allocation failed; some curves are truncated", file=sys.stderr)
    return 0


def cmd_bench(args, out=None) -> int:
    out = out or sys.stdout
    suites = [get_suite(s.strip()).id for s in args.suites.split(",")] if args.suites else None
    if args.parallel:
        demo = bench_mod.demo_parallel_ctr(parse_size(args.parallel_size), args.parallel)
        print(f"NEA2 CTR over {args.parallel_size}: sequential {demo.sequential_s:.4f} s, "
              f"{demo.workers} segments {demo.parallel_s:.4f} s, identical={demo.identical}",
              file=out)
        return 0
    if args.runtime_1gib:
        names = suites or [s.id for s in ESP_SUITES]
        rows = []
        for n in names:
            chunk = bench_mod.CHUNK_SIZE if args.chunked else None
            rows.append({"suite": n, "runtime_s": bench_mod.bench_runtime_1gib(n, chunk),
                         "mode": "chunked" if args.chunked else "single",
                         "accel_flag": _accel()})
        _emit_rows(rows, ("suite", "runtime_s", "mode", "accel_flag"), args.out, out)
        return 0
    if args.uu_breakdown:
        curves = bench_mod.bench_uu_breakdown(parse_sizes(args.sizes), args.repetitions)
        rows = [r for c in curves.values() for r in c.rows()]
        _emit_rows(rows, bench_mod.BENCH_COLUMNS, args.out, out)
        return 0
    return _bench(suites, parse_sizes(args.sizes), args.repetitions, args.out, out)


def cmd_plot_data(args, out=None) -> int:
    out = out or sys.stdout
    columns, rows = read_csv(args.bench_csv)
    for col in ("suite", "size_bytes", "runtime_s", "throughput_Bps"):
        if col not in columns:
            raise SchemaError(f"{args.bench_csv}: missing column {col!r}")
    curves = {}
    for r in rows:
        curve = curves.setdefault(r["suite"], bench_mod.BenchCurve(
            r["suite"], [], r.get("accel_flag") == "true"))
        curve.points.append(bench_mod.BenchPoint(int(r["size_bytes"]),
                                                 float(r["throughput_Bps"]),
                                                 float(r["runtime_s"])))
    out.write(bench_mod.plot_data(list(curves.values())))
    return 0


# -- dump / suites ---------------------------------------------------------------

def _example_pdu(kind: str, suite) -> bytes:
    from .links import DtlsEndpoint, PdcpEntity, SecurityAssociation
    payload = bytes(range(32))
    if kind == "gtpu":
        return wire.encode_gtpu(1, payload)
    if kind == "esp":
        s = suite or get_suite("AES-GCM-128")
        return SecurityAssociation(0x1000, s, bytes(s.key_bytes),
                                   bytes(s.auth_key_len)).protect(payload)
    if kind == "dtls":
        return DtlsEndpoint(bytes(16), bytes(4), bytes(16), bytes(4)).protect(payload)
    return PdcpEntity(1, bytes(16), bytes(16)).protect(payload)


def cmd_dump(args, out=None) -> int:
    out = out or sys.stdout
    suite = get_suite(args.suite) if args.suite else None
    if args.hex is None:
        data = _example_pdu(args.kind, suite)
        if args.kind == "esp" and suite is None:
            suite = get_suite("AES-GCM-128")
    else:
        if args.kind == "esp" and suite is None:
            raise UsageError("dumping ESP needs --suite to locate the IV and ICV")
        text = sys.stdin.read() if args.hex == "-" else args.hex
        try:
            data = bytes.fromhex("".join(text.split()))
        except ValueError:
            raise UsageError("input is not valid hex") from None
    for off in range(0, len(data), 16):
        chunk = data[off:off + 16]
        print(f"{off:08x}  {chunk.hex(' '):<47}", file=out)
    for name, value in wire.annotate(args.kind, data, suite, not args.no_integrity):
        print(f"{name:>14}: {value}", file=out)
    return 0


def cmd_suites(args, out=None) -> int:
    out = out or sys.stdout
    rows = [{"suite": s.id, "kind": s.kind, "cipher": s.cipher, "integrity": s.integrity,
             "key_bits": s.key_len, "iv_bytes": s.iv_len, "icv_bytes": s.tag_len,
             "interfaces": ",".join(i for i in INTERFACES if s.kind in _ALLOWED_KINDS[i])}
            for s in suite_catalog()]
    out.write(_table(rows, list(rows[0])))
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ransec", description="Security-latency emulator for monolithic and "
        "disaggregated 5G RAN pipelines.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a scenario file and overrides",
                         description="Settings resolve as flag > RANSEC_* environment > "
                         f"scenario file (schema_version {SCHEMA_VERSION}) > default.")
    run.add_argument("scenario", nargs="?", help="YAML scenario file")
    run.add_argument("--experiment", choices=("up-echo", "cp-procedures", "bench"))
    run.add_argument("--mode", choices=("monolithic", "disaggregated"))
    run.add_argument("--secure", help="none | all | IFACE=SUITE[,IFACE=SUITE...]")
    run.add_argument("--transport", choices=("in-process", "udp-loopback"),
                     help="transport for every link")
    run.add_argument("--link", action="append", metavar="IFACE.FIELD=VALUE",
                     help="set one link field, e.g. F1-U.added_delay_us=50 (repeatable)")
    run.add_argument("--key", action="append", metavar="IFACE=HEX",
                     help="master key seed for one link (repeatable)")
    run.add_argument("-n", "--repetitions", type=int)
    run.add_argument("--payload-size", type=int)
    run.add_argument("--warmup", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--name", help="scenario id used in output rows")
    run.add_argument("-o", "--out", help="summary CSV path (default: stdout)")
    run.add_argument("--samples", help="raw samples file, one duration in ns per line")
    run.add_argument("--show-config", action="store_true",
                     help="print the resolved settings and exit")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="overhead table between two summary CSVs")
    cmp_.add_argument("baseline")
    cmp_.add_argument("secured")
    cmp_.add_argument("--csv", action="store_true", help="emit CSV instead of a table")
    cmp_.set_defaults(func=cmd_compare)

    mat = sub.add_parser("matrix", help="every valid (interface, suite) pair plus baselines")
    mat.add_argument("-o", "--out", default="matrix.csv")
    mat.add_argument("-n", "--repetitions", type=int,
                     help=f"samples per row (default {DEFAULT_UP_REPETITIONS} echoes / "
                     f"{DEFAULT_CP_REPETITIONS} registrations)")
    mat.add_argument("--payload-size", type=int, default=1024)
    mat.add_argument("--warmup", type=int, default=100)
    mat.add_argument("--seed", type=int, default=0)
    mat.add_argument("--fresh", action="store_true", help="discard rows from an earlier run")
    mat.add_argument("--parallel", action="store_true", help=argparse.SUPPRESS)
    mat.set_defaults(func=cmd_matrix)

    b = sub.add_parser("bench", help="throughput/runtime sweep of the protect paths")
    b.add_argument("--suites", help="comma list (default: all ESP suites and NIA2+NEA2)")
    b.add_argument("--sizes", default="1K..256M", help="1K..256M or a comma list")
    b.add_argument("-r", "--repetitions", type=int, default=bench_mod.DEFAULT_REPETITIONS)
    b.add_argument("-o", "--out")
    b.add_argument("--runtime-1gib", action="store_true", help="time protecting 1 GiB")
    b.add_argument("--chunked", action="store_true", help="with --runtime-1gib: 64 MiB chunks")
    b.add_argument("--uu-breakdown", action="store_true",
                   help="NIA2+NEA2 composite next to NIA2 and NEA2 alone")
    b.add_argument("--parallel", type=int, metavar="WORKERS",
                   help="CTR parallelism demonstration instead of the sweep")
    b.add_argument("--parallel-size", default="16M")
    b.set_defaults(func=cmd_bench)

    pd = sub.add_parser("plot-data", help="gnuplot columns from a bench CSV")
    pd.add_argument("bench_csv")
    pd.set_defaults(func=cmd_plot_data)

    d = sub.add_parser("dump", help="hex and field dump of an encoded PDU")
    d.add_argument("kind", choices=("gtpu", "esp", "dtls", "pdcp"))
    d.add_argument("hex", nargs="?", help="PDU as hex, '-' for stdin; omit for an example")
    d.add_argument("--suite", help="ESP suite (needed to split IV/ICV)")
    d.add_argument("--no-integrity", action="store_true", help="PDCP PDU without MAC-I")
    d.set_defaults(func=cmd_dump)

    s = sub.add_parser("suites", help="print the suite catalog")
    s.set_defaults(func=cmd_suites)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SchemaError, UnknownSuite, UsageError, MalformedPacket) as exc:
        print(f"ransec {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ExperimentAborted, RansecError, OSError) as exc:
        print(f"ransec {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
