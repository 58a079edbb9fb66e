"""``fpmac`` command line: mac, sweep, dot, pipe, formats.

Operands are hex words (``0x38``).  Machine-readable output layouts are
documented in docs/FORMATS.md.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from .datapath import STAGE_NAMES, MacConfig, MacMode, MacResult, mac, mac_trace
from .formats import (
    FloatClass,
    bits_value,
    decode,
    format_hex,
    get_format,
    parse_hex,
)
from .oracle import (
    SCHEMA_VERSION,
    apply_relu_bits,
    compare_sweep,
    domain_size,
    exact_dot,
    exhaustive_domain,
    quantize_truncate,
    random_domain,
    ulp_distance,
)
from .pipeline import run_stream, trace_to_csv, trace_to_jsonl

EXHAUSTIVE_LIMIT = 1 << 26


class CliError(Exception):
    pass


def _value_str(bits: int, spec) -> str:
    v = bits_value(bits, spec)
    return "NaN" if v != v else repr(v)


def _config(args, **extra) -> MacConfig:
    return MacConfig(mode=MacMode.parse(args.mode), guard_bits=args.guard, relu=not args.no_relu, **extra)


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", newline="") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FPMAC_THREADS", "1")))
    except ValueError:
        raise CliError("FPMAC_THREADS must be an integer") from None


# ── mac ─────────────────────────────────────────────────────────────


def _result_dict(res: MacResult, cfg: MacConfig) -> dict:
    spec = cfg.spec
    lanes = []
    for i, (bits, flags) in enumerate(zip(res.lanes, res.flags)):
        lanes.append(
            {
                "lane": i,
                "bits": format_hex(bits, spec.total_bits),
                "value": _value_str(bits, spec),
                "flags": flags._asdict(),
            }
        )
    return {"version": SCHEMA_VERSION, "mode": cfg.mode.value, "bits": format_hex(res.bits), "lanes": lanes}


def _result_text(res: MacResult, cfg: MacConfig) -> str:
    spec = cfg.spec
    word = format_hex(res.bits)
    if cfg.mode.lanes == 2:
        head = f"lane1={_value_str(res.lanes[1], spec)} lane0={_value_str(res.lanes[0], spec)} ({word})"
    else:
        head = f"{word} ({_value_str(res.bits, spec)})"
    raised = []
    for i, flags in enumerate(res.flags):
        names = [k for k, v in flags._asdict().items() if v]
        if names:
            raised.append(f"lane{i}:" + ",".join(names) if cfg.mode.lanes == 2 else ",".join(names))
    return head + ("\nflags: " + " ".join(raised) if raised else "")


def cmd_mac(args) -> int:
    cfg = _config(args)
    a, b, c = (parse_hex(x, 8) for x in (args.a, args.b, args.c))
    if args.trace:
        res, records = mac_trace(a, b, c, cfg)
    else:
        res, records = mac(a, b, c, cfg), None
    if args.format == "json":
        d = _result_dict(res, cfg)
        if records:
            d["stages"] = [{"stage": n, "record": repr(r)} for n, r in zip(STAGE_NAMES, records)]
        print(json.dumps(d))
    else:
        if records:
            for name, rec in zip(STAGE_NAMES, records):
                print(f"{name}: {rec!r}")
        print(_result_text(res, cfg))
    return 0


# ── sweep ───────────────────────────────────────────────────────────


def check_exhaustive(size: int) -> None:
    if size > EXHAUSTIVE_LIMIT:
        raise CliError(f"exhaustive domain of {size} triples exceeds the {EXHAUSTIVE_LIMIT} limit")


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if args.exhaustive:
        check_exhaustive(domain_size(cfg))
        domain = exhaustive_domain(cfg)
        desc = {"domain": "exhaustive"}
    else:
        domain = random_domain(cfg, args.random, args.seed)
        desc = {"domain": "random", "count": args.random, "seed": args.seed}
    stats = compare_sweep(cfg, domain, workers=_threads())

    if args.format == "csv":
        text = stats.histogram_csv()
    elif args.format == "json":
        d = stats.to_dict()
        d.update(mode=cfg.mode.value, guard_bits=cfg.guard_bits, relu=cfg.relu, **desc)
        text = json.dumps(d, sort_keys=True) + "\n"
    else:
        text = (
            f"mode={cfg.mode.value} guard={cfg.guard_bits} relu={cfg.relu} compared={stats.compared}\n"
            f"max_ulp={stats.max_ulp} mismatches={stats.mismatch_count} "
            f"invalid={stats.invalid} nan_mismatch={stats.nan_mismatch} mean_abs={float(stats.mean_abs):.6g}\n"
        )
    _emit(text, args.output)
    if args.max_ulp is not None and stats.max_ulp > args.max_ulp:
        print(f"FAIL: max_ulp {stats.max_ulp} > {args.max_ulp}", file=sys.stderr)
        return 1
    return 0


# ── dot ─────────────────────────────────────────────────────────────


def read_pairs(path: str) -> list[tuple[int, int]]:
    """One whitespace-separated hex pair per line; ``#`` starts a comment."""
    pairs = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 2:
                raise CliError(f"{path}:{lineno}: expected two hex words, got {len(fields)} fields")
            try:
                pairs.append((parse_hex(fields[0], 8), parse_hex(fields[1], 8)))
            except ValueError as e:
                raise CliError(f"{path}:{lineno}: {e}") from None
    return pairs


def run_dot(pairs: list[tuple[int, int]], cfg: MacConfig) -> dict:
    """Chain MACs with C = previous result; ReLU (if enabled) only on the last."""
    spec = cfg.spec
    inner = MacConfig(cfg.mode, cfg.guard_bits, relu=False)
    acc = 0
    res = None
    for i, (a, b) in enumerate(pairs):
        res = mac(a, b, acc, cfg if i == len(pairs) - 1 else inner)
        acc = res.bits
    pe_lanes = res.lanes if res is not None else (0,) * cfg.mode.lanes

    out = {"version": SCHEMA_VERSION, "mode": cfg.mode.value, "n": len(pairs), "bits": format_hex(acc), "lanes": []}
    for lane in range(cfg.mode.lanes):
        def lane_of(w):
            return (w >> (4 * lane)) & 0xF if cfg.mode.lanes == 2 else w

        dec = [(decode(lane_of(a), spec), decode(lane_of(b), spec)) for a, b in pairs]
        if all(x.is_finite and y.is_finite for x, y in dec):
            ref = quantize_truncate(exact_dot(dec, spec), spec)
            if cfg.relu:
                ref = apply_relu_bits(ref, spec)
            ulp = ulp_distance(pe_lanes[lane], ref, spec)
        else:
            ref, ulp = None, None
        out["lanes"].append(
            {
                "lane": lane,
                "bits": format_hex(pe_lanes[lane], spec.total_bits),
                "value": _value_str(pe_lanes[lane], spec),
                "oracle_bits": None if ref is None else format_hex(ref, spec.total_bits),
                "oracle_value": None if ref is None else _value_str(ref, spec),
                "ulp": ulp,
            }
        )
    return out


def cmd_dot(args) -> int:
    cfg = _config(args)
    out = run_dot(read_pairs(args.input), cfg)
    if args.format == "json":
        print(json.dumps(out))
    else:
        for lane in out["lanes"]:
            print(
                f"lane{lane['lane']}: {lane['bits']} ({lane['value']})  "
                f"oracle {lane['oracle_bits']} ({lane['oracle_value']})  ulp={lane['ulp']}"
            )
    return 0


# ── pipe ────────────────────────────────────────────────────────────


def cmd_pipe(args) -> int:
    if args.length < 0:
        raise CliError("length must be >= 0")
    cfg = _config(args)
    rng = np.random.default_rng(args.seed)
    ops = rng.integers(0, 256, size=(args.length, 3)).tolist()
    _, report, state = run_stream(ops, cfg, trace=bool(args.trace_out))
    if args.trace_out:
        fmt = args.trace_format
        text = trace_to_csv(state.trace) if fmt == "csv" else trace_to_jsonl(state.trace)
        _emit(text, args.trace_out)
    d = report.to_dict(args.freq)
    d["mode"] = cfg.mode.value
    if args.format == "json":
        print(json.dumps(d))
    else:
        line = f"{report.macs_retired} MACs, {report.flops} FLOPs in {report.cycles} cycles: " \
               f"{float(report.flops_per_cycle):.4f} FLOPs/cycle"
        if args.freq is not None:
            line += f", {report.gflops(args.freq):.4f} GFLOPS at {args.freq} GHz"
        print(line)
    return 0


# ── formats ─────────────────────────────────────────────────────────


def format_rows(name: str) -> list[dict]:
    spec = get_format(name)
    rows = []
    for p in range(1 << spec.total_bits):
        d = decode(p, spec)
        rows.append(
            {
                "bits": format_hex(p, spec.total_bits),
                "binary": f"0b{p:0{spec.total_bits}b}",
                "class": d.cls.value,
                "value": _value_str(p, spec) if d.cls is not FloatClass.NAN else "NaN",
            }
        )
    return rows


def cmd_formats(args) -> int:
    try:
        rows = format_rows(args.name)
    except ValueError as e:
        raise CliError(str(e)) from None
    if args.format == "json":
        sys.stdout.write("".join(json.dumps({"version": SCHEMA_VERSION, **r}) + "\n" for r in rows))
    elif args.format == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["version", "bits", "binary", "class", "value"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({"version": SCHEMA_VERSION, **r})
        sys.stdout.write(buf.getvalue())
    else:
        for r in rows:
            print(f"{r['bits']:>5}  {r['binary']}  {r['class']:<9}  {r['value']}")
    return 0


# ── parser ──────────────────────────────────────────────────────────


def _add_mode(p, fmt_choices=("text", "json")):
    p.add_argument("--mode", default="e4m3", choices=[m.value for m in MacMode])
    p.add_argument("--guard", type=int, default=3, help="guard bits (default 3)")
    p.add_argument("--no-relu", action="store_true", help="bypass the ReLU stage")
    p.add_argument("--format", default="text", choices=fmt_choices)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fpmac", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mac", help="evaluate one a*b + c")
    _add_mode(p)
    p.add_argument("--trace", action="store_true", help="dump every stage record")
    for name in ("a", "b", "c"):
        p.add_argument(name)
    p.set_defaults(func=cmd_mac)

    p = sub.add_parser("sweep", help="compare the PE against the exact oracle")
    _add_mode(p, ("text", "json", "csv"))
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--exhaustive", action="store_true")
    g.add_argument("--random", type=int, metavar="N")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-ulp", type=int, default=None, help="exit 1 if exceeded")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dot", help="chained dot product from a file of hex pairs")
    _add_mode(p)
    p.add_argument("input")
    p.set_defaults(func=cmd_dot)

    p = sub.add_parser("pipe", help="pipeline throughput run")
    _add_mode(p)
    p.add_argument("--length", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--freq", type=float, default=None, metavar="GHZ")
    p.add_argument("--trace-out")
    p.add_argument("--trace-format", default="csv", choices=("csv", "jsonl"))
    p.set_defaults(func=cmd_pipe)

    p = sub.add_parser("formats", help="print a format's full value table")
    p.add_argument("name")
    p.add_argument("--format", default="text", choices=("text", "json", "csv"))
    p.set_defaults(func=cmd_formats)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError) as e:
        print(f"fpmac: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
