"""Cycle-level model of the 6-stage MAC pipeline.

One issue per cycle, no stalls.  During cycle ``t`` stage ``k`` works on the
transaction issued at ``t - k``; its output register is visible at ``t + 1``,
so a transaction issued at ``t`` retires (S5 output latched) at ``t + 6``.
The per-stage work is exactly :data:`fpmac.datapath.STAGES`, so retired results
are the one-shot :func:`~fpmac.datapath.mac` results.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Sequence

from .datapath import STAGES, MacConfig, MacResult

__all__ = [
    "DEPTH",
    "Transaction",
    "CycleRecord",
    "PipelineState",
    "ThroughputReport",
    "run_stream",
    "trace_to_csv",
    "trace_to_jsonl",
]

DEPTH = len(STAGES)
TRACE_VERSION = 1


@dataclass
class Transaction:
    tid: int
    issue_cycle: int
    operands: tuple[int, int, int]
    payload: Any = None  # output of the last stage this transaction passed
    retire_cycle: int | None = None


@dataclass(frozen=True)
class CycleRecord:
    cycle: int
    occupancy: tuple[int | None, ...]  # transaction id per stage S0..S5
    retired: tuple[int, ...]


@dataclass
class PipelineState:
    cfg: MacConfig
    cycle: int = 0
    regs: list = field(default_factory=lambda: [None] * DEPTH)  # stage output registers
    retired: list = field(default_factory=list)  # (cycle, Transaction)
    trace: list = field(default_factory=list)
    record_trace: bool = False
    _pending: Transaction | None = None
    _next_id: int = 0

    def issue(self, a: int, b: int, c: int) -> Transaction:
        """Present operands to S0 for the current cycle."""
        if self._pending is not None:
            raise RuntimeError(f"already issued in cycle {self.cycle}")
        txn = Transaction(self._next_id, self.cycle, (int(a), int(b), int(c)))
        self._next_id += 1
        self._pending = txn
        return txn

    def occupancy(self) -> tuple[int | None, ...]:
        """Transaction each stage works on during the current cycle."""
        feeding = [self._pending] + self.regs[:-1]
        return tuple(t.tid if t is not None else None for t in feeding)

    def step(self) -> list[Transaction]:
        """Clock edge: every stage consumes its input register.  Returns the
        transactions that retire at the new cycle."""
        feeding = [self._pending] + self.regs[:-1]
        if self.record_trace:
            self._record()
        new_regs = [None] * DEPTH
        for k, txn in enumerate(feeding):
            if txn is None:
                continue
            if k == 0:
                txn.payload = STAGES[0](*txn.operands, self.cfg)
            else:
                txn.payload = STAGES[k](txn.payload, self.cfg)
            new_regs[k] = txn
        self.regs = new_regs
        self._pending = None
        self.cycle += 1

        done = []
        last = self.regs[-1]
        if last is not None:
            last.retire_cycle = self.cycle
            self.retired.append((self.cycle, last))
            done.append(last)
        return done

    def _record(self) -> None:
        retired = tuple(t.tid for cyc, t in self.retired[-1:] if cyc == self.cycle)
        self.trace.append(CycleRecord(self.cycle, self.occupancy(), retired))

    def finish_trace(self) -> None:
        """Append the record for the current (final) cycle."""
        if self.record_trace and (not self.trace or self.trace[-1].cycle != self.cycle):
            self._record()

    @property
    def busy(self) -> bool:
        return self._pending is not None or any(r is not None for r in self.regs[:-1])


@dataclass(frozen=True)
class ThroughputReport:
    cycles: int
    macs_retired: int
    lanes: int

    @property
    def flops(self) -> int:
        return 2 * self.lanes * self.macs_retired

    @property
    def flops_per_cycle(self) -> Fraction:
        return Fraction(self.flops, self.cycles) if self.cycles else Fraction(0)

    def gflops(self, freq_ghz: float) -> float:
        return float(self.flops_per_cycle) * freq_ghz

    def to_dict(self, freq_ghz: float | None = None) -> dict:
        d = {
            "version": TRACE_VERSION,
            "cycles": self.cycles,
            "macs_retired": self.macs_retired,
            "lanes": self.lanes,
            "flops": self.flops,
            "flops_per_cycle": float(self.flops_per_cycle),
        }
        if freq_ghz is not None:
            d["freq_ghz"] = freq_ghz
            d["gflops"] = self.gflops(freq_ghz)
        return d


def run_stream(
    inputs: Iterable[Sequence[int]], cfg: MacConfig, trace: bool = False
) -> tuple[list[MacResult], ThroughputReport, PipelineState]:
    """Drive a stream through the pipeline, one issue per cycle.

    With ``cfg.accumulate_chain`` each input is ``(a, b)`` or ``(a, b, c0)``;
    the first MAC adds ``c0`` (default 0) and every later one adds the previous
    result.  Dependent issues wait for the producer to retire (6 cycles apart).

    ``report.cycles`` counts cycle indices 0 through the final retirement.
    """
    state = PipelineState(cfg, record_trace=trace)
    items = list(inputs)
    if cfg.accumulate_chain:
        acc = None
        for item in items:
            a, b = item[0], item[1]
            c = acc if acc is not None else (item[2] if len(item) > 2 else 0)
            state.issue(a, b, c)
            while True:
                done = state.step()
                if done:
                    acc = done[-1].payload.bits
                    break
    else:
        for a, b, c in items:
            state.issue(a, b, c)
            state.step()
    while state.busy:
        state.step()
    state.finish_trace()

    results = [t.payload for _, t in state.retired]
    cycles = state.retired[-1][0] + 1 if state.retired else 0
    report = ThroughputReport(cycles, len(results), cfg.mode.lanes)
    return results, report, state


_TRACE_FIELDS = ["version", "cycle"] + [f"s{k}" for k in range(DEPTH)] + ["retired"]


def trace_to_csv(records: Iterable[CycleRecord]) -> str:
    """One row per cycle; empty stage cells are bubbles, ``retired`` is a
    space-separated list of transaction ids."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_TRACE_FIELDS)
    for r in records:
        occ = ["" if t is None else t for t in r.occupancy]
        w.writerow([TRACE_VERSION, r.cycle, *occ, " ".join(map(str, r.retired))])
    return buf.getvalue()


def trace_to_jsonl(records: Iterable[CycleRecord]) -> str:
    lines = [
        json.dumps(
            {"version": TRACE_VERSION, "cycle": r.cycle, "stages": list(r.occupancy), "retired": list(r.retired)}
        )
        for r in records
    ]
    return "".join(line + "\n" for line in lines)
