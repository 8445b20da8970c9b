"""Deterministic CSV traces, per-seed aggregates and run metadata.

Floats are written with repr (shortest round-trip form), so a parsed trace
reproduces the in-memory values exactly and identical runs produce identical
bytes. Wall-clock times are zeroed unless timing is explicitly requested,
because measured times would break byte-level reproducibility.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .driver import RunTrace, TraceRow

TRACE_COLUMNS = ("k", "phi", "gap", "dist_sq", "contacts",
                 "normalized_rounds", "grad_norm_sq", "wall_ms")

AGGREGATE_COLUMNS = ("k", "phi_mean", "phi_std", "gap_mean", "gap_std",
                     "grad_norm_sq_mean", "grad_norm_sq_std",
                     "contacts", "normalized_rounds")


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def trace_to_csv(trace: RunTrace, *, timing: bool = False) -> str:
    lines = [",".join(TRACE_COLUMNS)]
    for row in trace.rows:
        wall = row.wall_ms if timing else 0.0
        lines.append(",".join([
            str(row.k), _fmt(row.phi), _fmt(row.gap), _fmt(row.dist_sq),
            str(row.contacts), _fmt(row.normalized_rounds),
            _fmt(row.grad_norm_sq), _fmt(wall),
        ]))
    return "\n".join(lines) + "\n"


def trace_from_csv(text: str) -> RunTrace:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or tuple(lines[0].split(",")) != TRACE_COLUMNS:
        raise ValueError("unrecognized trace header")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        rows.append(TraceRow(
            k=int(parts[0]), phi=float(parts[1]), gap=float(parts[2]),
            dist_sq=float(parts[3]), contacts=int(parts[4]),
            normalized_rounds=float(parts[5]), grad_norm_sq=float(parts[6]),
            wall_ms=float(parts[7]),
        ))
    blind = any(math.isnan(r.gap) for r in rows)
    return RunTrace(rows=rows, blind=blind)


def aggregate_rows(traces) -> list[dict]:
    """Mean and spread across seeds, iteration by iteration.

    Communication counters are identical across seeds by construction and are
    taken from the first trace.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("nothing to aggregate")
    length = len(traces[0].rows)
    if any(len(t.rows) != length for t in traces):
        raise ValueError("traces disagree on length")
    out = []
    for i in range(length):
        phis = np.array([t.rows[i].phi for t in traces])
        gaps = np.array([t.rows[i].gap for t in traces])
        gns = np.array([t.rows[i].grad_norm_sq for t in traces])
        lead = traces[0].rows[i]
        out.append({
            "k": lead.k,
            "phi_mean": float(np.mean(phis)), "phi_std": float(np.std(phis)),
            "gap_mean": float(np.mean(gaps)), "gap_std": float(np.std(gaps)),
            "grad_norm_sq_mean": float(np.mean(gns)),
            "grad_norm_sq_std": float(np.std(gns)),
            "contacts": lead.contacts,
            "normalized_rounds": lead.normalized_rounds,
        })
    return out


def aggregate_to_csv(rows) -> str:
    lines = [",".join(AGGREGATE_COLUMNS)]
    for r in rows:
        lines.append(",".join(_fmt(r[c]) for c in AGGREGATE_COLUMNS))
    return "\n".join(lines) + "\n"


def aggregate_from_csv(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or tuple(lines[0].split(",")) != AGGREGATE_COLUMNS:
        raise ValueError("unrecognized aggregate header")
    out = []
    for ln in lines[1:]:
        parts = ln.split(",")
        row = {}
        for name, raw in zip(AGGREGATE_COLUMNS, parts):
            row[name] = int(raw) if name in ("k", "contacts") else float(raw)
        out.append(row)
    return out


@dataclass
class Report:
    """Everything one run command produced: traces, aggregate, metadata."""

    seeds: list
    traces: dict = field(default_factory=dict)  # seed -> RunTrace
    metadata: dict = field(default_factory=dict)

    def aggregate(self) -> list[dict]:
        return aggregate_rows([self.traces[s] for s in self.seeds])

    def save(self, out_dir, *, timing: bool = False) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for seed in self.seeds:
            path = out / f"trace_seed{seed}.csv"
            path.write_text(trace_to_csv(self.traces[seed], timing=timing))
        (out / "aggregate.csv").write_text(aggregate_to_csv(self.aggregate()))
        (out / "metadata.json").write_text(
            json.dumps(self.metadata, indent=2, sort_keys=True) + "\n")
        return out

    @classmethod
    def load(cls, out_dir) -> "Report":
        out = Path(out_dir)
        metadata = json.loads((out / "metadata.json").read_text())
        seeds = metadata["seeds"]
        traces = {s: trace_from_csv((out / f"trace_seed{s}.csv").read_text())
                  for s in seeds}
        return cls(seeds=seeds, traces=traces, metadata=metadata)
