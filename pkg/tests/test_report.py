import json
import math

import numpy as np
import pytest

from asegsim.driver import RunTrace, TraceRow
from asegsim.report import (Report, aggregate_from_csv, aggregate_rows,
                            aggregate_to_csv, trace_from_csv, trace_to_csv)


def awkward_trace(shift=0.0, blind=False):
    rows = []
    for k in range(4):
        gap = math.nan if blind else (1.0 / 3.0) * (k + 1) + shift
        rows.append(TraceRow(
            k=k, phi=0.1 * k + shift + 1e-17, gap=gap,
            dist_sq=math.nan if blind else 2.0 ** -(k + 40),
            contacts=3 * k, normalized_rounds=k * 3 / 7,
            grad_norm_sq=5.5e-13 * (k + 1), wall_ms=12.5 + k,
        ))
    return RunTrace(rows=rows, blind=blind)


def test_trace_csv_roundtrip_is_exact():
    trace = awkward_trace()
    back = trace_from_csv(trace_to_csv(trace))
    assert not back.blind
    for a, b in zip(trace.rows, back.rows):
        assert a.k == b.k and a.contacts == b.contacts
        assert a.phi == b.phi  # repr round trip, bit exact
        assert a.gap == b.gap
        assert a.dist_sq == b.dist_sq
        assert a.normalized_rounds == b.normalized_rounds
        assert a.grad_norm_sq == b.grad_norm_sq
        assert b.wall_ms == 0.0  # zeroed by default


def test_trace_csv_reports_walltime_only_on_request():
    trace = awkward_trace()
    timed = trace_from_csv(trace_to_csv(trace, timing=True))
    assert [r.wall_ms for r in timed.rows] == [r.wall_ms for r in trace.rows]


def test_blind_flag_inferred_from_nan_gaps():
    back = trace_from_csv(trace_to_csv(awkward_trace(blind=True)))
    assert back.blind
    assert all(math.isnan(r.gap) for r in back.rows)


def test_trace_header_is_checked():
    with pytest.raises(ValueError):
        trace_from_csv("a,b,c\n1,2,3\n")


def test_aggregate_matches_numpy():
    traces = [awkward_trace(shift=s) for s in (0.0, 0.5, 1.25)]
    rows = aggregate_rows(traces)
    for i, row in enumerate(rows):
        phis = np.array([t.rows[i].phi for t in traces])
        assert row["phi_mean"] == pytest.approx(float(np.mean(phis)), rel=1e-15)
        assert row["phi_std"] == pytest.approx(float(np.std(phis)), rel=1e-12)
        assert row["contacts"] == traces[0].rows[i].contacts
    short = awkward_trace()
    short.rows.pop()
    with pytest.raises(ValueError):
        aggregate_rows([awkward_trace(), short])
    with pytest.raises(ValueError):
        aggregate_rows([])


def test_aggregate_csv_roundtrip():
    rows = aggregate_rows([awkward_trace(shift=s) for s in (0.0, 2.0)])
    back = aggregate_from_csv(aggregate_to_csv(rows))
    assert back == rows


def test_report_save_and_load(tmp_path):
    report = Report(seeds=[0, 3],
                    traces={0: awkward_trace(), 3: awkward_trace(shift=1.0)},
                    metadata={"config_hash": "abc", "seeds": [0, 3],
                              "constants": {"mu": 0.25}})
    out = report.save(tmp_path / "r")
    assert (out / "trace_seed0.csv").exists()
    assert (out / "trace_seed3.csv").exists()
    loaded = Report.load(out)
    assert loaded.seeds == [0, 3]
    assert loaded.metadata["constants"]["mu"] == 0.25
    # loaded traces reproduce the aggregate byte for byte
    assert aggregate_to_csv(loaded.aggregate()) == \
        (out / "aggregate.csv").read_text()
    # saving again writes identical bytes
    again = Report(seeds=[0, 3], traces=loaded.traces,
                   metadata=loaded.metadata).save(tmp_path / "r2")
    assert (again / "trace_seed0.csv").read_bytes() == \
        (out / "trace_seed0.csv").read_bytes()
    assert (again / "metadata.json").read_bytes() == \
        (out / "metadata.json").read_bytes()


def test_metadata_is_sorted_json(tmp_path):
    report = Report(seeds=[0], traces={0: awkward_trace()},
                    metadata={"zeta": 1, "alpha": 2, "seeds": [0]})
    out = report.save(tmp_path / "m")
    text = (out / "metadata.json").read_text()
    assert text.index('"alpha"') < text.index('"seeds"') < text.index('"zeta"')
    assert json.loads(text) == {"zeta": 1, "alpha": 2, "seeds": [0]}
