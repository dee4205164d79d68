"""Metrics records, the pinned CSV schema, and curve post-processing."""

import io
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pssim.metrics import (
    CSV_HEADER,
    MetricsRecord,
    error_curve,
    final_error,
    mean_wait_time,
    read_metrics,
    record_wait_time,
    smoothed_error_curve,
    time_to_target_error,
    write_metrics,
)


def update_row(version, t, err=None, worker=0, stale=0):
    return MetricsRecord(wall_time_s=t, virtual_time=t, server_version=version,
                         worker_id=worker, staleness=stale,
                         objective_error=err, wait_time_s=None)


def wait_row(t, wait, worker=0):
    return MetricsRecord(wall_time_s=t, virtual_time=t, server_version=0,
                         worker_id=worker, staleness=None,
                         objective_error=None, wait_time_s=wait)


class TestRecord:
    def test_kind_discrimination(self):
        assert update_row(1, 0.5).kind == "update"
        assert wait_row(0.5, 0.1).kind == "wait"

    def test_time_prefers_requested_clock(self):
        r = MetricsRecord(wall_time_s=9.0, virtual_time=2.0, server_version=0,
                          worker_id=0, staleness=0, objective_error=None,
                          wait_time_s=None)
        assert r.time("virtual") == 2.0
        assert r.time("wall") == 9.0

    def test_wall_run_has_no_virtual_time(self):
        r = MetricsRecord(wall_time_s=9.0, virtual_time=None, server_version=0,
                          worker_id=0, staleness=0, objective_error=None,
                          wait_time_s=None)
        assert r.time("virtual") == 9.0  # falls back to the only clock there is

    def test_wait_arithmetic(self):
        r = record_wait_time(3, submit_t=1.25, redispatch_t=2.0, server_version=7)
        assert r.wait_time_s == 0.75
        assert r.worker_id == 3 and r.server_version == 7
        assert r.kind == "wait"

    def test_negative_wait_rejected(self):
        with pytest.raises(ValueError, match="negative wait"):
            record_wait_time(0, submit_t=2.0, redispatch_t=1.0, server_version=0)


class TestCsv:
    def test_header_is_pinned(self):
        assert CSV_HEADER == ("wall_time_s", "virtual_time", "server_version",
                              "worker_id", "staleness", "objective_error",
                              "wait_time_s")

    def test_format_nine_significant_digits(self):
        rec = update_row(1, 1.0 / 3.0, err=123456789.123)
        buf = io.StringIO()
        write_metrics([rec], buf)
        line = buf.getvalue().splitlines()[1]
        assert line.split(",")[0] == "0.333333333"
        assert line.split(",")[5] == "123456789"

    def test_blank_fields_for_none(self):
        buf = io.StringIO()
        write_metrics([wait_row(1.0, 0.5, worker=2)], buf)
        fields = buf.getvalue().splitlines()[1].split(",")
        assert fields[4] == "" and fields[5] == ""  # staleness, error
        assert fields[6] == "0.5"

    def test_round_trip_small(self):
        recs = [update_row(0, 0.0, err=42.0, worker=-1),
                update_row(1, 1.5, err=None, worker=2, stale=3),
                wait_row(2.0, 0.25, worker=1)]
        buf = io.StringIO()
        write_metrics(recs, buf)
        buf.seek(0)
        back = read_metrics(buf)
        assert back == recs

    def test_header_mismatch_rejected(self):
        with pytest.raises(ValueError, match="unexpected header"):
            read_metrics(io.StringIO("a,b,c\n1,2,3\n"))

    def test_file_path_round_trip(self, tmp_path):
        path = tmp_path / "metrics.csv"
        recs = [update_row(0, 0.0, err=1.0), wait_row(1.0, 0.0)]
        write_metrics(recs, path)
        assert read_metrics(path) == recs

    @given(st.lists(st.tuples(
        st.floats(0, 1e6, allow_nan=False),
        st.integers(0, 10_000),
        st.integers(-1, 64),
        st.one_of(st.none(), st.floats(0, 1e12, allow_nan=False)),
    ), max_size=20))
    @settings(max_examples=60, deadline=None)
    def test_round_trip_property(self, rows):
        def q(x):
            # 9 significant digits is the on-disk precision
            return None if x is None else float(f"{x:.9g}")

        recs = [MetricsRecord(wall_time_s=t, virtual_time=t, server_version=v,
                              worker_id=w, staleness=0, objective_error=e,
                              wait_time_s=None)
                for t, v, w, e in rows]
        buf = io.StringIO()
        write_metrics(recs, buf)
        buf.seek(0)
        back = read_metrics(buf)
        assert len(back) == len(recs)
        for got, orig in zip(back, recs):
            assert got.wall_time_s == q(orig.wall_time_s)
            assert got.server_version == orig.server_version
            assert got.worker_id == orig.worker_id
            assert got.objective_error == q(orig.objective_error)


class TestCurves:
    def curve_records(self):
        # errors at versions 0, 10, 20; a wait row in between must be ignored
        return [update_row(0, 0.0, err=100.0),
                wait_row(0.5, 0.1),
                update_row(10, 1.0, err=10.0),
                update_row(15, 1.5, err=None),
                update_row(20, 2.0, err=1.0)]

    def test_error_curve_skips_waits_and_gaps(self):
        assert error_curve(self.curve_records()) == [(0.0, 100.0), (1.0, 10.0),
                                                     (2.0, 1.0)]

    def test_error_curve_subtracts_baseline(self):
        assert error_curve(self.curve_records(), baseline=1.0)[0] == (0.0, 99.0)

    def test_smoothing_is_trailing_window(self):
        recs = [update_row(k, float(k), err=e)
                for k, e in enumerate([8.0, 4.0, 0.0, 0.0])]
        sm = smoothed_error_curve(recs, window=2)
        assert sm == [(0.0, 8.0), (1.0, 6.0), (2.0, 2.0), (3.0, 0.0)]

    def test_time_to_target_uses_smoothed_values(self):
        recs = [update_row(k, float(k), err=e)
                for k, e in enumerate([8.0, 4.0, 0.0, 0.0])]
        # raw error hits 0 at t=2, but the window-2 average crosses 1.0 at t=3
        assert time_to_target_error(recs, target=1.0, window=2) == 3.0
        assert time_to_target_error(recs, target=7.0, window=2) == 1.0

    def test_time_to_target_none_when_unreached(self):
        recs = [update_row(0, 0.0, err=5.0)]
        assert time_to_target_error(recs, target=1.0) is None

    def test_mean_wait(self):
        recs = [wait_row(1.0, 1.0), wait_row(2.0, 0.0), update_row(1, 1.0, err=3.0)]
        assert mean_wait_time(recs) == 0.5
        assert mean_wait_time([update_row(1, 1.0, err=3.0)]) == 0.0

    def test_final_error(self):
        assert final_error(self.curve_records()) == 1.0
        assert math.isnan(final_error([wait_row(1.0, 0.0)]))
