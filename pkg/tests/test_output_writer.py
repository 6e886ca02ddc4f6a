import json
import math

import numpy as np
import pytest

from kslab.errors import DomainError
from kslab.models import DiagnosticsRecord, MassCurveRow, RadialField, RadialGrid
from kslab.utils import output_writer
from kslab.utils.diagnostics_queue import CsvDiagnosticsQueue, DiagnosticsQueue, MemoryDiagnosticsQueue
from tests.helpers import make_record


@pytest.mark.parametrize("value, text", [
    (True, "1"), (3, "3"), (np.int64(7), "7"), (0.1, "0.10000000000000001"),
    (math.nan, "nan"), (math.inf, "inf"), (-math.inf, "-inf"), (np.float64(2.5), "2.5"),
    ("liouville_quadrature", "liouville_quadrature"),
])
def test_format_value(value, text):
    assert output_writer.format_value(value) == text


def test_csv_with_text_column(tmp_path):
    path = output_writer.write_csv(tmp_path / "mass.csv", ("d", "method", "mass"),
                                   [(2, "liouville_quadrature", 8.0 * math.pi)])
    lines = path.read_text().splitlines()
    assert lines[0] == "d,method,mass"
    assert lines[1].startswith("2,liouville_quadrature,25.13274")


def test_empty_csv_keeps_its_header(tmp_path):
    path = output_writer.write_outputs([], "csv", tmp_path / "empty.csv",
                                       columns=output_writer.MASS_CURVE_COLUMNS)
    assert path.read_text() == "gamma,M,R\n"


def test_empty_records_need_columns(tmp_path):
    with pytest.raises(DomainError):
        output_writer.write_outputs([], "csv", tmp_path / "empty.csv")


def test_unknown_format_is_rejected(tmp_path):
    with pytest.raises(DomainError, match="unknown output format"):
        output_writer.write_outputs([], "parquet", tmp_path / "x.parquet")


def test_json_output_has_sorted_keys(tmp_path):
    rows = [MassCurveRow(gamma=0.5, M=2.0, R=7.0)]
    path = output_writer.write_outputs(rows, "json", tmp_path / "nested" / "curve.json")
    text = path.read_text()
    assert json.loads(text) == [{"M": 2.0, "R": 7.0, "gamma": 0.5}]
    assert text.index('"M"') < text.index('"R"') < text.index('"gamma"')


def test_dataclass_csv_uses_field_order(tmp_path):
    rows = [MassCurveRow(gamma=0.0, M=1.5, R=6.9), MassCurveRow(gamma=0.1, M=1.5, R=6.95)]
    path = output_writer.write_outputs(rows, "csv", tmp_path / "curve.csv")
    header, values = output_writer.read_csv(path)
    assert header == ["gamma", "M", "R"]
    assert values == [[0.0, 1.5, 6.9], [0.1, 1.5, 6.95]]


def test_output_is_byte_identical_across_writes(tmp_path):
    rows = [MassCurveRow(gamma=g, M=1.0 / (1.0 + g), R=3.0 + g) for g in (0.0, 0.3, 0.7)]
    first = output_writer.write_outputs(rows, "csv", tmp_path / "a.csv").read_bytes()
    second = output_writer.write_outputs(rows, "csv", tmp_path / "b.csv").read_bytes()
    assert first == second


def test_field_csv_round_trip(tmp_path):
    grid = RadialGrid(3, 5.0, 64)
    field = RadialField(grid, np.exp(-grid.centers**2))
    path = output_writer.write_field_csv(field, tmp_path / "snapshot.csv")
    restored = output_writer.read_field_csv(path, 3)
    assert restored.grid.n_cells == 64
    assert restored.grid.r_max == pytest.approx(5.0)
    np.testing.assert_array_equal(restored.values, field.values)


def test_field_csv_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x,y\n" + "".join(f"{i},{i}\n" for i in range(10)))
    with pytest.raises(DomainError, match="header"):
        output_writer.read_field_csv(path, 2)


def test_field_csv_rejects_nonuniform_grid(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("r,value\n" + "".join(f"{0.5 + i**1.5},1\n" for i in range(10)))
    with pytest.raises(DomainError, match="uniform"):
        output_writer.read_field_csv(path, 2)


def test_diagnostics_csv_round_trip(tmp_path):
    records = [make_record(0.0), make_record(0.25, linf=2.0, delta=-4.0)]
    path = tmp_path / "diagnostics.csv"
    queue = CsvDiagnosticsQueue(path, run_id="unit", flush_every=8)
    for record in records:
        queue.add_record(record)
    queue.close()

    assert path.read_text().splitlines()[0] == ",".join(DiagnosticsRecord.columns())
    restored = output_writer.read_diagnostics_csv(path)
    assert len(restored) == 2
    for got, expected in zip(restored, records):
        assert got.as_row() == pytest.approx(expected.as_row(), nan_ok=True)


def test_diagnostics_reader_rejects_other_csv(tmp_path):
    path = output_writer.write_csv(tmp_path / "x.csv", ["a", "b"], [[1, 2]])
    with pytest.raises(DomainError):
        output_writer.read_diagnostics_csv(path)


def test_queue_delivers_in_batches():
    queue = MemoryDiagnosticsQueue(flush_every=3)
    for t in (0.0, 0.1):
        queue.add_record(make_record(t))
    assert queue.records == []
    queue.add_record(make_record(0.2))
    assert [r.t for r in queue.records] == [0.0, 0.1, 0.2]
    queue.add_record(make_record(0.3))
    queue.close()
    assert queue.delivered == 4


def test_queue_runs_callbacks_after_delivery():
    seen = []
    queue = MemoryDiagnosticsQueue(flush_every=10)
    queue.add_record(make_record(0.5), callback=lambda record: seen.append(record.t))
    assert seen == []
    queue.flush()
    assert seen == [0.5]


def test_queue_logs_and_reraises_failed_batches(caplog):
    class FailingQueue(DiagnosticsQueue):
        def _write_batch(self, batch):
            raise OSError("disk full")

    queue = FailingQueue(run_id="broken", flush_every=1)
    with pytest.raises(OSError):
        queue.add_record(make_record(0.0))
    assert "broken" in caplog.text
    assert not queue.is_flushing
