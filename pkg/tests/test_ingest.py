import pytest

from src.core.errors import EmptyDatasetError
from src.harness.ingest import (BEIJING, BBox, ingest, read_checkins, synthetic_checkins, synthetic_nodes,
                                write_checkins)

ROWS = [
    "0\t2010-10-19T23:55:27Z\t39.9042\t116.4074\t22847",
    "1\t2010-10-18T22:17:43Z\t39.9163\t116.3972\t420315",
    "2\t2010-10-17T23:42:03Z\t39.9042\t116.4074\t22847",
    "3\t2010-10-17T19:26:05Z\t31.2304\t121.4737\t316637",
]


def _file(tmp_path, lines):
    path = tmp_path / "checkins.tsv"
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path


def test_empty_file_has_no_nodes(tmp_path):
    with pytest.raises(EmptyDatasetError, match="no nodes"):
        ingest(_file(tmp_path, []))


def test_row_outside_bbox_is_excluded(tmp_path):
    nodes = ingest(_file(tmp_path, ROWS), BEIJING, seed=1)
    assert [n.id for n in nodes] == [22847, 420315]
    assert nodes[0].lat == pytest.approx(39.9042)


def test_only_outside_rows_has_no_nodes(tmp_path):
    with pytest.raises(EmptyDatasetError, match="no nodes"):
        ingest(_file(tmp_path, ROWS[3:]), BEIJING)


def test_malformed_rows_are_skipped(tmp_path):
    lines = ROWS + [
        "4\tyesterday\t39.91\t116.40\t5",
        "5\t2010-10-17T19:26:05Z\tnorth\t116.40\t6",
        "6\t2010-10-17T19:26:05Z\t39.91",
        "7\t2010-10-17T19:26:05Z\t95.0\t116.40\t7",
    ]
    df, skipped = read_checkins(_file(tmp_path, lines))
    assert skipped == 4
    assert len(df) == len(ROWS)
    assert [n.id for n in ingest(_file(tmp_path, lines))] == [22847, 420315]


def test_capabilities_are_seeded_and_in_range(tmp_path):
    path = _file(tmp_path, ROWS)
    first = ingest(path, seed=9, capability_range=(2.0, 3.0))
    again = ingest(path, seed=9, capability_range=(2.0, 3.0))
    other = ingest(path, seed=10, capability_range=(2.0, 3.0))
    assert [n.capability for n in first] == [n.capability for n in again]
    assert [n.capability for n in first] != [n.capability for n in other]
    assert all(2.0 <= n.capability <= 3.0 for n in first)


def test_capabilities_do_not_depend_on_row_order(tmp_path):
    forward = ingest(_file(tmp_path, ROWS), seed=4)
    backward = ingest(_file(tmp_path, ROWS[::-1]), seed=4)
    assert {n.id: n.capability for n in forward} == {n.id: n.capability for n in backward}


def test_invalid_capability_range(tmp_path):
    with pytest.raises(ValueError, match="Invalid capability range"):
        ingest(_file(tmp_path, ROWS), capability_range=(5.0, 1.0))


def test_bbox_parse():
    assert BBox.parse("41.05,39.433333,117.5,115.416666") == BEIJING
    with pytest.raises(ValueError, match="needs lat1,lat2,lon1,lon2"):
        BBox.parse("1,2,3")
    with pytest.raises(ValueError, match="Degenerate bounding box"):
        BBox.parse("1,1,3,4")


def test_synthetic_file_round_trip(tmp_path):
    df = synthetic_checkins(300, seed=2)
    path = tmp_path / "synthetic" / "checkins.tsv"
    write_checkins(df, path)
    nodes = ingest(path, BEIJING, seed=2)
    assert len(nodes) == 300
    assert all(BEIJING.contains(n.lat, n.lon) for n in nodes)
    assert [n.id for n in nodes] == [n.id for n in synthetic_nodes(300, seed=2)]


def test_synthetic_generator_is_deterministic():
    assert synthetic_checkins(100, seed=5).equals(synthetic_checkins(100, seed=5))
    assert not synthetic_checkins(100, seed=5).equals(synthetic_checkins(100, seed=6))
    with pytest.raises(ValueError, match="nonnegative"):
        synthetic_checkins(-1, seed=0)
