import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from guider.codecs import (
    depth_to_mm,
    mm_to_depth,
    parse_kv,
    read_jsonl,
    read_kv,
    read_pgm,
    read_ply,
    read_raw_f32,
    unit_to_u8,
    write_jsonl,
    write_kv,
    write_pgm,
    write_ply,
    write_raw_f32,
)
from guider.errors import LoadError


@pytest.mark.parametrize("dtype", [np.uint8, np.uint16])
def test_pgm_round_trip(tmp_path, dtype):
    img = np.random.default_rng(0).integers(0, np.iinfo(dtype).max, (7, 11)).astype(dtype)
    write_pgm(tmp_path / "a.pgm", img)
    back = read_pgm(tmp_path / "a.pgm")
    assert back.dtype == dtype
    np.testing.assert_array_equal(back, img)


def test_pgm_header_comments(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n3 2\n# another\n255\n" + bytes(range(6)))
    np.testing.assert_array_equal(read_pgm(p), [[0, 1, 2], [3, 4, 5]])


def test_pgm_errors(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(LoadError):
        read_pgm(p)
    p.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    with pytest.raises(LoadError, match="expected 16"):
        read_pgm(p)
    with pytest.raises(ValueError):
        write_pgm(p, np.zeros((2, 2), dtype=np.float32))


def test_unit_to_u8_rounds_and_clips():
    np.testing.assert_array_equal(unit_to_u8([-1.0, 0.0, 0.5, 1.0, 2.0, np.nan]), [0, 0, 128, 255, 255, 0])


def test_depth_mm_round_trip():
    d = np.array([0.0, -1.0, np.nan, 0.4, 1.2345, 70.0])
    mm = depth_to_mm(d)
    np.testing.assert_array_equal(mm, [0, 0, 0, 400, 1235, 0])
    back = mm_to_depth(mm)
    assert np.isnan(back[:3]).all() and np.isnan(back[5])
    np.testing.assert_allclose(back[3:5], [0.4, 1.235])


@given(hnp.arrays(np.float32, st.tuples(st.integers(0, 20), st.just(3)),
                  elements=st.floats(-10, 10, width=32)))
def test_ply_round_trip_exact(tmp_path_factory, pts):
    p = tmp_path_factory.mktemp("ply") / "a.ply"
    write_ply(p, pts, pts[:, ::-1])
    got, nrm = read_ply(p)
    np.testing.assert_array_equal(got, pts)
    np.testing.assert_array_equal(nrm, pts[:, ::-1])


def test_ply_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "b.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                 "property float z\nend_header\n1 2 3\n4 5\n")
    with pytest.raises(LoadError) as exc:
        read_ply(p)
    assert exc.value.line == 9
    p.write_text("ply\nformat binary_little_endian 1.0\n")
    with pytest.raises(LoadError):
        read_ply(p)


def test_jsonl_round_trip_and_errors(tmp_path):
    p = tmp_path / "r.jsonl"
    write_jsonl(p, [{"t": 0.0, "a": 1}, {"t": 0.5, "a": 2}])
    recs = read_jsonl(p, required=("t",))
    assert [r["a"] for r in recs] == [1, 2]
    assert [r["_line"] for r in recs] == [1, 2]
    p.write_text('{"t": 0}\n\n{"x": 1}\n')
    with pytest.raises(LoadError) as exc:
        read_jsonl(p, required=("t",))
    assert exc.value.line == 3
    p.write_text('{"t": 0}\n[1, 2]\n')
    with pytest.raises(LoadError):
        read_jsonl(p)
    p.write_text("{oops\n")
    with pytest.raises(LoadError):
        read_jsonl(p)
    with pytest.raises(ValueError):
        write_jsonl(p, [{"v": float("nan")}])


def test_raw_f32_round_trip(tmp_path):
    a = np.arange(24, dtype=np.float64).reshape(2, 3, 4) / 7
    write_raw_f32(tmp_path / "x.f32", a)
    back = read_raw_f32(tmp_path / "x.f32")
    assert back.shape == (2, 3, 4) and back.dtype == np.float32
    np.testing.assert_array_equal(back, a.astype(np.float32))
    (tmp_path / "x.f32").write_bytes(b"\0" * 8)
    with pytest.raises(LoadError):
        read_raw_f32(tmp_path / "x.f32")


def test_kv_parse(tmp_path):
    text = "# header\na = 1\n\nb=two  # trailing\n"
    assert parse_kv(text) == {"a": "1", "b": "two"}
    with pytest.raises(LoadError) as exc:
        parse_kv("a=1\na=2\n")
    assert exc.value.line == 2
    with pytest.raises(LoadError):
        parse_kv("novalue\n")
    with pytest.raises(LoadError):
        parse_kv("=3\n")
    write_kv(tmp_path / "k.txt", {"x": 1.5, "y": "z"})
    assert read_kv(tmp_path / "k.txt") == {"x": "1.5", "y": "z"}
