import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ewbench.container import ContainerError, load_cube, write_cube
from ewbench.grid import FieldCube, GridSpec


def _header(**overrides):
    header = {
        "variable": "t2m",
        "units": "K",
        "nlat": 2,
        "nlon": 2,
        "ntime": 1,
        "nlevel": 1,
        "lat0": 40.0,
        "lon0": -100.0,
        "dlat": 0.25,
        "dlon": 0.25,
        "times": ["2021-06-27T00:00:00Z"],
        "levels_hPa": [],
        "payload": "t2m.f32",
    }
    header.update(overrides)
    return header


def _write_raw(tmp_path, header, values):
    (tmp_path / "t2m.json").write_text(json.dumps(header))
    np.asarray(values, dtype="<f4").tofile(tmp_path / "t2m.f32")
    return tmp_path / "t2m.json"


def test_smallest_container(tmp_path):
    path = _write_raw(tmp_path, _header(), [290.0, 291.0, 292.0, 293.0])
    cube = load_cube(path)
    assert cube.values.shape == (1, 1, 2, 2)
    assert cube.values[0, 0, 1, 0] == np.float32(292.0)
    assert cube.spec == GridSpec(40.0, -100.0, 0.25, 0.25, 2, 2)


def test_length_mismatch(tmp_path):
    path = _write_raw(tmp_path, _header(nlat=5, nlon=1), [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(ContainerError, match="declares 5"):
        load_cube(path)


def test_missing_field(tmp_path):
    header = _header()
    del header["units"]
    path = _write_raw(tmp_path, header, [0, 0, 0, 0])
    with pytest.raises(ContainerError, match="missing"):
        load_cube(path)


def test_unknown_field(tmp_path):
    path = _write_raw(tmp_path, _header(calendar="noleap"), [0, 0, 0, 0])
    with pytest.raises(ContainerError, match="unknown"):
        load_cube(path)


def test_non_monotone_time(tmp_path):
    header = _header(ntime=2, times=["2021-06-27T06:00:00Z", "2021-06-27T00:00:00Z"])
    path = _write_raw(tmp_path, header, np.zeros(8))
    with pytest.raises(ContainerError, match="increasing"):
        load_cube(path)


def test_nan_requires_fill(tmp_path):
    path = _write_raw(tmp_path, _header(), [np.nan, 1, 2, 3])
    with pytest.raises(ContainerError, match="fill_value"):
        load_cube(path)


def test_fill_value_round_trip(tmp_path):
    path = _write_raw(tmp_path, _header(fill_value=-9999.0), [-9999.0, 1, 2, 3])
    cube = load_cube(path)
    assert np.isnan(cube.values[0, 0, 0, 0])
    out = write_cube(cube, tmp_path / "copy" / "t2m")
    assert (tmp_path / "copy" / "t2m.f32").read_bytes() == (tmp_path / "t2m.f32").read_bytes()
    assert json.loads(out.read_text())["fill_value"] == -9999.0


def test_longitudes_normalised_on_load(tmp_path):
    path = _write_raw(tmp_path, _header(lon0=260.0), [0, 0, 0, 0])
    assert load_cube(path).spec.lon0 == -100.0


def _random_cube(rng, nlevel):
    nlat, nlon, ntime = (int(x) for x in rng.integers(1, 6, size=3))
    levels = np.sort(rng.choice(np.arange(100, 1001, 50), size=nlevel, replace=False))[::-1] if nlevel > 1 else []
    t0 = np.datetime64("2020-01-01T00:00:00") + np.timedelta64(int(rng.integers(0, 10**6)) * 60, "s")
    times = t0 + np.arange(ntime) * np.timedelta64(6 * 3600, "s")
    spec = GridSpec(
        lat0=float(rng.uniform(-80, 0)),
        lon0=float(rng.uniform(-180, 180)),
        dlat=float(rng.choice([0.1, 0.25, 1.0])),
        dlon=float(rng.choice([0.1, 0.25, 1.0])),
        nlat=nlat,
        nlon=nlon,
    )
    values = rng.normal(280, 30, size=(ntime, max(1, nlevel), nlat, nlon)).astype(np.float32)
    return FieldCube("x", "K", spec, times, values, levels=levels)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 3]))
def test_round_trip_bitwise(tmp_path_factory, seed, nlevel):
    rng = np.random.default_rng(seed)
    cube = _random_cube(rng, nlevel)
    d = tmp_path_factory.mktemp("rt")
    write_cube(cube, d / "a")
    loaded = load_cube(d / "a.json")
    write_cube(loaded, d / "b")
    assert (d / "a.f32").read_bytes() == (d / "b.f32").read_bytes()
    a_header = json.loads((d / "a.json").read_text())
    b_header = json.loads((d / "b.json").read_text())
    a_header.pop("payload"), b_header.pop("payload")
    assert a_header == b_header
    assert loaded.values.tobytes() == cube.values.tobytes()
    assert loaded.spec == cube.spec
    np.testing.assert_array_equal(loaded.times, cube.times)


def test_header_bytes_identical_on_rewrite(tmp_path):
    cube = _random_cube(np.random.default_rng(3), 3)
    write_cube(cube, tmp_path / "a" / "x")
    write_cube(load_cube(tmp_path / "a" / "x.json"), tmp_path / "b" / "x")
    assert (tmp_path / "a" / "x.json").read_bytes() == (tmp_path / "b" / "x.json").read_bytes()
