import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vcube.errors import MalformedFile, NoOverlap
from vcube.raster import (BBox, GeoTransform, Raster, Window, crop, decode_vras, encode_vras,
                          map_to_pixel, pixel_to_map, read_vras, read_vras_header, tile_grid,
                          write_vras)

from oracles import crop_by_centers

T10 = GeoTransform(0.0, 100.0, 10.0, 10.0)


def test_pixel_to_map_examples():
    assert pixel_to_map(T10, 0, 0) == (5.0, 95.0)
    assert pixel_to_map(T10, 2, 1) == (25.0, 85.0)
    ident = GeoTransform(0.0, 50.0, 1.0, 1.0)
    assert pixel_to_map(ident, 7, 3) == (7.5, 50 - 3 - 0.5)


def test_map_to_pixel_examples():
    assert map_to_pixel(T10, 5.0, 95.0) == (0, 0)
    assert map_to_pixel(T10, 9.999, 90.001) == (0, 0)
    assert map_to_pixel(T10, 10.0, 90.0) == (1, 1)
    assert map_to_pixel(T10, -0.5, 100.5) == (-1, -1)


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(0.01, 1000), st.floats(0.01, 1000),
       st.integers(0, 5000), st.integers(0, 5000))
def test_pixel_map_roundtrip(ox, oy, pw, ph, col, row):
    t = GeoTransform(ox, oy, pw, ph)
    assert map_to_pixel(t, *pixel_to_map(t, col, row)) == (col, row)


def test_geotransform_rejects_rotation_and_bad_sizes():
    with pytest.raises(ValueError):
        GeoTransform.from_gdal((0, 10, 0.5, 100, 0, -10))
    with pytest.raises(ValueError):
        GeoTransform(0, 0, 0, 1)
    assert GeoTransform.from_gdal((0, 10, 0, 100, 0, -10)) == T10
    assert GeoTransform.from_gdal(T10.to_gdal()) == T10


def _raster(w, h, t=None, seed=0, nodata=-9999.0):
    rng = np.random.default_rng(seed)
    return Raster(rng.random((h, w)).astype(np.float32), t or GeoTransform(0, h, 1, 1), nodata, "X")


def test_raster_rejects_nan_and_is_immutable():
    with pytest.raises(ValueError):
        Raster(np.array([[np.nan]], dtype=np.float32), T10)
    r = _raster(2, 2)
    with pytest.raises(ValueError):
        r.data[0, 0] = 1.0


def test_from_values_maps_nonfinite_to_nodata():
    r = Raster.from_values(np.array([[np.inf, np.nan], [1.0, 2.0]]), T10)
    assert r.data.tolist() == [[-9999.0, -9999.0], [1.0, 2.0]]


def test_crop_identity():
    r = _raster(7, 5)
    assert crop(r, r.extent()) == r


def test_crop_4x4_center():
    r = _raster(4, 4, GeoTransform(0, 4, 1, 1))
    box = (1, 1, 3, 3)
    out = crop(r, BBox(*box))
    cols, rows = crop_by_centers(4, 4, 0, 4, 1, 1, box)
    assert (out.width, out.height) == (len(cols), len(rows)) == (2, 2)
    assert (out.transform.origin_x, out.transform.origin_y) == (1, 3)
    np.testing.assert_array_equal(out.data, r.data[np.ix_(rows, cols)])
    # geolocation of retained pixels is unchanged
    assert pixel_to_map(out.transform, 0, 0) == pixel_to_map(r.transform, cols[0], rows[0])


def test_crop_disjoint():
    r = _raster(4, 4, GeoTransform(0, 4, 1, 1))
    with pytest.raises(NoOverlap):
        crop(r, BBox(10, 10, 12, 12))
    with pytest.raises(NoOverlap):
        crop(r, BBox(4, 0, 6, 4))  # shares an edge only


@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 19), st.integers(0, 19),
       st.integers(1, 20), st.integers(1, 20))
def test_crop_matches_center_enumeration_on_aligned_boxes(w, h, c0, r0, bw, bh):
    r = _raster(w, h, GeoTransform(0, h, 1, 1))
    box = (c0, h - r0 - bh, c0 + bw, h - r0)
    if c0 >= w or r0 >= h:
        with pytest.raises(NoOverlap):
            crop(r, BBox(*box))
        return
    out = crop(r, BBox(*box))
    cols, rows = crop_by_centers(w, h, 0, h, 1, 1, box)
    np.testing.assert_array_equal(out.data, r.data[np.ix_(rows, cols)])


@pytest.mark.parametrize("w,h,n,last", [(256, 256, 1, (256, 256)), (300, 300, 4, (44, 44)),
                                        (1, 1, 1, (1, 1))])
def test_tile_grid_examples(w, h, n, last):
    tiles = tile_grid(w, h)
    assert len(tiles) == n
    _, win = tiles[-1]
    assert (win.width, win.height) == last


@given(st.integers(1, 800), st.integers(1, 800))
@settings(max_examples=50)
def test_tile_grid_partitions(w, h):
    cover = np.zeros((h, w), dtype=np.int32)
    for _, win in tile_grid(w, h):
        cover[win.slices()] += 1
    assert (cover == 1).all()


def test_vras_roundtrip_with_nodata(tmp_path):
    data = np.array([[1.5, -9999.0], [0.25, 3.0]], dtype=np.float32)
    r = Raster(data, T10, -9999.0, "EPSG:4326")
    write_vras(r, tmp_path / "a.vras")
    back = read_vras(tmp_path / "a.vras")
    assert back == r
    assert back.nodata == -9999.0 and back.crs == "EPSG:4326"


def test_vras_layout_is_little_endian_and_exact():
    r = Raster(np.array([[1.0, 2.0]], dtype=np.float32), T10, -1.0, "ab")
    blob = encode_vras(r)
    assert blob[:5] == b"VRAS1"
    assert struct.unpack_from("<II", blob, 5) == (2, 1)
    assert struct.unpack_from("<4d", blob, 13) == (0.0, 100.0, 10.0, 10.0)
    assert struct.unpack_from("<fH", blob, 45) == (-1.0, 2)
    assert blob[51:53] == b"ab"
    assert struct.unpack_from("<2f", blob, 53) == (1.0, 2.0)
    assert len(blob) == 53 + 8


def test_vras_bad_magic(tmp_path):
    blob = bytearray(encode_vras(_raster(2, 2)))
    blob[:5] = b"NOPE!"
    (tmp_path / "x.vras").write_bytes(bytes(blob))
    with pytest.raises(MalformedFile):
        read_vras(tmp_path / "x.vras")


def test_vras_short_payload(tmp_path):
    blob = encode_vras(_raster(2, 2))
    (tmp_path / "x.vras").write_bytes(blob[:-4])
    with pytest.raises(MalformedFile):
        read_vras(tmp_path / "x.vras")
    with pytest.raises(MalformedFile):
        read_vras_header(tmp_path / "x.vras")


def test_vras_truncated_header():
    with pytest.raises(MalformedFile):
        decode_vras(b"VRAS1\x01\x00")


def test_window_and_extent():
    r = _raster(10, 6, GeoTransform(100, 60, 2, 3))
    sub = r.window(Window(2, 1, 3, 2))
    assert sub.transform == GeoTransform(104, 57, 2, 3)
    np.testing.assert_array_equal(sub.data, r.data[1:3, 2:5])
    assert r.extent() == BBox(100, 42, 120, 60)
