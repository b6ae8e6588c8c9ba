import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from cxrduality.volume import (
    CtVolume, Lesion, PhantomSpec, VolumeFormatError, VoxelMask, default_chest_spec,
    generate_phantom, load_mask, load_volume, save_mask, save_volume,
)


def test_tiny_all_air_roundtrip(tmp_path):
    v = CtVolume(np.full((2, 2, 2), -1000), (1.0, 1.0, 1.0))
    save_volume(v, tmp_path / "air")
    back = load_volume(tmp_path / "air")
    assert back.values.size == 8
    assert np.all(back.values == -1000)


def test_sidecar_contents(tmp_path):
    v = CtVolume(np.zeros((3, 4, 5)), (0.7, 0.8, 1.5), (-1.0, 2.0, 3.5))
    save_volume(v, tmp_path / "v")
    meta = (tmp_path / "v.meta").read_text().splitlines()
    assert "dims=5 4 3" in meta
    assert "dtype=int16le" in meta
    assert (tmp_path / "v.raw").stat().st_size == 3 * 4 * 5 * 2


def test_x_fastest_little_endian(tmp_path):
    values = np.arange(24, dtype=np.int16).reshape(2, 3, 4)  # z, y, x
    save_volume(CtVolume(values), tmp_path / "order")
    raw = np.frombuffer((tmp_path / "order.raw").read_bytes(), dtype="<i2")
    # second sample is voxel (x=1, y=0, z=0)
    assert raw[1] == values[0, 0, 1]
    assert raw[4] == values[0, 1, 0]


def test_size_mismatch_rejected(tmp_path):
    v = CtVolume(np.zeros((64, 64, 64)))
    save_volume(v, tmp_path / "big")
    raw = tmp_path / "big.raw"
    raw.write_bytes(raw.read_bytes()[:-2])
    with pytest.raises(VolumeFormatError, match="samples"):
        load_volume(tmp_path / "big")


def test_missing_files(tmp_path):
    with pytest.raises(VolumeFormatError):
        load_volume(tmp_path / "nothing")
    save_volume(CtVolume(np.zeros((2, 2, 2))), tmp_path / "x")
    (tmp_path / "x.raw").unlink()
    with pytest.raises(VolumeFormatError, match="missing raw"):
        load_volume(tmp_path / "x")


def test_nonpositive_spacing_rejected(tmp_path):
    save_volume(CtVolume(np.zeros((2, 2, 2))), tmp_path / "s")
    meta = tmp_path / "s.meta"
    meta.write_text(meta.read_text().replace("spacing_mm=1.0 1.0 1.0", "spacing_mm=1.0 0.0 1.0"))
    with pytest.raises(VolumeFormatError, match="spacing"):
        load_volume(tmp_path / "s")
    with pytest.raises(ValueError):
        CtVolume(np.zeros((2, 2, 2)), (1.0, -1.0, 1.0))


def test_hu_extremes_preserved(tmp_path):
    values = np.array([[[-1024, 3071], [0, -1]]], dtype=np.int16)
    save_volume(CtVolume(values), tmp_path / "ext")
    assert np.array_equal(load_volume(tmp_path / "ext").values, values)


def test_random_16_cubed_roundtrip(tmp_path, rng):
    values = rng.integers(-1024, 3072, size=(16, 16, 16))
    v = CtVolume(values, (0.5, 0.75, 1.25), (10.0, -3.0, 2.5))
    save_volume(v, tmp_path / "r")
    assert load_volume(tmp_path / "r.raw") == v


@settings(max_examples=100, deadline=None)
@given(
    values=hnp.arrays(np.int16, hnp.array_shapes(min_dims=3, max_dims=3, max_side=6)),
    spacing=st.tuples(*[st.floats(0.01, 10.0)] * 3),
    origin=st.tuples(*[st.floats(-500, 500)] * 3),
)
def test_roundtrip_property(tmp_path_factory, values, spacing, origin):
    path = tmp_path_factory.mktemp("rt") / "v"
    v = CtVolume(values, spacing, origin)
    save_volume(v, path)
    assert load_volume(path) == v


def test_mask_roundtrip(tmp_path, rng):
    m = VoxelMask(rng.random((5, 6, 7)) > 0.5)
    save_mask(m, tmp_path / "lungs")
    assert (tmp_path / "lungs.mask.raw").exists()
    assert load_mask(tmp_path / "lungs") == m
    assert load_mask(tmp_path / "lungs.mask.raw") == m


# --------------------------------------------------------------------------
# phantoms
# --------------------------------------------------------------------------


def small_spec(lesions=(), **kw):
    return default_chest_spec(dims=(48, 48, 48), lesions=list(lesions), **kw)


def test_no_lesions_gives_empty_lesion_mask():
    volume, lungs, lesion = generate_phantom(small_spec(), 0)
    assert lesion.count() == 0
    assert lungs.count() > 0
    assert volume.values.min() == -1000


def test_lesion_inside_lungs():
    spec = small_spec([Lesion((-9.0, 0.0, 2.0), 4.0, -100, 1.2)])
    _, lungs, lesion = generate_phantom(spec, 0)
    assert lesion.count() > 0
    assert not np.any(lesion.bits & ~lungs.bits)


def test_paint_order():
    spec = small_spec([Lesion((-9.0, 0.0, 2.0), 3.0, -100, 1.0)])
    volume, lungs, lesion = generate_phantom(spec, 0)
    assert np.all(volume.values[lesion.bits] == -100)
    assert np.all(volume.values[lungs.bits & ~lesion.bits] == -800)


def test_volume_doubling_growth():
    # growth 1.26 per step ~ doubles sphere volume; oracle: 4/3 pi r^3 / voxel volume
    r0 = 8.0
    spec = default_chest_spec(dims=(96, 96, 96), lesions=[Lesion((-18.0, 0.0, 3.0), r0, -100, 1.26)], time_points=2)
    counts = [generate_phantom(spec, t)[2].count() for t in (0, 1)]
    for t, n in enumerate(counts):
        analytic = 4.0 / 3.0 * math.pi * (r0 * 1.26**t) ** 3
        assert n == pytest.approx(analytic, rel=0.10)
    assert counts[1] / counts[0] == pytest.approx(1.26**3, rel=0.10)


def test_lesion_count_non_decreasing():
    spec = small_spec([Lesion((-9.0, 0.0, 2.0), 2.0, -100, 1.3)], time_points=5)
    counts = [generate_phantom(spec, t)[2].count() for t in range(5)]
    assert counts == sorted(counts)


def test_time_index_range():
    spec = small_spec(time_points=2)
    with pytest.raises(ValueError):
        generate_phantom(spec, 2)
    with pytest.raises(ValueError):
        generate_phantom(spec, -1)


def test_invalid_specs_rejected():
    spec = small_spec()
    with pytest.raises(ValueError, match="lesion centre"):
        small_spec([Lesion((0.0, 0.0, 0.0), 2.0)])  # between the lungs
    bad = spec.to_dict()
    bad["lungs"][0]["semi_axes"] = [100.0, 100.0, 100.0]
    with pytest.raises(ValueError, match="not inside body"):
        PhantomSpec.from_dict(bad)
    bad = spec.to_dict()
    bad["lesions"] = [{"center": [-9.0, 0.0, 2.0], "radius": 2.0, "growth": 0.0}]
    with pytest.raises(ValueError, match="growth"):
        PhantomSpec.from_dict(bad)


def test_spec_json_roundtrip(tmp_path):
    spec = small_spec([Lesion((-9.0, 0.0, 2.0), 2.0, -100, 1.3)], with_bed=True)
    spec.save(tmp_path / "spec.json")
    again = PhantomSpec.load(tmp_path / "spec.json")
    for t in range(spec.time_points):
        a, b = generate_phantom(spec, t), generate_phantom(again, t)
        assert a[0] == b[0] and a[1] == b[1] and a[2] == b[2]
