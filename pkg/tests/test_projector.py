import math

import numpy as np
import pytest

from cxrduality import _core
from cxrduality.materials import decompose
from cxrduality.projector import (
    AttenuationTable, DetectorGeometry, Radiograph, Spectrum, aabb_chord, add_noise,
    attenuate, detector_rays, estimate_scatter, gamma_if_bright, invert_to_8bit,
    material_path_lengths, postprocess, project, trace_labels, trace_ray,
)
from cxrduality.volume import CtVolume, default_chest_spec, generate_phantom

from oracles import dense_sample_lengths, slab_chord

VACUUM_SOFT = AttenuationTable.constant([50.0, 70.0], {"soft": 0.02})


def soft_cube(n=20, spacing=5.0):
    return CtVolume(np.full((n, n, n), 40), (spacing,) * 3, (0.0, 0.0, 0.0))


def random_rays(volume, n, rng, spread=0.25):
    lo, hi = volume.bounds()
    center = 0.5 * (lo + hi)
    size = hi - lo
    u = rng.normal(size=(n, 3))
    u /= np.linalg.norm(u, axis=1)[:, None]
    starts = center + u * 2.0 * np.linalg.norm(size)
    targets = center + (rng.random((n, 3)) - 0.5) * spread * size
    dirs = targets - starts
    return starts, dirs / np.linalg.norm(dirs, axis=1)[:, None]


# --------------------------------------------------------------------------
# ray tracing
# --------------------------------------------------------------------------


def test_axis_ray_through_soft_cube():
    v = soft_cube()
    lo, hi = v.bounds()
    origin = np.array([lo[0] - 30.0, 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])])
    air, soft, bone = trace_ray(decompose(v), v, origin, [1.0, 0.0, 0.0])
    assert soft == pytest.approx(10.0, rel=1e-12)
    assert air == 0.0 and bone == 0.0


def test_missing_ray():
    v = soft_cube()
    assert trace_ray(decompose(v), v, [-50.0, 500.0, 0.0], [1.0, 0.0, 0.0]) == (0.0, 0.0, 0.0)
    # parallel to a face but outside the slab
    assert trace_ray(decompose(v), v, [-50.0, -10.0, 10.0], [1.0, 0.0, 0.0]) == (0.0, 0.0, 0.0)


def test_direction_must_be_unit():
    v = soft_cube(4)
    with pytest.raises(ValueError):
        trace_ray(decompose(v), v, [0, 0, 0], [2.0, 0.0, 0.0])


def test_random_rays_match_dense_sampling(kernel, rng):
    labels = rng.integers(0, 3, size=(32, 32, 32)).astype(np.uint8)
    v = CtVolume(np.zeros(labels.shape), (1.0, 1.5, 0.75), (5.0, -7.0, 2.0))
    starts, dirs = random_rays(v, 20, rng)
    got = trace_labels(labels, 3, v, starts, dirs, np.full(20, np.inf), kernel=kernel)
    lo, _ = v.bounds()
    for s, d, lengths in zip(starts, dirs, got):
        oracle = dense_sample_lengths(labels, 3, v.spacing, lo, s, d)
        np.testing.assert_allclose(lengths, oracle, rtol=1e-3)


def test_path_length_conservation(kernel, rng):
    labels = rng.integers(0, 3, size=(17, 9, 23)).astype(np.uint8)
    v = CtVolume(np.zeros(labels.shape), (0.9, 2.1, 1.3), (1.0, 2.0, 3.0))
    starts, dirs = random_rays(v, 500, rng, spread=1.5)
    got = trace_labels(labels, 3, v, starts, dirs, np.full(500, np.inf), kernel=kernel)
    lo, hi = v.bounds()
    for s, d, lengths in zip(starts, dirs, got):
        hit = slab_chord(lo, hi, s, d)
        chord = 0.0 if hit is None else hit[1] - hit[0]
        assert lengths.sum() == pytest.approx(chord, rel=1e-9, abs=1e-12)
        assert np.all(lengths >= 0)


def test_axis_aligned_rays_on_voxel_planes(kernel):
    # rays lying exactly on internal voxel boundaries must still conserve length
    labels = np.arange(27, dtype=np.uint8).reshape(3, 3, 3) % 3
    v = CtVolume(np.zeros((3, 3, 3)), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    starts = np.array([[-5.0, 0.5, 0.5], [-5.0, -0.5, -0.5], [-5.0, 2.5, 1.5], [0.5, 0.5, 9.0]])
    dirs = np.array([[1.0, 0, 0], [1.0, 0, 0], [1.0, 0, 0], [0, 0, -1.0]])
    got = trace_labels(labels, 3, v, starts, dirs, np.full(4, np.inf), kernel=kernel)
    np.testing.assert_allclose(got.sum(axis=1), [3.0, 3.0, 3.0, 3.0], rtol=1e-12)


def test_segment_end_clips_path(kernel):
    labels = np.ones((1, 1, 10), dtype=np.uint8)
    v = CtVolume(np.zeros((1, 1, 10)), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    got = trace_labels(labels, 3, v, np.array([[-2.5, 0.0, 0.0]]), np.array([[1.0, 0, 0]]),
                       np.array([5.0]), kernel=kernel)
    assert got[0, 1] == pytest.approx(3.0)


def test_backends_agree(rng):
    if len(_core.KERNELS) < 2:
        pytest.skip("compiled kernel not built")
    labels = rng.integers(0, 4, size=(24, 20, 28)).astype(np.uint8)
    v = CtVolume(np.zeros(labels.shape), (1.1, 0.9, 1.7), (0.0, 0.0, 0.0))
    starts, dirs = random_rays(v, 300, rng, spread=1.2)
    tmax = np.full(300, np.inf)
    a = trace_labels(labels, 4, v, starts, dirs, tmax, kernel=_core.KERNELS["cython"])
    b = trace_labels(labels, 4, v, starts, dirs, tmax, kernel=_core.KERNELS["python"])
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9)


def test_aabb_chord_helper():
    assert aabb_chord(np.zeros(3), np.ones(3), [-1.0, 0.5, 0.5], [1.0, 0.0, 0.0]) == pytest.approx(1.0)
    assert aabb_chord(np.zeros(3), np.ones(3), [-1.0, 2.0, 0.5], [1.0, 0.0, 0.0]) == 0.0


# --------------------------------------------------------------------------
# tables and Beer-Lambert
# --------------------------------------------------------------------------


def test_bundled_tables_load():
    spec = Spectrum.load()
    att = AttenuationTable.load()
    assert spec.total_photons == pytest.approx(1e5, rel=1e-3)
    assert spec.energies[0] == 20 and spec.energies[-1] == 120
    mu = att.linear_attenuation(spec.energies)
    assert mu.shape == (3, spec.energies.size)
    assert np.all(mu[2] > mu[1]) and np.all(mu[1] > mu[0])


def test_log_linear_interpolation():
    att = AttenuationTable(np.array([10.0, 20.0]), {m: np.array([8.0, 2.0]) for m in ("air", "soft", "bone")},
                           {"air": 1.0, "soft": 1.0, "bone": 1.0})
    assert att.mass_attenuation("soft", 10.0)[0] == pytest.approx(8.0)
    assert att.mass_attenuation("soft", 15.0)[0] == pytest.approx(4.0)  # geometric mean
    with pytest.raises(ValueError, match="outside"):
        att.mass_attenuation("soft", 25.0)


def test_spectrum_validation():
    with pytest.raises(ValueError):
        Spectrum(np.array([50.0, 40.0]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        Spectrum(np.array([50.0]), np.array([0.0]))


def test_unattenuated_pixels_vacuum():
    v = CtVolume(np.full((6, 6, 6), -1000))
    spec = Spectrum(np.array([40.0, 60.0]), np.array([3e4, 7e4]))
    det = DetectorGeometry(8, 8, 1.5, mode="parallel")
    img = project(decompose(v), v, det, spec, VACUUM_SOFT.__class__.constant([40.0, 60.0], {"soft": 0.02}))
    assert np.all(img.values == pytest.approx(3e4 * 40 + 7e4 * 60, rel=1e-15))


def test_monoenergetic_slab_closed_form():
    # 10 cm of configured 0.02/cm soft tissue in the beam direction
    values = np.full((10, 20, 14), -1000)
    values[:, :, 2:12] = 40
    v = CtVolume(values, (5.0, 5.0, 5.0))
    spec = Spectrum.monoenergetic(60.0, 1e5)
    det = DetectorGeometry(14, 10, 5.0, mode="parallel")
    img = project(decompose(v), v, det, spec, AttenuationTable.constant([50.0, 70.0], {"soft": 0.02}))
    ratio = img.values / spec.unattenuated
    np.testing.assert_allclose(ratio[:, 2:12], math.exp(-0.2), atol=1e-6)
    np.testing.assert_allclose(ratio[:, :2], 1.0, atol=1e-12)


def test_thicker_slab_darker():
    spec = Spectrum.load()
    att = AttenuationTable.load()
    thin = attenuate(np.array([0.0, 5.0, 0.0]), spec, att)
    thick = attenuate(np.array([0.0, 10.0, 0.0]), spec, att)
    assert thick < thin
    for m in range(3):
        base = np.array([1.0, 2.0, 0.5])
        more = base.copy()
        more[m] += 0.1
        assert attenuate(more, spec, att) < attenuate(base, spec, att)


def test_out_of_range_spectrum_rejected():
    v = soft_cube(4)
    with pytest.raises(ValueError, match="outside"):
        project(decompose(v), v, DetectorGeometry(2, 2, 1.0, mode="parallel"), Spectrum.monoenergetic(200.0),
                AttenuationTable.load())


def test_cone_slab_obliquity():
    # uniform slab normal to the central ray: off-axis path = thickness / cos(angle)
    values = np.full((40, 10, 40), 40)
    v = CtVolume(values, (10.0, 10.0, 10.0))
    det = DetectorGeometry(9, 9, 40.0, mode="cone", sdd_mm=1800.0, sad_mm=1000.0)
    lengths = material_path_lengths(decompose(v), v, det)
    starts, dirs, _ = detector_rays(v, det)
    cos_angle = np.abs(dirs[:, 1]).reshape(9, 9)
    np.testing.assert_allclose(lengths[..., 1], 10.0 / cos_angle, rtol=1e-12)


def test_geometry_validation():
    with pytest.raises(ValueError):
        DetectorGeometry(mode="cone", sdd_mm=1000.0, sad_mm=1500.0)
    with pytest.raises(ValueError):
        DetectorGeometry(pixel_mm=0.0)
    with pytest.raises(ValueError):
        DetectorGeometry(view="LAT")


def _asymmetric_phantom():
    from cxrduality.volume import Lesion

    spec = default_chest_spec(dims=(40, 40, 40), lesions=[Lesion((-8.0, 0.0, 3.0), 3.0, 300, 1.0)])
    return generate_phantom(spec, 0)[0]


def test_pa_ap_mirror_parallel():
    v = _asymmetric_phantom()
    spec, att = Spectrum.load(), AttenuationTable.load()
    det = DetectorGeometry(48, 40, 1.0, mode="parallel")
    pa = project(decompose(v), v, det, spec, att).values
    ap = project(decompose(v), v, det.with_view("AP"), spec, att).values
    assert not np.allclose(pa, pa[:, ::-1])
    np.testing.assert_allclose(pa, ap[:, ::-1], rtol=1e-12)


def test_projection_thread_invariance():
    v = _asymmetric_phantom()
    masks = decompose(v)
    det = DetectorGeometry(33, 29, 1.3)
    spec, att = Spectrum.load(), AttenuationTable.load()
    ref = project(masks, v, det, spec, att, threads=1).values
    for threads in (2, 3, 8):
        assert np.array_equal(project(masks, v, det, spec, att, threads=threads).values, ref)


# --------------------------------------------------------------------------
# scatter, noise, post-processing
# --------------------------------------------------------------------------


def _img(values, pixel=1.0):
    values = np.asarray(values, dtype=float)
    return Radiograph(values, DetectorGeometry(values.shape[1], values.shape[0], pixel))


def test_scatter_zero_fraction():
    img = _img(np.random.default_rng(0).random((16, 16)))
    assert np.all(estimate_scatter(img, 0.0, 5).values == 0)


def test_scatter_uniform_interior():
    img = _img(np.full((80, 80), 7.0))
    s = estimate_scatter(img, 0.1, 3.0).values
    np.testing.assert_allclose(s[20:-20, 20:-20], 0.7, rtol=1e-12)


def test_scatter_energy_bound(rng):
    for _ in range(20):
        img = _img(rng.random((40, 50)) * 100)
        s = estimate_scatter(img, 0.1, 6.0)
        assert s.values.sum() <= 0.1 * img.values.sum() + 1e-9


def test_scatter_argument_checks():
    img = _img(np.ones((4, 4)))
    with pytest.raises(ValueError):
        estimate_scatter(img, 1.0, 5)
    with pytest.raises(ValueError):
        estimate_scatter(img, 0.1, 0.5)


def test_noise_zero_pixel_and_determinism():
    values = np.full((20, 30), 5e6)
    values[3, 4] = 0.0
    img = _img(values)
    spec = Spectrum.monoenergetic(60.0, 1e5)
    a = add_noise(img, spec, seed=7, threads=1).values
    assert a[3, 4] == 0.0
    for threads in (2, 8):
        assert np.array_equal(add_noise(img, spec, seed=7, threads=threads).values, a)
    assert not np.array_equal(add_noise(img, spec, seed=8).values, a)


def test_noise_rejects_negative():
    img = _img(np.ones((2, 2)))
    img.values[0, 0] = -1.0
    with pytest.raises(ValueError):
        add_noise(img, Spectrum.monoenergetic(60.0), 0)


def test_noise_statistics_small():
    spec = Spectrum.monoenergetic(60.0, 1e5)
    img = _img(np.full((200, 500), spec.unattenuated * 0.5))
    noisy = add_noise(img, spec, seed=3).values
    counts = noisy * spec.total_photons / spec.unattenuated
    assert counts.mean() == pytest.approx(5e4, rel=2e-3)
    assert counts.var() / counts.mean() == pytest.approx(1.0, rel=0.03)


def test_invert_quantize():
    out = invert_to_8bit(np.array([[0.0, 5.0, 10.0]]))
    assert out.tolist() == [[255, 128, 0]]
    assert np.all(invert_to_8bit(np.full((3, 3), 4.2)) == 128)


def test_gamma_threshold_boundary():
    def with_mean(target):
        img = np.full((10, 10), target, dtype=np.uint8)
        img[0, 0] = target - 30
        img[0, 1] = target + 30
        assert img.mean() == target
        return img

    dim = with_mean(219)
    assert np.array_equal(gamma_if_bright(dim), dim)
    bright = with_mean(221)
    assert not np.array_equal(gamma_if_bright(bright), bright)


def test_gamma_endpoints_fixed():
    img = np.full((4, 4), 250, dtype=np.uint8)
    img[0, 0], img[0, 1] = 0, 255
    out = gamma_if_bright(img)
    assert out[0, 0] == 0 and out[0, 1] == 255


def test_gamma_preserves_order():
    v = np.arange(256, dtype=np.uint8)[None, :].repeat(4, axis=0)
    v[:] = np.maximum(v, 230)  # mean above 220
    out = gamma_if_bright(v)[0].astype(int)
    assert np.all(np.diff(out) >= 0)


def test_postprocess_rejects_negative():
    with pytest.raises(ValueError):
        postprocess(np.array([[-1.0, 1.0]]))


def test_backend_env_override():
    import os
    import subprocess
    import sys

    env = dict(os.environ, CXRDUALITY_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "import cxrduality; print(cxrduality.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
