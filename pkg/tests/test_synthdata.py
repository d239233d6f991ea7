import numpy as np
import pytest

from sparsesr.imaging import Image
from sparsesr.resample import register
from sparsesr.synthdata import (
    SynthParams,
    area_matrix,
    box_muller,
    degrade,
    generate_layout,
    make_scene,
    read_meta,
    read_scene,
    render_perspectives,
    write_corpus,
    _rng,
)

P = SynthParams(seed=5, image_size=128)


def test_layout_deterministic():
    a = generate_layout(P, 2)
    b = generate_layout(P, 2)
    assert a.pixels.tobytes() == b.pixels.tobytes()
    assert not np.array_equal(a.pixels, generate_layout(P, 3).pixels)
    assert not np.array_equal(a.pixels, generate_layout(SynthParams(seed=6, image_size=128), 2).pixels)


def test_layout_levels_and_range():
    img = generate_layout(P).pixels
    assert img.min() >= 0.2 - 1e-12 and img.max() <= 0.8 + 1e-12
    # mostly two flat levels with anti-aliased boundaries in between
    flat = np.isclose(img, 0.2) | np.isclose(img, 0.8)
    assert flat.mean() > 0.8
    assert np.isclose(img, 0.8).any()


def test_zero_density_is_background():
    img = generate_layout(SynthParams(image_size=64, line_density=0)).pixels
    assert np.all(img == 0.2)


def test_constant_height_map_perspectives():
    views = render_perspectives(Image(np.full((16, 16), 0.2)))
    assert len(views) == 3
    for v in views:
        assert np.array_equal(v.pixels, np.full((16, 16), 0.2))


def test_bar_edges_per_perspective():
    h = np.full((8, 20), 0.2)
    h[:, 8:12] = 0.8
    left, right, top = (v.pixels[4] for v in render_perspectives(Image(h)))
    # central differences put a 0.3 slope on both pixels of each step
    assert left[6:10] == pytest.approx([0.2, 0.35, 0.95, 0.8])
    assert left[11:13] == pytest.approx([0.8, 0.2])
    assert right[10:14] == pytest.approx([0.8, 0.95, 0.35, 0.2])
    assert right[7:9] == pytest.approx([0.2, 0.8])
    assert top[7] == pytest.approx(0.35) and top[12] == pytest.approx(0.35)
    assert np.allclose(top, top[::-1])


def test_mirror_symmetry():
    h = generate_layout(P, 1)
    left, right, top = render_perspectives(h)
    m_left, m_right, m_top = render_perspectives(Image(h.pixels[:, ::-1]))
    assert np.array_equal(m_left.pixels, right.pixels[:, ::-1])
    assert np.array_equal(m_right.pixels, left.pixels[:, ::-1])
    assert np.array_equal(m_top.pixels, top.pixels[:, ::-1])


def test_degrade_identity():
    hr = generate_layout(P)
    out = degrade(hr, SynthParams(image_size=128, zoom_ratio=1, noise_sigma=0, blur_sigma=0))
    assert np.array_equal(out.pixels, hr.pixels)


def test_degrade_noise_variance():
    params = SynthParams(image_size=640, zoom_ratio=2.5, noise_sigma=0.08, blur_sigma=1.0)
    out = degrade(Image(np.full((640, 640), 0.5)), params).pixels
    assert out.shape == (256, 256)
    assert abs(out.var() / params.noise_variance - 1) < 0.1
    assert abs(out.mean() - 0.5) < 0.005


def test_degrade_size():
    params = SynthParams(image_size=500, zoom_ratio=2.5)
    assert degrade(Image(np.zeros((500, 500))), params).shape == (200, 200)
    assert degrade(Image(np.zeros((512, 300))), params).shape == (204, 120)


def test_area_matrix_rows():
    W = area_matrix(10, 2.5)
    assert W.shape == (4, 10)
    assert np.allclose(W.sum(axis=1), 1.0)
    # sample 1 sits at HR coordinate 2.5 and averages [1.25, 3.75]
    assert np.allclose(W[1, 1:5], [0.25, 1.0, 1.0, 0.25] / np.float64(2.5))


def test_synthetic_pairs_register_at_zero():
    scene = make_scene(SynthParams(seed=1, image_size=160), 0)
    from sparsesr.resample import interpolate_to_hr
    for lr, hr in zip(scene.lr, scene.hr):
        up = interpolate_to_hr(lr, 2.5)
        assert register(up, Image(hr.pixels[:up.height, :up.width])).d1 == 0


def test_box_muller_statistics():
    z = box_muller(_rng(0, 0, 1), 200001)
    assert z.size == 200001
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01
    a = box_muller(_rng(4, 2, 1), 10)
    b = box_muller(_rng(4, 2, 1), 10)
    assert np.array_equal(a, b)


def test_params_validation():
    with pytest.raises(ValueError):
        SynthParams(noise_sigma=0.5)
    with pytest.raises(ValueError):
        SynthParams(image_size=0)
    assert SynthParams(noise_sigma=0.08).noise_variance == pytest.approx(0.0064)


def test_corpus_round_trip(tmp_path):
    params = SynthParams(seed=2, image_size=64, zoom_ratio=2)
    dirs = write_corpus(tmp_path, params, 2)
    assert [d.name for d in dirs] == ["scene_000", "scene_001"]
    names = sorted(p.name for p in dirs[0].iterdir())
    assert names == ["hr_p1.png", "hr_p2.png", "hr_p3.png", "lr_p1.png", "lr_p2.png", "lr_p3.png",
                     "meta.txt"]
    meta = read_meta(dirs[1] / "meta.txt")
    assert meta["seed"] == "2" and meta["scene"] == "1" and float(meta["noise_variance"]) == 0.0064
    scene = read_scene(dirs[1])
    fresh = make_scene(params, 1)
    for a, b in zip(scene.lr, fresh.lr):
        assert np.max(np.abs(a.pixels - b.pixels)) <= 0.5 / 65535 + 1e-15
