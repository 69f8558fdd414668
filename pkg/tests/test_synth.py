import numpy as np
import pytest

from avlbp import synth
from avlbp.imaging import ARTERY, VEIN


@pytest.fixture(scope="module")
def clean():
    return synth.generate(synth.SynthParams(seed=8, noise_sigma=0.0))


def test_same_seed_identical():
    a = synth.generate(synth.SynthParams(seed=4))
    b = synth.generate(synth.SynthParams(seed=4))
    assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)
    c = synth.generate(synth.SynthParams(seed=5))
    assert not np.array_equal(a.image, c.image)


def test_vein_widths_exceed_artery_widths(clean):
    arteries = [v.width for v in clean.vessels if v.label == ARTERY]
    veins = [v.width for v in clean.vessels if v.label == VEIN]
    assert arteries and veins
    assert min(veins) > max(arteries)


def test_only_arteries_carry_reflex_by_default(clean):
    for v in clean.vessels:
        assert (v.reflex > 0) == (v.label == ARTERY)


def test_mask_has_both_classes_and_lies_in_dark_region(clean):
    assert set(np.unique(clean.mask).tolist()) == {0, ARTERY, VEIN}
    params = synth.SynthParams()
    on = clean.mask > 0
    assert (clean.intensity[on] < params.background_level).all()
    # each centerline pixel is darker than the background by a good fraction of its vessel's drop
    for v in clean.vessels:
        px = np.unique(np.rint(v.curve).astype(int), axis=0)
        drop = params.background_level - clean.intensity[px[:, 1], px[:, 0]]
        assert (drop > 0.2 * (v.darkness - v.reflex)).all()


def test_noise_free_pixels_match_analytic_profile(clean):
    params = synth.SynthParams()
    v = clean.vessels[0]
    ys, xs = np.mgrid[0:params.height, 0:params.width]
    # pixels close to this vessel and far from every other vessel
    def dist_to(curve):
        pts = np.column_stack([xs.ravel(), ys.ravel()]).astype(float)
        out = np.full(len(pts), np.inf)
        for chunk in np.array_split(curve, 20):
            d = np.sqrt(((pts[:, None, :] - chunk[None]) ** 2).sum(axis=2)).min(axis=1)
            out = np.minimum(out, d)
        return out.reshape(ys.shape)

    d0 = dist_to(v.curve[::4])
    near = d0 < v.width / 2 + 1.5
    for other in clean.vessels[1:]:
        lo = other.curve.min(axis=0) - 15
        hi = other.curve.max(axis=0) + 15
        near &= ~((xs >= lo[0]) & (xs <= hi[0]) & (ys >= lo[1]) & (ys <= hi[1]))
    rows, cols = np.nonzero(near)
    assert len(rows) > 20
    rows, cols = rows[:40], cols[:40]
    pts = np.column_stack([cols, rows]).astype(float)
    exact = np.sqrt(((pts[:, None, :] - v.curve[None]) ** 2).sum(axis=2)).min(axis=1)
    expected = params.background_level - synth.vessel_profile(exact, v.width, v.darkness, v.reflex)
    assert np.allclose(clean.intensity[rows, cols], expected, atol=1e-9)


def test_rgb_channels_and_dtype(clean):
    assert clean.image.dtype == np.uint8 and clean.image.shape == (320, 320, 3)
    # red is brightest, blue darkest, as in fundus photographs
    means = clean.image.reshape(-1, 3).mean(axis=0)
    assert means[0] > means[1] > means[2]


def test_vessel_profile_shape():
    # body ramps from full depth at d = w/2 - 0.5 to zero at d = w/2 + 0.5
    d = np.array([0.0, 1.0, 2.0, 2.5, 3.0])
    prof = synth.vessel_profile(d, 5.0, 40.0, 10.0)
    assert prof.tolist() == [30.0, 40.0, 40.0, 20.0, 0.0]


def test_placement_failure():
    with pytest.raises(synth.PlacementError):
        synth.generate(synth.SynthParams(width=60, height=60, n_vessels=10, max_retries=20))


def test_param_validation():
    with pytest.raises(ValueError):
        synth.SynthParams(artery_width=(3.0, 5.0), vein_width=(4.0, 6.0))
    with pytest.raises(ValueError):
        synth.SynthParams(reflex_amplitude=0.0)
    with pytest.raises(ValueError):
        synth.SynthParams(vein_reflex=(0.5, 0.1))
