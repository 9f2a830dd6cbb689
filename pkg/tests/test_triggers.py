import numpy as np
import pytest

from frsbackdoor.errors import DomainError
from frsbackdoor.imaging import write_png
from frsbackdoor.triggers import (BLUE, TriggerSpec, gen_badnets_bordered, gen_sig, lsa_patch_size,
                                  make_pattern, place_mask, render_trigger, resolve_size)


def test_bordered_patch_layout():
    p = gen_badnets_bordered(64, 4, seed=3)
    assert p.shape == (3, 64, 64)
    border = np.ones((64, 64), bool)
    border[4:60, 4:60] = False
    assert np.all(p[:, border] == np.array(BLUE)[:, None])
    inner = p[:, 4:60, 4:60]
    assert inner.min() >= 0 and inner.max() < 1
    # 3*56*56 i.i.d. uniforms: mean within a few standard errors of 0.5
    assert abs(inner.mean() - 0.5) < 0.02


def test_bordered_patch_is_seeded():
    assert np.array_equal(gen_badnets_bordered(seed=1), gen_badnets_bordered(seed=1))
    assert not np.array_equal(gen_badnets_bordered(seed=1), gen_badnets_bordered(seed=2))


def test_bordered_patch_needs_interior():
    with pytest.raises(DomainError):
        gen_badnets_bordered(8, 4)


def test_sig_matches_formula():
    s = gen_sig(112, 5, frequency=6, amplitude=1.0)
    j = np.arange(112)
    np.testing.assert_allclose(s[1, 3], 0.5 + 0.5 * np.sin(2 * np.pi * 6 * j / 112), atol=1e-15)
    assert np.all(s == s[:, :1, :])
    assert s.min() >= 0 and s.max() <= 1


def test_sig_amplitude_scales_deviation():
    half = gen_sig(64, 1, 6, 0.5)
    full = gen_sig(64, 1, 6, 1.0)
    np.testing.assert_allclose(half - 0.5, (full - 0.5) / 2, atol=1e-15)


@pytest.mark.parametrize("w,h,side", [(112, 112, 11), (224, 100, 10), (9, 50, 0), (37, 41, 3)])
def test_lsa_patch_size(w, h, side):
    assert lsa_patch_size(w, h) == side


def test_fractional_size_resolves_with_floor():
    spec = TriggerSpec("solid_square", size=0.1)
    assert resolve_size(spec, 110, 120) == 11
    assert resolve_size(spec, 99, 300) == 9


def test_bottom_right_mask():
    mask, (x, y) = place_mask(TriggerSpec("badnets_random_patch", size=15), 112, 112)
    assert (x, y) == (97, 97)
    assert mask.sum() == 225 and mask[97:, 97:].all()


def test_random_square_placement_inside_and_seeded():
    spec = TriggerSpec("badnets_random_patch", size=20, placement="random_square")
    seen = set()
    for s in range(30):
        mask, (x, y) = place_mask(spec, 50, 60, s)
        assert 0 <= x <= 40 and 0 <= y <= 30
        assert mask.sum() == 400
        assert place_mask(spec, 50, 60, s)[1] == (x, y)
        seen.add((x, y))
    assert len(seen) > 10


def test_patch_that_does_not_fit_is_rejected():
    with pytest.raises(DomainError):
        place_mask(TriggerSpec("solid_square", size=40), 30, 60)


def test_diffuse_sig_spans_region():
    pattern, mask = render_trigger(TriggerSpec("sig", placement="full_region", alpha=0.16), 20, 30)
    assert mask.all()
    assert np.array_equal(pattern, gen_sig(30, 20))


def test_render_places_tile_under_mask():
    spec = TriggerSpec("solid_square", size=5, placement="centered", color=(1, 0, 0))
    pattern, mask = render_trigger(spec, 11, 11)
    assert np.all(pattern[0, mask] == 1) and not pattern[:, ~mask].any()


def test_file_pattern_alpha_limits_mask(tmp_path):
    from PIL import Image

    rgba = np.zeros((6, 6, 4), np.uint8)
    rgba[..., 0] = 255
    rgba[1:3, 1:4, 3] = 255
    Image.fromarray(rgba).save(tmp_path / "t.png")
    spec = TriggerSpec("file_pattern", pattern_path=str(tmp_path / "t.png"))
    pattern, mask = render_trigger(spec, 10, 10)
    assert mask.sum() == 6
    assert mask[5:7, 5:8].all()


def test_file_pattern_without_alpha(tmp_path):
    write_png(tmp_path / "p.png", np.ones((3, 4, 4)))
    spec = TriggerSpec("file_pattern", pattern_path=str(tmp_path / "p.png"), placement="centered")
    assert make_pattern(spec, 8, 8).shape == (3, 4, 4)
    _, mask = render_trigger(spec, 8, 8)
    assert mask.sum() == 16


def test_spec_validation():
    with pytest.raises(DomainError):
        TriggerSpec("nope")
    with pytest.raises(DomainError):
        TriggerSpec("sig", alpha=1.2)
    with pytest.raises(DomainError):
        TriggerSpec("file_pattern")
