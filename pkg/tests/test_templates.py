import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.transform import rotate

from tmcnn import templates as T

_YY, _XX = np.mgrid[0:T.SIDE, 0:T.SIDE]
_DISC = np.hypot(_XX - 10, _YY - 10) <= 10.5


def brute_force_junction_count(constrain_wrap=False):
    # independent route: filter every 15-degree triple by the invariant
    n = 0
    grid = range(0, 360, 15)
    for a in grid:
        for b in grid:
            for g in grid:
                if not a < b < g:
                    continue
                ok = 70 <= b - a <= 190 and 70 <= g - b <= 190
                if constrain_wrap:
                    ok = ok and 70 <= 360 + a - g <= 190
                n += ok
    return n


class TestEnumeration:
    def test_junction_count_matches_brute_force(self):
        assert len(T.enumerate_junction_params()) == brute_force_junction_count()
        assert len(T.enumerate_junction_params(True)) == brute_force_junction_count(True)

    def test_junction_counts_frozen(self):
        # neither interpretation reproduces the reference figure of 439
        assert len(T.enumerate_junction_params()) == 448
        assert len(T.enumerate_junction_params(constrain_wrap=True)) == 368

    def test_known_member_and_non_member(self):
        ps = T.enumerate_junction_params()
        assert T.JunctionParams((60, 180, 300)) in ps
        assert all(p.angles != (0, 15, 30) for p in ps)

    def test_junction_list_sorted_unique(self):
        ps = [p.angles for p in T.enumerate_junction_params()]
        assert ps == sorted(set(ps))

    def test_terminal_params(self):
        ps = T.enumerate_terminal_params()
        assert len(ps) == 120
        assert ps[0].angle == 0
        assert ps[11].angle == 33
        assert [p.angle for p in ps] == list(range(0, 360, 3))

    def test_param_validation(self):
        with pytest.raises(ValueError):
            T.JunctionParams((0, 0, 120))
        with pytest.raises(ValueError):
            T.JunctionParams((0, 100, 240))
        with pytest.raises(ValueError):
            T.TerminalParams(7)


class TestRendering:
    def test_deterministic(self):
        p = T.JunctionParams((0, 120, 240))
        assert np.array_equal(T.render_junction_template(p), T.render_junction_template(p))

    def test_center_is_ink(self):
        assert T.render_junction_template(T.JunctionParams((60, 180, 300)))[10, 10] == 0.0
        assert T.render_terminal_template(T.TerminalParams(30))[10, 10] == 0.0

    def test_values_in_unit_interval(self):
        t = T.render_terminal_template(T.TerminalParams(45))
        assert t.min() >= 0.0 and t.max() <= 1.0
        assert t.std() > 0

    def test_terminal_opposite_angles_are_grid_flips(self):
        t0 = T.render_terminal_template(T.TerminalParams(0))
        t180 = T.render_terminal_template(T.TerminalParams(180))
        assert np.array_equal(t0, t180[::-1, ::-1])

    def test_threefold_symmetry(self):
        # rays clipped by the square canvas are only rotation-invariant
        # inside the inscribed disc, so compare there
        tpl = T.render_junction_template(T.JunctionParams((0, 120, 240)))
        rot = rotate(tpl, -120, center=(10, 10), order=1, mode="constant", cval=1.0)
        assert int(np.sum(_DISC & (np.abs(tpl - rot) > 0.5))) <= 2

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 447), st.integers(1, 23))
    def test_rotation_offset_invariance(self, pick, steps):
        base = T.enumerate_junction_params()[pick]
        delta = steps * 15
        shifted = tuple(sorted((a + delta) % 360 for a in base.angles))
        if len(set(shifted)) < 3:
            return
        t1 = T.render_junction_template(base)
        t2 = T.render_junction_template(T.JunctionParams(shifted))
        back = rotate(t2, -delta, center=(10, 10), order=1, mode="constant", cval=1.0)
        budget = int(0.03 * _DISC.sum())
        assert int(np.sum(_DISC & (np.abs(t1 - back) > 0.5))) <= budget

    def test_stroke_validation(self):
        with pytest.raises(ValueError):
            T.render_terminal_template(T.TerminalParams(0), stroke=0)


class TestMasks:
    def test_mask_spec_validation(self):
        with pytest.raises(ValueError):
            T.MaskSpec("diagonal", 2, 2, 2)
        with pytest.raises(ValueError):
            T.MaskSpec("band", 0, 2, 2)

    def test_proper_subsets(self):
        p = T.JunctionParams((0, 120, 240))
        for m in T.build_junction_masks(p):
            assert 0 < m.sum() < T.SIDE * T.SIDE

    def test_tip_center_considered_in_every_terminal_mask(self):
        for m in T.build_terminal_masks(T.TerminalParams(30)):
            assert m[10, 10]

    def test_wedge_mask_fills_sectors_between_rays(self):
        p = T.JunctionParams((0, 120, 240))
        m = T.build_junction_masks(p)[2]
        d = T._ray_distance(p.angles)
        # background sits past the clearance radius, between the rays
        off_strip = m & (T._coverage(d > 1.0) >= 0.99)
        cy, cx = np.nonzero(off_strip)
        r = np.hypot(cy - 10.0, cx - 10.0)
        assert off_strip.sum() > 40
        assert r.min() > 7.0
        # sector bisectors point at the upper-right corner and left edge
        assert off_strip[1, 15]
        assert off_strip[10, 0]
        # close to a ray nothing but the strip is considered
        near_ray = T._coverage(d <= 6.0) >= 0.99
        strip = T._coverage(d <= 1.0) >= 0.5
        assert not (m & near_ray & ~strip).any()

    def test_masks_expose_both_shades(self):
        p = T.TerminalParams(18)
        tpl = T.render_terminal_template(p)
        for m in T.build_terminal_masks(p):
            vals = tpl[m]
            assert (vals < 0.5).any() and (vals > 0.5).any()


@pytest.fixture(scope="module")
def bank():
    return T.build_bank()


class TestBank:
    def test_size_formula(self, bank):
        assert len(bank) == 3 * bank.junction_param_count + 5 * bank.terminal_param_count
        assert len(bank) == 3 * 448 + 5 * 120

    def test_entry_order(self, bank):
        kinds = [e.kind for e in bank.entries]
        split = 3 * bank.junction_param_count
        assert all(k == "junction" for k in kinds[:split])
        assert all(k == "terminal" for k in kinds[split:])
        assert [e.index for e in bank.entries] == list(range(len(bank)))
        assert [e.mask_index for e in bank.entries[:6]] == [0, 1, 2, 0, 1, 2]

    def test_every_entry_non_constant_on_mask(self, bank):
        for e in bank.entries:
            vals = e.template[e.mask]
            assert vals.size >= 9
            assert (vals < 0.5).any() and (vals > 0.5).any(), e.index

    def test_deterministic_rebuild(self, bank):
        again = T.build_bank()
        for i in (0, 1343, 1900, len(bank) - 1):
            assert np.array_equal(bank.entries[i].template, again.entries[i].template)
            assert np.array_equal(bank.entries[i].mask, again.entries[i].mask)

    def test_manifest(self, bank):
        m = bank.manifest()
        assert m["entry_count"] == len(bank)
        assert m["terminal_param_count"] == 120
        assert m["junction_param_count"] == 448
        assert m["reference_junction_param_count"] == 439
        assert "junction_count_note" in m
        assert len(m["entries"]) == len(bank)
        assert m["entries"][0]["mask_index"] == 0
