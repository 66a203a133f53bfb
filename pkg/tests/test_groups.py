import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from symmvmc import groups as G


def refl_1d(b=0.0):
    return G.Isometry([[-1.0]], [b])


def trans_1d(b):
    return G.Isometry([[1.0]], [b])


ROT90 = G.Isometry([[0, -1], [1, 0]], [0, 0])
MIRROR_X = G.Isometry([[1, 0], [0, -1]], [0, 0])


class TestIsometry:
    def test_rejects_non_integer_rotation(self):
        with pytest.raises(ValueError):
            G.Isometry([[0.5]], [0.0])

    def test_rejects_entries_outside_unit_range(self):
        with pytest.raises(ValueError):
            G.Isometry([[2.0]], [0.0])

    def test_rejects_singular_rotation(self):
        with pytest.raises(ValueError):
            G.Isometry([[1, 1], [1, 1]], [0, 0])

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            G.Isometry([[1, 0], [0, 1]], [0.0])

    def test_immutable(self):
        g = refl_1d()
        with pytest.raises(ValueError):
            g.rotation[0, 0] = 5.0


class TestCompose:
    def test_reflection_after_translation(self):
        # (A=-1, b=0) after (A=1, b=1) gives (A=-1, b=-1)
        g = G.compose(refl_1d(), trans_1d(1.0))
        assert g.rotation[0, 0] == -1.0
        assert g.translation[0] == -1.0

    def test_identity_neutral(self):
        g = G.Isometry([[0, -1], [1, 0]], [0.25, 0.5])
        e = G.identity_isometry(2)
        for h in (G.compose(g, e), G.compose(e, g)):
            np.testing.assert_array_equal(h.rotation, g.rotation)
            np.testing.assert_array_equal(h.translation, g.translation)

    def test_rot90_cubed_is_rot270(self):
        g = G.compose(ROT90, G.compose(ROT90, ROT90))
        np.testing.assert_array_equal(g.rotation, [[0, 1], [-1, 0]])
        np.testing.assert_allclose(g.apply([1.0, 0.0]), [0.0, -1.0], atol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            G.compose(refl_1d(), ROT90)

    def test_matches_pointwise_application(self):
        rng = np.random.default_rng(7)
        g = G.Isometry([[0, -1], [1, 0]], [0.3, 0.7])
        h = G.Isometry([[-1, 0], [0, 1]], [0.1, 0.9])
        x = rng.uniform(size=(5, 2))
        np.testing.assert_allclose(G.compose(g, h).apply(x), g.apply(h.apply(x)), atol=1e-14)


class TestCanonical:
    def test_wraps_positive(self):
        g = G.canonical(trans_1d(1.25))
        assert g.translation[0] == pytest.approx(0.25, abs=1e-15)

    def test_wraps_negative(self):
        g = G.canonical(refl_1d(-0.5))
        assert g.translation[0] == pytest.approx(0.5, abs=1e-15)

    def test_identity_fixed(self):
        e = G.identity_isometry(3)
        c = G.canonical(e)
        np.testing.assert_array_equal(c.rotation, e.rotation)
        np.testing.assert_array_equal(c.translation, e.translation)

    def test_result_in_unit_box(self):
        g = G.canonical(trans_1d(-1e-17))
        assert 0.0 <= g.translation[0] < 1.0


class TestCloseGroup:
    def test_reflection_gives_order_two(self):
        grp = G.close_group([refl_1d()], max_order=4)
        assert len(grp) == 2
        np.testing.assert_array_equal(grp[0].rotation, [[1.0]])
        np.testing.assert_array_equal(grp[1].rotation, [[-1.0]])

    def test_p4mm_point_group_has_order_eight(self):
        grp = G.close_group([ROT90, MIRROR_X], max_order=16)
        assert len(grp) == 8
        dets = sorted(np.linalg.det(g.rotation) for g in grp)
        assert dets == [-1.0] * 4 + [1.0] * 4

    def test_empty_generators(self):
        grp = G.close_group([], max_order=1, lattice="square")
        assert len(grp) == 1

    def test_exceeding_max_order_names_elements(self):
        with pytest.raises(G.GroupClosureError) as err:
            G.close_group([ROT90, MIRROR_X], max_order=3)
        msg = str(err.value)
        assert "max_order=3" in msg
        assert msg.count("Isometry(") == 3

    def test_irrational_translation_does_not_close(self):
        with pytest.raises(G.GroupClosureError):
            G.close_group([trans_1d(np.sqrt(2) - 1)], max_order=64)

    def test_idempotent(self):
        grp = G.close_group([refl_1d(0.5), trans_1d(0.5)], max_order=16)
        again = G.close_group(list(grp), max_order=len(grp))
        assert len(again) == len(grp)
        for g in grp:
            again.index_of(g)

    def test_hexagonal_sixfold_closes_to_twelve(self):
        r6 = G.Isometry([[1, -1], [1, 0]], [0, 0])
        mirror = G.Isometry([[1, -1], [0, -1]], [0, 0])
        grp = G.close_group([r6, mirror], max_order=24, lattice="hexagonal")
        assert len(grp) == 12

    def test_hexagonal_rotation_rejected_on_square_lattice(self):
        r6 = G.Isometry([[1, -1], [1, 0]], [0, 0])
        with pytest.raises(ValueError):
            G.close_group([r6], max_order=24, lattice="square")

    def test_deterministic_order(self):
        a = G.close_group([ROT90, MIRROR_X], max_order=16)
        b = G.close_group([ROT90, MIRROR_X], max_order=16)
        for g, h in zip(a, b):
            np.testing.assert_array_equal(g.rotation, h.rotation)
            np.testing.assert_array_equal(g.translation, h.translation)


def builtin_groups():
    chain4 = G.close_group([refl_1d(), trans_1d(0.25)], max_order=16)
    p4mm = G.close_group([ROT90, MIRROR_X], max_order=16)
    hexa = G.close_group(
        [G.Isometry([[1, -1], [1, 0]], [0, 0]), G.Isometry([[1, -1], [0, -1]], [0, 0])],
        max_order=24,
        lattice="hexagonal",
    )
    cubic = G.close_group(
        [
            G.Isometry([[0, -1, 0], [1, 0, 0], [0, 0, 1]], [0, 0, 0]),
            G.Isometry([[1, 0, 0], [0, 0, -1], [0, 1, 0]], [0, 0, 0]),
            G.Isometry([[-1, 0, 0], [0, 1, 0], [0, 0, 1]], [0, 0, 0]),
        ],
        max_order=192,
    )
    return [chain4, p4mm, hexa, cubic]


@pytest.mark.parametrize("grp", builtin_groups(), ids=lambda g: f"{g.lattice}-{len(g)}")
class TestGroupAxioms:
    def test_closure_and_inverse_table(self, grp):
        for g in grp:
            grp.index_of(G.canonical(G.inverse(g)))
            for h in grp:
                grp.index_of(G.canonical(G.compose(g, h)))

    def test_associativity_exact_on_canonical_forms(self, grp):
        els = list(grp)
        for g in els:
            for h in els:
                gh = G.canonical(G.compose(g, h))
                for k in els[:4]:
                    left = G.canonical(G.compose(gh, k))
                    right = G.canonical(G.compose(g, G.canonical(G.compose(h, k))))
                    assert G.isometries_equal(left, right, tol=1e-12)

    def test_identity_is_first_element(self, grp):
        assert G.isometries_equal(grp[0], G.identity_isometry(grp.dim))


class TestDiagonalAction:
    def test_identity_fixes_configuration(self):
        c = G.Configuration([[0.1, 0.2], [0.3, 0.4]], ["up", "down"])
        out = G.apply_diagonal(G.identity_isometry(2), c)
        np.testing.assert_allclose(out.positions, c.positions, atol=1e-15)
        np.testing.assert_array_equal(out.spins, c.spins)

    def test_1d_reflection(self):
        c = G.Configuration([[0.2], [0.7]], ["up", "up"])
        out = G.apply_diagonal(refl_1d(), c)
        np.testing.assert_allclose(out.positions.ravel(), [0.8, 0.3], atol=1e-15)

    def test_2d_translation(self):
        c = G.Configuration([[0.25, 0.25], [0.75, 0.5]], ["up", "down"])
        g = G.Isometry(np.eye(2), [0.5, 0.0])
        out = G.apply_diagonal(g, c)
        np.testing.assert_allclose(out.positions, [[0.75, 0.25], [0.25, 0.5]], atol=1e-15)

    def test_composition_homomorphism(self):
        rng = np.random.default_rng(3)
        grp = G.close_group([ROT90, G.Isometry(np.eye(2), [0.5, 0.5])], max_order=16)
        c = G.Configuration(rng.uniform(size=(3, 2)), ["up", "up", "down"])
        for g in grp:
            for h in grp:
                a = G.apply_diagonal(G.compose(g, h), c)
                b = G.apply_diagonal(g, G.apply_diagonal(h, c))
                assert np.max(np.abs(G.torus_delta(a.positions, b.positions))) < 1e-12

    def test_orbit_length(self):
        grp = G.close_group([refl_1d(), trans_1d(0.5)], max_order=8)
        action = G.DiagonalAction(grp)
        orbit = action.orbit(G.Configuration([[0.1]], ["up"]))
        assert len(orbit) == len(grp)


class TestGTilde:
    def test_pure_translations_collapse(self):
        grp = G.close_group([trans_1d(0.25)], max_order=8)
        gt = G.build_g_tilde(grp)
        assert len(gt) == 1

    def test_strips_translation_from_reflection(self):
        grp = G.close_group([refl_1d(0.5)], max_order=4)
        gt = G.build_g_tilde(grp)
        assert len(gt) == 2
        assert all(np.all(g.translation == 0.0) for g in gt)
        np.testing.assert_array_equal(gt[1].rotation, [[-1.0]])

    def test_point_group_unchanged(self):
        grp = G.close_group([ROT90, MIRROR_X], max_order=16)
        gt = G.build_g_tilde(grp)
        assert len(gt) == len(grp)
        for g in grp:
            gt.index_of(g)


class TestSymmetricConfiguration:
    def test_trivial_group_accepts_anything(self):
        grp = G.close_group([], max_order=1, lattice="chain")
        c = G.Configuration([[0.123]], ["up"])
        assert G.is_symmetric_configuration(grp, c, 1e-9)

    def test_reflection_pair_symmetric(self):
        grp = G.close_group([refl_1d()], max_order=2)
        c = G.Configuration([[0.25], [0.75]], ["up", "up"])
        assert G.is_symmetric_configuration(grp, c, 1e-9)

    def test_reflection_pair_asymmetric(self):
        grp = G.close_group([refl_1d()], max_order=2)
        c = G.Configuration([[0.2], [0.75]], ["up", "up"])
        assert not G.is_symmetric_configuration(grp, c, 1e-9)

    def test_opposite_spins_may_not_swap(self):
        grp = G.close_group([refl_1d()], max_order=2)
        c = G.Configuration([[0.25], [0.75]], ["up", "down"])
        assert not G.is_symmetric_configuration(grp, c, 1e-9)

    def test_torus_wraparound_match(self):
        grp = G.close_group([trans_1d(0.5)], max_order=4)
        c = G.Configuration([[0.999999999], [0.499999999]], ["up", "up"])
        assert G.is_symmetric_configuration(grp, c, 1e-6)

    def test_rejects_nonpositive_tol(self):
        grp = G.close_group([], max_order=1, lattice="chain")
        with pytest.raises(ValueError):
            G.is_symmetric_configuration(grp, G.Configuration([[0.5]], ["up"]), 0.0)


@settings(max_examples=50, deadline=None)
@given(
    b=st.floats(min_value=-4.0, max_value=4.0, allow_nan=False),
    x=st.floats(min_value=0.0, max_value=1.0, exclude_max=True),
)
def test_canonical_acts_identically_on_torus(b, x):
    g = trans_1d(b)
    c = G.canonical(g)
    assert 0.0 <= c.translation[0] < 1.0
    raw = np.mod(g.apply([x]), 1.0)
    can = np.mod(c.apply([x]), 1.0)
    assert abs(G.torus_delta(raw, can)[0]) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=7), st.integers(min_value=0, max_value=7))
def test_p4mm_inverse_pairs(i, j):
    grp = G.close_group([ROT90, MIRROR_X], max_order=16)
    g, h = grp[i], grp[j]
    prod = G.canonical(G.compose(g, G.inverse(g)))
    assert G.isometries_equal(prod, G.identity_isometry(2), tol=1e-12)
    k = grp.index_of(G.canonical(G.compose(g, h)))
    assert 0 <= k < 8
