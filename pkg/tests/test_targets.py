import numpy as np
import pytest

from dualeq.errors import FloorTooLarge, ShapeMismatch, UnknownParameterization
from dualeq.games import GameShape, is_standardized, norm_scale, standardize_payoffs
from dualeq.targets import (
    PARAMETERIZATIONS,
    Parameterization,
    SelectionTargets,
    make_targets,
    sample_invariant_game,
    sample_invariant_payoffs,
    sample_pure_joint_targets,
    targets_from_dict,
    targets_to_dict,
)


@pytest.fixture
def game22(rng):
    return sample_invariant_game(GameShape((2, 2)), 2, rng)


class TestMakeTargets:
    def test_me_row(self, game22, rng):
        t = make_targets("ME", game22, rng)
        np.testing.assert_allclose(t.sigma_hat, 0.25)
        np.testing.assert_array_equal(t.epsilon_hat, [0.0, 0.0])
        np.testing.assert_array_equal(t.epsilon_cap, [2.0, 2.0])  # Z_2 = sqrt(4)
        assert t.mu == 0.0
        assert np.all(t.welfare == 0.0)

    def test_mu_row(self, game22, rng):
        t = make_targets("MU", game22, rng)
        total = sum(game22.payoffs)
        want = (total - total.mean())
        want = want * 2.0 / np.linalg.norm(want)
        np.testing.assert_allclose(t.welfare, want, atol=1e-12)
        assert t.mu > 1.0

    def test_ms_row(self, game22, rng):
        t = make_targets("MS", game22, rng)
        np.testing.assert_array_equal(t.epsilon_hat, [-2.0, -2.0])

    def test_mre_full_support(self, game22, rng):
        t = make_targets("MRE", game22, rng)
        assert (t.sigma_hat > 0).all()
        assert np.isclose(t.sigma_hat.sum(), 1.0)

    def test_eps_variants_in_range(self, game22, rng):
        t = make_targets("eME", game22, rng)
        assert ((-2.0 <= t.epsilon_hat) & (t.epsilon_hat < 2.0)).all()

    def test_mt_requires_sigma(self, game22, rng):
        with pytest.raises(ShapeMismatch):
            make_targets("MT", game22, rng)
        sig = np.array([[0.5, 0.25], [0.125, 0.125]])
        t = make_targets("MT", game22, rng, sigma_hat=sig)
        np.testing.assert_array_equal(t.sigma_hat, sig)

    def test_unknown_name(self, game22, rng):
        with pytest.raises(UnknownParameterization):
            make_targets("MAXENT", game22, rng)

    def test_unicode_aliases(self):
        assert Parameterization("εMRE").name == "eMRE"

    def test_all_rows_validate(self, rng):
        shape = GameShape((3, 2))
        game = sample_invariant_game(shape, 2, rng)
        for name in PARAMETERIZATIONS:
            kwargs = {"sigma_hat": np.full((3, 2), 1 / 6)} if name == "MT" else {}
            t = make_targets(name, game, rng, **kwargs)
            assert t.num_players == 2  # constructor enforces the invariants


class TestInvariantSampling:
    @pytest.mark.parametrize("m", [1, 2, "inf"])
    def test_on_sphere(self, rng, m):
        shape = GameShape((2, 2, 2))
        g = sample_invariant_game(shape, m, rng)
        assert is_standardized(g, m=m, tol=1e-9)

    def test_standardize_idempotent_on_samples(self, rng):
        g = sample_invariant_game(GameShape((4, 4)), 2, rng)
        again = standardize_payoffs(g)
        for a, b in zip(g.payoffs, again.payoffs):
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_unit_element_variance(self, rng):
        batch = sample_invariant_payoffs(GameShape((2, 2)), 2, rng, batch=20_000)
        assert 0.98 < batch.var() < 1.02

    def test_seed_determinism(self):
        a = sample_invariant_game(GameShape((2, 2)), 2, np.random.default_rng(7))
        b = sample_invariant_game(GameShape((2, 2)), 2, np.random.default_rng(7))
        for x, y in zip(a.payoffs, b.payoffs):
            np.testing.assert_array_equal(x, y)

    def test_permutation_symmetry_of_distribution(self, rng):
        # permuting a strategy axis should leave summary statistics unchanged
        batch = sample_invariant_payoffs(GameShape((2, 3)), 2, rng, batch=50_000)
        permuted = batch[:, :, :, [2, 0, 1]]
        for stat in (np.mean, np.var):
            assert abs(stat(batch[:, 0, 0, 0]) - stat(permuted[:, 0, 0, 0])) < 0.02


class TestPureJointTargets:
    def test_construction(self):
        out = sample_pure_joint_targets(GameShape((2, 2)), 1e-3)
        assert len(out) == 4
        for i, t in enumerate(out):
            assert np.isclose(t.sigma_hat.sum(), 1.0)
            assert np.isclose(t.sigma_hat.ravel()[i], 0.997)

    def test_floor_too_large(self):
        with pytest.raises(FloorTooLarge):
            sample_pure_joint_targets(GameShape((2, 2)), 0.3)


class TestTargetsDocument:
    def test_named_roundtrip(self, game22, rng):
        t = make_targets("ME", game22, rng)
        doc = targets_to_dict(t, "ME")
        back = targets_from_dict(doc, game22, rng)
        np.testing.assert_array_equal(back.sigma_hat, t.sigma_hat)
        np.testing.assert_array_equal(back.epsilon_hat, t.epsilon_hat)

    def test_explicit_fields_win(self, game22, rng):
        doc = {"parameterization": "ME", "rho": 50.0, "epsilon_hat": [-0.5, -0.25]}
        t = targets_from_dict(doc, game22, rng)
        assert t.rho == 50.0
        np.testing.assert_array_equal(t.epsilon_hat, [-0.5, -0.25])

    def test_invariants_enforced(self, game22):
        with pytest.raises(ShapeMismatch):
            SelectionTargets(
                np.full((2, 2), 0.25),
                np.array([3.0, 0.0]),  # above the cap
                np.array([2.0, 2.0]),
                np.zeros((2, 2)),
            )
