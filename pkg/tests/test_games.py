import json

import numpy as np
import pytest

from dualeq.errors import ConstantPayoffError, NotZeroSum, ShapeMismatch
from dualeq.games import (
    GameShape,
    NormalFormGame,
    cce_deviation_gains,
    ce_deviation_gains,
    check_zero_sum,
    expected_deviation_gain,
    exploitability_of_marginals,
    game_from_dict,
    game_to_dict,
    is_standardized,
    joint_index,
    joint_profile,
    marginals,
    norm_scale,
    permute_players,
    permute_strategies,
    product_joint,
    standardize_payoffs,
    z_sigma,
)


def random_game(rng, shape=(2, 2)):
    return NormalFormGame(tuple(rng.standard_normal(shape) for _ in shape))


class TestShape:
    def test_joint_size(self):
        s = GameShape((2, 3, 4))
        assert s.num_players == 3
        assert s.joint_size == 24
        assert not s.is_cubic
        assert GameShape((3, 3)).is_cubic

    def test_invalid(self):
        with pytest.raises(ShapeMismatch):
            GameShape((5,))
        with pytest.raises(ShapeMismatch):
            GameShape((2, 1))

    def test_index_bijection_row_major(self):
        s = GameShape((2, 3))
        # last player's index varies fastest
        assert joint_index(s, (0, 0)) == 0
        assert joint_index(s, (0, 2)) == 2
        assert joint_index(s, (1, 0)) == 3
        for i in range(6):
            assert joint_index(s, joint_profile(s, i)) == i

    def test_parse(self):
        assert GameShape.parse("2x2x3").strategies == (2, 2, 3)
        with pytest.raises(ShapeMismatch):
            GameShape.parse("2xbad")


class TestStandardize:
    def test_hand_example_l2(self):
        g = NormalFormGame((np.array([[1.0, 2.0], [3.0, 4.0]]),) * 2)
        out = standardize_payoffs(g, m=2)
        want = np.array([-1.5, -0.5, 0.5, 1.5]) * 2 / np.sqrt(5)
        np.testing.assert_allclose(out.payoffs[0].ravel(), want, atol=1e-12)
        assert np.isclose(np.linalg.norm(out.payoffs[0]), 2.0)

    def test_idempotent(self, rng):
        g = standardize_payoffs(random_game(rng, (3, 4)))
        again = standardize_payoffs(g)
        for a, b in zip(g.payoffs, again.payoffs):
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_constant_rejected(self):
        g = NormalFormGame((np.zeros((2, 2)), np.ones((2, 2))))
        with pytest.raises(ConstantPayoffError):
            standardize_payoffs(g)

    def test_offset_scale_invariance(self, rng):
        g = random_game(rng, (2, 3))
        shifted = NormalFormGame(tuple(3.7 * p + 11.0 for p in g.payoffs))
        a = standardize_payoffs(g)
        b = standardize_payoffs(shifted)
        for x, y in zip(a.payoffs, b.payoffs):
            np.testing.assert_allclose(x, y, atol=1e-9)

    @pytest.mark.parametrize("m", [1, 2, "inf"])
    def test_norms_hit_target(self, rng, m):
        g = standardize_payoffs(random_game(rng, (2, 2, 2)), m=m)
        assert is_standardized(g, m=m)

    def test_gains_scale_with_standardization(self, rng):
        g = random_game(rng, (2, 2))
        std = standardize_payoffs(g)
        scale = np.linalg.norm(std.payoffs[0]) / np.linalg.norm(g.payoffs[0] - g.payoffs[0].mean())
        raw = cce_deviation_gains(g)[0]
        nrm = cce_deviation_gains(std)[0]
        np.testing.assert_allclose(nrm, raw * scale, atol=1e-9)


class TestScaleConstants:
    def test_z_sigma_values(self):
        assert np.isclose(z_sigma(GameShape((2, 2))), 4 * np.sqrt(5.0 / 3.0))
        # |A| = 2 is below the minimum game size but the formula itself:
        n = 64
        assert np.isclose(z_sigma(GameShape((8, 8))) / n, np.sqrt(65.0 / 63.0))

    def test_z_sigma_limit(self):
        big = GameShape((100, 100))
        assert abs(z_sigma(big) / big.joint_size - 1.0) < 1e-3

    def test_norm_scales(self):
        assert norm_scale(2, 4) == 2.0
        assert np.isclose(norm_scale(1, 4), 4 * np.sqrt(2 / np.pi))
        # E[max of 1 |normal|] = sqrt(2/pi)
        assert np.isclose(norm_scale("inf", 1), np.sqrt(2 / np.pi), atol=1e-8)


class TestDeviationGains:
    def test_pd_cce_hand_value(self, prisoners_dilemma):
        gains = cce_deviation_gains(prisoners_dilemma)
        # row player deviating to D while (C, C) is played: 0 - (-1) = 1
        assert gains[0][1, 0, 0] == 1.0

    def test_no_deviation_slice_zero(self, rng):
        g = random_game(rng, (3, 2))
        for p, dev in enumerate(cce_deviation_gains(g)):
            for prof in np.ndindex(*g.shape.strategies):
                assert dev[(prof[p],) + prof] == 0.0

    def test_pd_ce_hand_values(self, prisoners_dilemma):
        gains = ce_deviation_gains(prisoners_dilemma)
        # deviate to D from recommended C at (C, C): gain 1
        assert gains[0][1, 0, 0, 0] == 1.0
        # joint (D, C) has a_1 != recommendation C: zero
        assert gains[0][1, 0, 1, 0] == 0.0

    def test_ce_diagonal_zero(self, rng):
        g = random_game(rng, (3, 3))
        for dev in ce_deviation_gains(g):
            for i in range(3):
                assert np.all(dev[i, i] == 0.0)

    def test_ce_aggregates_to_cce(self, rng):
        for shape in [(2, 2), (3, 2), (2, 2, 3)]:
            g = random_game(rng, shape)
            for ce, cce in zip(ce_deviation_gains(g), cce_deviation_gains(g)):
                np.testing.assert_allclose(ce.sum(axis=1), cce, atol=1e-12)


class TestExpectedGain:
    def test_pd_uniform(self, prisoners_dilemma):
        gains = cce_deviation_gains(prisoners_dilemma)
        uniform = np.full((2, 2), 0.25)
        e = expected_deviation_gain(gains, uniform)
        assert np.isclose(e[0][1], 0.5)  # row deviating to D

    def test_point_mass_on_dominant_equilibrium(self, prisoners_dilemma):
        point = np.zeros((2, 2))
        point[1, 1] = 1.0  # (D, D)
        e = expected_deviation_gain(cce_deviation_gains(prisoners_dilemma), point)
        assert all(g.max() <= 0 for g in e)

    def test_zero_gains(self, rng):
        e = expected_deviation_gain([np.zeros((2, 2, 2))], np.full((2, 2), 0.25))
        np.testing.assert_array_equal(e[0], 0.0)


class TestMarginals:
    def test_uniform(self):
        m = marginals(np.full((2, 2), 0.25))
        np.testing.assert_allclose(m[0], [0.5, 0.5])

    def test_point_mass(self):
        sig = np.zeros((2, 3))
        sig[1, 2] = 1.0
        m = marginals(sig)
        np.testing.assert_array_equal(m[0], [0, 1])
        np.testing.assert_array_equal(m[1], [0, 0, 1])

    def test_product_roundtrip(self):
        a, b = np.array([0.3, 0.7]), np.array([0.6, 0.4])
        m = marginals(product_joint([a, b]))
        np.testing.assert_allclose(m[0], a)
        np.testing.assert_allclose(m[1], b)


class TestExploitability:
    def test_pd_dominant_point(self, prisoners_dilemma):
        point = np.zeros((2, 2))
        point[1, 1] = 1.0
        assert exploitability_of_marginals(prisoners_dilemma, point) == 0.0

    def test_matching_pennies_uniform(self, matching_pennies):
        assert exploitability_of_marginals(matching_pennies, np.full((2, 2), 0.25)) == 0.0

    def test_matching_pennies_pure(self, matching_pennies):
        # exactly one player is exploited at any pure joint, gaining 2
        point = np.zeros((2, 2))
        point[0, 0] = 1.0
        assert np.isclose(exploitability_of_marginals(matching_pennies, point), 2.0)

    def test_zero_sum_check(self, matching_pennies, prisoners_dilemma):
        check_zero_sum(matching_pennies)
        with pytest.raises(NotZeroSum):
            check_zero_sum(prisoners_dilemma)


class TestPermutations:
    def test_strategy_permutation(self, rng):
        g = random_game(rng, (3, 2))
        perm = [2, 0, 1]
        pg = permute_strategies(g, 0, perm)
        for i in range(3):
            np.testing.assert_array_equal(pg.payoffs[0][i], g.payoffs[0][perm[i]])

    def test_player_permutation_identity_payoffs(self, rng):
        g = random_game(rng, (2, 3, 2))
        perm = [2, 0, 1]
        pg = permute_players(g, perm)
        for new_p, old_p in enumerate(perm):
            for prof in np.ndindex(*pg.shape.strategies):
                old_prof = tuple(prof[perm.index(q)] for q in range(3))
                assert pg.payoffs[new_p][prof] == g.payoffs[old_p][old_prof]


class TestFileFormat:
    def test_roundtrip_bit_exact(self, rng, tmp_path):
        g = random_game(rng, (2, 3))
        doc = json.loads(json.dumps(game_to_dict(g)))
        back, targets = game_from_dict(doc)
        assert targets is None
        for a, b in zip(g.payoffs, back.payoffs):
            np.testing.assert_array_equal(a, b)
