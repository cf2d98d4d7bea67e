import numpy as np
import numpy.testing as npt
import pytest

from shrinknet.errors import ConfigError, DomainError, ShapeError
from shrinknet.penalties import (PenaltyConfig, h_eval, penalty_subgrad,
                                 penalty_value, shalo_subgrad, shalo_value)

from conftest import fd_grad, rel_err

W3 = np.array([1.0, -2.0, 3.0])


class TestCoefficientMap:
    def test_inv_pow_values(self):
        h, dh = h_eval("inv_pow", 2, np.array([2.0]))
        npt.assert_array_equal(h, [0.25])
        npt.assert_array_equal(dh, [-0.25])

    def test_inv_pow_k3(self):
        h, dh = h_eval("inv_pow", 3, np.array([2.0]))
        npt.assert_allclose(h, [0.125])
        npt.assert_allclose(dh, [-3.0 / 16.0])

    def test_log_sq_values(self):
        h, dh = h_eval("log_sq", 2, np.array([np.e, 1.0]))
        npt.assert_allclose(h, [1.0, 0.0], atol=1e-15)
        npt.assert_allclose(dh, [2.0 / np.e, 0.0], atol=1e-15)

    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            h_eval("inv_pow", 2, np.array([0.0]))
        with pytest.raises(DomainError):
            h_eval("log_sq", 2, np.array([1.0, -1.0]))

    def test_fd_consistency(self):
        rng = np.random.default_rng(5)
        for kind in ("inv_pow", "log_sq"):
            lam = rng.uniform(0.3, 3.0, size=8)
            _, dh = h_eval(kind, 2, lam)
            fd = fd_grad(lambda v: float(h_eval(kind, 2, v)[0].sum()), lam)
            assert rel_err(dh, fd) < 1e-7


class TestValues:
    def test_none(self):
        assert penalty_value(PenaltyConfig(kind="none"), W3) == 0.0

    def test_l1(self):
        assert penalty_value(PenaltyConfig(kind="l1", xi=2.0), W3) == 12.0

    def test_lq_half(self):
        cfg = PenaltyConfig(kind="lq", xi=1.0, q=0.5)
        npt.assert_allclose(penalty_value(cfg, np.array([1.0, 4.0])), 9.0)

    def test_lq_two(self):
        cfg = PenaltyConfig(kind="lq", xi=1.0, q=2.0)
        npt.assert_allclose(penalty_value(cfg, np.array([3.0, -4.0])), 5.0)

    def test_weighted(self):
        cfg = PenaltyConfig(kind="weighted", xi=1.0)
        val = penalty_value(cfg, np.array([1.0, -1.0, 2.0]), np.array([1.0, 2.0, 3.0]))
        assert val == 9.0

    def test_mcp_standard(self):
        cfg = PenaltyConfig(kind="mcp", xi=1.0, mcp_lam=1.0, gamma=2.0)
        npt.assert_allclose(penalty_value(cfg, np.array([0.5])), 0.4375)
        npt.assert_allclose(penalty_value(cfg, np.array([5.0])), 1.0)  # plateau
        # continuity at the knee |w| = gamma * mcp_lam
        npt.assert_allclose(penalty_value(cfg, np.array([2.0])), 1.0)

    def test_mcp_printed_form(self):
        cfg = PenaltyConfig(kind="mcp", xi=1.0, mcp_lam=1.0, gamma=2.0,
                            mcp_form="printed")
        npt.assert_allclose(penalty_value(cfg, np.array([0.5])), 0.375)
        npt.assert_allclose(penalty_value(cfg, np.array([5.0])), 1.0)
        # the legacy printed form is discontinuous at the knee
        npt.assert_allclose(penalty_value(cfg, np.array([2.0])), 0.0)

    def test_halo(self):
        cfg = PenaltyConfig(kind="halo", xi=1.0, psi=1.0)
        val = penalty_value(cfg, np.array([1.0, -2.0]), np.array([1.0, 2.0]))
        npt.assert_allclose(val, 4.5)  # 1*1 + 0.25*2 + (1+2)

    def test_sws(self):
        cfg = PenaltyConfig(kind="sws", xi=1.0, psi=1.0)
        val = penalty_value(cfg, np.array([1.0, -2.0]), 2.0)
        npt.assert_allclose(val, 2.75)  # 0.25*3 + 2

    def test_shalo1(self):
        cfg = PenaltyConfig(kind="shalo1", xi=1.0, psi=1.0, group_map=((0, 1), (2,)))
        val = penalty_value(cfg, W3, np.array([1.0, 2.0]))
        npt.assert_allclose(val, 6.75)  # 1*3 + 0.25*3 + (1+2)

    def test_shalo2_hand_expansion(self):
        cfg = PenaltyConfig(kind="shalo2", xi=1.0, psi=1.0, group_map=((0, 1), (2,)))
        lam_g = np.array([1.0, 2.0])
        mu = np.array([1.0, 2.0, 1.0])
        # inner_1 = (1*1 + 0.25*2) + (1 + 2) = 4.5 ; inner_2 = 3*1 + 1 = 4
        # total = 1*4.5 + 0.25*4 + (1 + 2) = 8.5
        npt.assert_allclose(penalty_value(cfg, W3, (lam_g, mu)), 8.5)


class TestSubgradients:
    rng = np.random.default_rng(77)

    def _fd_w(self, cfg, w, lam):
        return fd_grad(lambda v: penalty_value(cfg, v, lam), w)

    def test_l1_lq_mcp_weighted_fd(self):
        w = self.rng.uniform(0.3, 2.0, size=6) * self.rng.choice([-1, 1], size=6)
        lam = self.rng.uniform(0.5, 2.0, size=6)
        for cfg, use_lam in [
            (PenaltyConfig(kind="l1", xi=0.7), False),
            (PenaltyConfig(kind="lq", xi=0.7, q=0.8), False),
            (PenaltyConfig(kind="lq", xi=0.7, q=1.5), False),
            (PenaltyConfig(kind="mcp", xi=0.7, mcp_lam=1.0, gamma=3.0), False),
            (PenaltyConfig(kind="weighted", xi=0.7), True),
        ]:
            arg = lam if use_lam else None
            dw, dlam = penalty_subgrad(cfg, w, arg)
            assert dlam is None
            assert rel_err(dw, self._fd_w(cfg, w, arg)) < 1e-6, cfg.kind

    def test_halo_fd_both_variables(self):
        for h_kind in ("inv_pow", "log_sq"):
            cfg = PenaltyConfig(kind="halo", xi=0.4, psi=0.9, h_kind=h_kind)
            w = self.rng.uniform(0.3, 2.0, size=5) * self.rng.choice([-1, 1], size=5)
            lam = self.rng.uniform(0.4, 2.5, size=5)
            dw, dlam = penalty_subgrad(cfg, w, lam)
            assert rel_err(dw, self._fd_w(cfg, w, lam)) < 1e-6
            fd_lam = fd_grad(lambda v: penalty_value(cfg, w, v), lam)
            assert rel_err(dlam, fd_lam) < 1e-6

    def test_sws_fd(self):
        cfg = PenaltyConfig(kind="sws", xi=0.4, psi=0.9)
        w = np.array([0.5, -1.5, 2.0])
        lam = np.array([1.7])
        dw, dlam = penalty_subgrad(cfg, w, lam)
        assert isinstance(dlam, float)
        assert rel_err(dw, self._fd_w(cfg, w, lam)) < 1e-6
        fd_lam = fd_grad(lambda v: penalty_value(cfg, w, v), lam)
        assert rel_err(np.array([dlam]), fd_lam) < 1e-6

    def test_shalo_fd(self):
        groups = ((0, 2), (1, 3, 4))
        cfg1 = PenaltyConfig(kind="shalo1", xi=0.4, psi=0.6, group_map=groups)
        cfg2 = PenaltyConfig(kind="shalo2", xi=0.4, psi=0.6, group_map=groups)
        w = self.rng.uniform(0.3, 2.0, size=5) * self.rng.choice([-1, 1], size=5)
        lam_g = self.rng.uniform(0.5, 2.0, size=2)
        mu = self.rng.uniform(0.5, 2.0, size=5)

        dw, dg = penalty_subgrad(cfg1, w, lam_g)
        assert rel_err(dw, self._fd_w(cfg1, w, lam_g)) < 1e-6
        assert rel_err(dg, fd_grad(lambda v: penalty_value(cfg1, w, v), lam_g)) < 1e-6

        dw2, (dg2, dmu) = penalty_subgrad(cfg2, w, (lam_g, mu))
        assert rel_err(dw2, fd_grad(lambda v: penalty_value(cfg2, v, (lam_g, mu)), w)) < 1e-6
        assert rel_err(dg2, fd_grad(lambda v: penalty_value(cfg2, w, (v, mu)), lam_g)) < 1e-6
        assert rel_err(dmu, fd_grad(lambda v: penalty_value(cfg2, w, (lam_g, v)), mu)) < 1e-6

    def test_sign_zero_is_zero(self):
        w = np.array([0.0, 1.0, -1.0])
        dw, _ = penalty_subgrad(PenaltyConfig(kind="l1", xi=1.0), w)
        npt.assert_array_equal(dw, [0.0, 1.0, -1.0])
        dw, _ = penalty_subgrad(PenaltyConfig(kind="halo", xi=1.0, psi=1.0),
                                w, np.ones(3))
        assert dw[0] == 0.0

    def test_lq_zero_vector(self):
        dw, _ = penalty_subgrad(PenaltyConfig(kind="lq", xi=1.0, q=0.5), np.zeros(4))
        npt.assert_array_equal(dw, np.zeros(4))

    def test_mcp_deriv_nonincreasing_in_magnitude(self):
        cfg = PenaltyConfig(kind="mcp", xi=1.3, mcp_lam=0.8, gamma=2.5)
        for seed in range(20):
            a = np.sort(np.random.default_rng(seed).uniform(0, 4, size=30))
            dw, _ = penalty_subgrad(cfg, a)
            assert np.all(np.diff(dw) <= 1e-15)
            assert np.all(dw >= 0.0)


class TestIdentities:
    def test_tied_lambda_matches_shared(self):
        """Per-weight coefficients all equal to one shared value reproduce the
        shared-coefficient penalty when its psi is scaled by the weight count."""
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = int(rng.integers(2, 9))
            w = rng.uniform(0.2, 3.0, size=p) * rng.choice([-1, 1], size=p)
            lam = float(rng.uniform(0.4, 2.5))
            xi, psi = float(rng.uniform(0.1, 2)), float(rng.uniform(0.1, 2))
            halo = PenaltyConfig(kind="halo", xi=xi, psi=psi)
            sws = PenaltyConfig(kind="sws", xi=xi, psi=p * psi)
            v_halo = penalty_value(halo, w, np.full(p, lam))
            v_sws = penalty_value(sws, w, lam)
            npt.assert_allclose(v_halo, v_sws, rtol=1e-12)
            dw_h, dlam_h = penalty_subgrad(halo, w, np.full(p, lam))
            dw_s, dlam_s = penalty_subgrad(sws, w, lam)
            npt.assert_array_equal(dw_h, dw_s)
            npt.assert_allclose(dlam_h.sum(), dlam_s, rtol=1e-12)

    def test_tied_lambda_exact_at_single_weight(self):
        halo = PenaltyConfig(kind="halo", xi=0.3, psi=0.7)
        sws = PenaltyConfig(kind="sws", xi=0.3, psi=0.7)
        w, lam = np.array([-1.75]), 1.3
        assert penalty_value(halo, w, np.array([lam])) == penalty_value(sws, w, lam)
        dw_h, dlam_h = penalty_subgrad(halo, w, np.array([lam]))
        dw_s, dlam_s = penalty_subgrad(sws, w, lam)
        assert dw_h[0] == dw_s[0]
        assert dlam_h[0] == dlam_s

    def test_singleton_groups_match_per_weight(self):
        w = np.array([0.5, -1.0, 2.0])
        lam = np.array([1.0, 0.5, 2.0])
        halo = PenaltyConfig(kind="halo", xi=0.8, psi=0.3)
        sh = PenaltyConfig(kind="shalo1", xi=0.8, psi=0.3,
                           group_map=((0,), (1,), (2,)))
        npt.assert_allclose(penalty_value(halo, w, lam), penalty_value(sh, w, lam),
                            rtol=1e-15)
        dw_h, dl_h = penalty_subgrad(halo, w, lam)
        dw_s, dl_s = penalty_subgrad(sh, w, lam)
        npt.assert_allclose(dw_h, dw_s, rtol=1e-15)
        npt.assert_allclose(dl_h, dl_s, rtol=1e-15)

    def test_subgrad_structure_by_kind(self):
        w = np.array([1.0, -1.0])
        assert penalty_subgrad(PenaltyConfig(kind="none"), w)[1] is None
        assert penalty_subgrad(PenaltyConfig(kind="l1"), w)[1] is None
        assert penalty_subgrad(PenaltyConfig(kind="weighted"), w, np.ones(2))[1] is None
        assert isinstance(
            penalty_subgrad(PenaltyConfig(kind="sws"), w, 1.0)[1], float)
        assert penalty_subgrad(PenaltyConfig(kind="halo"), w, np.ones(2))[1].shape == (2,)
        g = penalty_subgrad(PenaltyConfig(kind="shalo1", group_map=((0,), (1,))),
                            w, np.ones(2))[1]
        assert g.shape == (2,)
        pair = penalty_subgrad(PenaltyConfig(kind="shalo2", group_map=((0, 1),)),
                               w, (np.ones(1), np.ones(2)))[1]
        assert isinstance(pair, tuple) and pair[0].shape == (1,) and pair[1].shape == (2,)


class TestValidation:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="kind"):
            PenaltyConfig(kind="ridge")

    def test_q_range(self):
        with pytest.raises(ConfigError, match="q"):
            PenaltyConfig(kind="lq", q=0.0)
        with pytest.raises(ConfigError, match="q"):
            PenaltyConfig(kind="lq", q=2.5)

    def test_negative_strengths(self):
        with pytest.raises(ConfigError):
            PenaltyConfig(kind="l1", xi=-1.0)

    def test_bad_h_kind_and_k(self):
        with pytest.raises(ConfigError):
            PenaltyConfig(kind="halo", h_kind="exp")
        with pytest.raises(ConfigError):
            PenaltyConfig(kind="halo", k=0)

    def test_missing_lam(self):
        with pytest.raises(ConfigError, match="requires lambda"):
            penalty_value(PenaltyConfig(kind="halo"), W3)

    def test_lam_shape_mismatch(self):
        with pytest.raises(ShapeError):
            penalty_value(PenaltyConfig(kind="halo"), W3, np.ones(2))
        with pytest.raises(ShapeError):
            penalty_value(PenaltyConfig(kind="sws"), W3, np.ones(2))

    def test_group_map_must_partition(self):
        cfg = PenaltyConfig(kind="shalo1", group_map=((0, 1),))
        with pytest.raises(ConfigError, match="partition"):
            penalty_value(cfg, W3, np.ones(1))
        overlap = PenaltyConfig(kind="shalo1", group_map=((0, 1), (1, 2)))
        with pytest.raises(ConfigError, match="partition"):
            penalty_value(overlap, W3, np.ones(2))
        empty = PenaltyConfig(kind="shalo1", group_map=((0, 1, 2), ()))
        with pytest.raises(ConfigError, match="empty"):
            penalty_value(empty, W3, np.ones(2))

    def test_shalo_needs_group_map_at_evaluation(self):
        with pytest.raises(ConfigError, match="group_map"):
            penalty_value(PenaltyConfig(kind="shalo1"), W3, np.ones(1))

    def test_shalo2_needs_pair(self):
        cfg = PenaltyConfig(kind="shalo2", group_map=((0, 1, 2),))
        with pytest.raises(ConfigError, match="per_group"):
            penalty_value(cfg, W3, np.ones(1))
