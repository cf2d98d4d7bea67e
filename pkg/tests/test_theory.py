import json

import numpy as np
import numpy.testing as npt
import pytest

from shrinknet.errors import ConfigError, ShapeError
from shrinknet.theory import (LinearInstance, convex_xi_max, halo_hessian,
                              hessian_blocks, in_region, min_eigenvalue,
                              objective, region_bounds, rho_from_blocks,
                              rho_printed, schur_complement,
                              smallest_singular_value, verify_convexity)


def _instance(seed=0, p=3, xi=0.05, psi=0.1, loss_scale=1.0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4 * p, p))
    w = rng.uniform(1.0, 2.0, size=p) * rng.choice([-1.0, 1.0], size=p)
    lam = rng.uniform(0.8, 1.5, size=p)
    y = x @ w + 0.1 * rng.normal(size=4 * p)
    return LinearInstance(x=x, y=y, w=w, lam=lam, xi=xi, psi=psi,
                          loss_scale=loss_scale)


def _fd_hessian(f, v, h=1e-4):
    n = v.size
    out = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            vpp = v.copy(); vpp[i] += h; vpp[j] += h
            vpm = v.copy(); vpm[i] += h; vpm[j] -= h
            vmp = v.copy(); vmp[i] -= h; vmp[j] += h
            vmm = v.copy(); vmm[i] -= h; vmm[j] -= h
            out[i, j] = (f(vpp) - f(vpm) - f(vmp) + f(vmm)) / (4 * h * h)
    return out


class TestInstanceValidation:
    def test_shape_errors(self):
        with pytest.raises(ShapeError, match="rows"):
            LinearInstance(np.eye(3), np.zeros(2), np.ones(3), np.ones(3), 1.0)
        with pytest.raises(ShapeError, match="length"):
            LinearInstance(np.eye(3), np.zeros(3), np.ones(2), np.ones(3), 1.0)

    def test_domain_errors(self):
        with pytest.raises(ConfigError, match="positive"):
            LinearInstance(np.eye(2), np.zeros(2), np.ones(2),
                           np.array([1.0, 0.0]), 1.0)
        with pytest.raises(ConfigError, match="xi"):
            LinearInstance(np.eye(2), np.zeros(2), np.ones(2), np.ones(2), 0.0)
        with pytest.raises(ConfigError, match="psi"):
            LinearInstance(np.eye(2), np.zeros(2), np.ones(2), np.ones(2), 1.0,
                           psi=-1.0)
        with pytest.raises(ConfigError, match="loss_scale"):
            LinearInstance(np.eye(2), np.zeros(2), np.ones(2), np.ones(2), 1.0,
                           loss_scale=3.0)


class TestBlocks:
    def test_closed_forms_by_hand(self):
        inst = LinearInstance(
            x=np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]]),
            y=np.zeros(3),
            w=np.array([2.0, -1.0]),
            lam=np.array([1.0, 2.0]),
            xi=3.0,
        )
        a, b, c = hessian_blocks(inst)
        npt.assert_allclose(a, [36.0, 18.0 / 16.0], rtol=1e-15)
        npt.assert_allclose(b, [-6.0, 6.0 / 8.0], rtol=1e-15)
        npt.assert_allclose(c, inst.x.T @ inst.x, rtol=1e-15)

    def test_zero_weight_rejected(self):
        with pytest.raises(ConfigError, match="nonzero"):
            hessian_blocks(LinearInstance(
                np.eye(2), np.zeros(2), np.array([1.0, 0.0]), np.ones(2), 1.0))

    def test_dense_layout(self):
        inst = _instance()
        a, b, c = hessian_blocks(inst)
        h = halo_hessian(inst)
        p = inst.p
        assert h.shape == (2 * p, 2 * p)
        npt.assert_array_equal(h, h.T)
        npt.assert_array_equal(np.diag(h[:p, :p]), a)
        npt.assert_array_equal(np.diag(h[:p, p:]), b)
        npt.assert_array_equal(h[p:, p:], c)
        assert np.all(h[:p, :p][~np.eye(p, dtype=bool)] == 0.0)


class TestFiniteDifferences:
    def test_gradient_matches(self, _helpers=None):
        from conftest import fd_grad, rel_err

        inst = _instance(seed=3)
        p = inst.p

        def f(v):
            return objective(inst, w=v[p:], lam=v[:p])

        v0 = np.concatenate([inst.lam, inst.w])
        num = fd_grad(f, v0)
        dlam = -2.0 * inst.xi * np.abs(inst.w) / inst.lam**3 + inst.psi
        dw = (inst.loss_scale * inst.x.T @ (inst.x @ inst.w - inst.y)
              + inst.xi * np.sign(inst.w) / inst.lam**2)
        assert rel_err(num, np.concatenate([dlam, dw])) < 1e-6

    def test_hessian_matches(self):
        inst = _instance(seed=4)
        p = inst.p

        def f(v):
            return objective(inst, w=v[p:], lam=v[:p])

        v0 = np.concatenate([inst.lam, inst.w])
        num = _fd_hessian(f, v0)
        exact = halo_hessian(inst)
        scale = max(1.0, np.abs(exact).max())
        assert np.abs(num - exact).max() / scale < 1e-5

    def test_loss_scale_two(self):
        base = _instance(seed=5, loss_scale=1.0)
        doubled = LinearInstance(x=base.x, y=base.y, w=base.w, lam=base.lam,
                                 xi=base.xi, psi=base.psi, loss_scale=2.0)
        _, _, c1 = hessian_blocks(base)
        _, _, c2 = hessian_blocks(doubled)
        npt.assert_allclose(c2, 2.0 * c1, rtol=1e-15)
        num = _fd_hessian(
            lambda v: objective(doubled, w=v[base.p:], lam=v[:base.p]),
            np.concatenate([doubled.lam, doubled.w]))
        scale = max(1.0, np.abs(halo_hessian(doubled)).max())
        assert np.abs(num - halo_hessian(doubled)).max() / scale < 1e-5


class TestCouplingRatio:
    def test_quotient_closed_form(self):
        inst = _instance(seed=6)
        expected = 2.0 * inst.xi / (3.0 * inst.lam**2 * np.abs(inst.w))
        npt.assert_allclose(rho_from_blocks(inst), expected, rtol=1e-12)

    def test_reported_product_form_disagrees(self):
        inst = _instance(seed=6)
        prod = (4.0 * inst.xi**2 / inst.lam**6) * (
            6.0 * inst.xi * np.abs(inst.w) / inst.lam**4)
        npt.assert_allclose(rho_printed(inst), prod, rtol=1e-12)
        assert not np.allclose(rho_printed(inst), rho_from_blocks(inst))


class TestSchur:
    def test_two_methods_agree(self):
        inst = _instance(seed=7)
        direct = schur_complement(inst, "direct")
        solved = schur_complement(inst, "solve")
        npt.assert_allclose(direct, solved, rtol=1e-10, atol=1e-12)

    def test_manual_elimination(self):
        inst = _instance(seed=8)
        a, b, c = hessian_blocks(inst)
        npt.assert_allclose(schur_complement(inst), c - np.diag(b * b / a),
                            rtol=1e-14)

    def test_unknown_method(self):
        with pytest.raises(ConfigError, match="method"):
            schur_complement(_instance(), method="lu")


class TestRegion:
    def test_singular_value_against_svd(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            x = rng.normal(size=(12, 4))
            ref = np.linalg.svd(x, compute_uv=False).min()
            npt.assert_allclose(smallest_singular_value(x), ref, rtol=1e-10)
        assert smallest_singular_value(np.zeros((3, 2))) == 0.0

    def test_bracket_by_hand(self):
        inst = LinearInstance(np.eye(2), np.zeros(2), np.array([2.0, 1.0]),
                              np.ones(2), xi=1.0)
        lo, hi = region_bounds(inst)
        assert lo == pytest.approx(12.0)
        assert hi == pytest.approx(24.0)

    def test_membership_is_closed(self):
        def with_xi(xi):
            return LinearInstance(np.eye(2), np.zeros(2), np.array([2.0, 1.0]),
                                  np.ones(2), xi=xi)

        assert in_region(with_xi(2.5))              # 15.625 in [12, 24]
        assert in_region(with_xi(24.0 ** (1 / 3)))  # upper endpoint
        assert not in_region(with_xi(3.0))          # 27 > 24
        assert not in_region(with_xi(2.0))          # 8 < 12


class TestConvexityBound:
    def test_identity_design_value(self):
        inst = LinearInstance(np.eye(2), np.zeros(2), np.array([2.0, 1.0]),
                              np.ones(2), xi=1.0)
        assert convex_xi_max(inst) == pytest.approx(1.5)

    def test_bound_is_tight_for_identity_design(self):
        def with_xi(xi):
            return LinearInstance(np.eye(2), np.zeros(2), np.array([2.0, 1.0]),
                                  np.ones(2), xi=xi)

        at = with_xi(1.5 * (1 - 1e-9))
        h = halo_hessian(at)
        assert min_eigenvalue(h) >= -1e-9 * np.abs(np.linalg.eigvalsh(h)).max()
        over = with_xi(1.5 * 1.01)
        assert min_eigenvalue(halo_hessian(over)) < 0.0

    def test_single_coordinate_boundary(self):
        # X=[[1]], w=2, lam=1: bound = 1.5*1*2 = 3 and at xi=3 the Hessian
        # [[36, -6], [-6, 1]] is exactly singular.
        inst = LinearInstance(np.array([[1.0]]), np.zeros(1), np.array([2.0]),
                              np.ones(1), xi=3.0)
        assert convex_xi_max(inst) == pytest.approx(3.0)
        h = halo_hessian(inst)
        npt.assert_allclose(h, [[36.0, -6.0], [-6.0, 1.0]], rtol=1e-15)
        assert np.linalg.det(h) == pytest.approx(0.0, abs=1e-12)
        assert schur_complement(inst)[0, 0] == pytest.approx(0.0, abs=1e-15)

    def test_bracket_alone_admits_indefinite_instance(self):
        inst = LinearInstance(np.eye(2), np.zeros(2), np.array([2.0, 1.0]),
                              np.ones(2), xi=2.5)
        assert in_region(inst)
        assert convex_xi_max(inst) < inst.xi
        assert min_eigenvalue(halo_hessian(inst)) < -1e-3


class TestVerifier:
    def test_clean_report(self):
        report = verify_convexity(samples=12, seed=0)
        assert report["inside_tested"] == 12
        assert report["counterexamples"] == []
        assert report["weyl_bounds_hold"] is True
        assert report["min_eig_inside"] >= -report["tolerance"]
        assert report["rejected_draws"] >= 0
        for key in ("samples", "seed", "p_range", "loss_scale", "tolerance",
                    "inside_tested", "rejected_draws", "min_eig_inside",
                    "weyl_bounds_hold", "counterexamples", "rho_note",
                    "bracket_only_counterexample"):
            assert key in report

    def test_report_documents_bracket_counterexample(self):
        doc = verify_convexity(samples=2, seed=1)["bracket_only_counterexample"]
        assert doc["in_region"] is True
        assert doc["min_eigenvalue"] < 0.0
        lo, hi = doc["bracket"]
        assert lo <= doc["xi_cubed"] <= hi
        assert doc["convex_xi_max"] < doc["instance"]["xi"]

    def test_deterministic_for_seed(self):
        a = verify_convexity(samples=6, seed=3)
        b = verify_convexity(samples=6, seed=3)
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
        c = verify_convexity(samples=6, seed=4)
        assert a["min_eig_inside"] != c["min_eig_inside"]

    def test_loss_scale_passthrough(self):
        report = verify_convexity(samples=5, seed=2, loss_scale=2.0)
        assert report["loss_scale"] == 2.0
        assert report["counterexamples"] == []
