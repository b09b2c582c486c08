"""Curl operator assembly, coexact projection, and the eigenproblem."""

import numpy as np
import pytest

from curllab.curlspec import (
    CurlOperator,
    ModeBasis,
    assemble,
    coexact_project,
    eigenpairs,
    residual,
    track_eigenvalue,
)
from curllab.errors import BranchAmbiguityError, EigensolverError
from curllab.fields import (
    FourierField,
    MetricField,
    cos_mode,
    exterior_d,
    l2_norm,
    random_metric,
    sin_mode,
)
from conftest import random_one_form, shear_one_form


def abc_one_form(A=1.0, B=1.0, C=1.0):
    """Dual 1-form of the classic three-term Beltrami field, built by hand."""
    return (
        sin_mode("one_form", 1, (0, 0, 1), 0, A)
        + cos_mode("one_form", 1, (0, 1, 0), 0, C)
        + sin_mode("one_form", 1, (1, 0, 0), 1, B)
        + cos_mode("one_form", 1, (0, 0, 1), 1, A)
        + sin_mode("one_form", 1, (0, 1, 0), 2, C)
        + cos_mode("one_form", 1, (1, 0, 0), 2, B)
    )


def flat_eigenvalue_table(truncation, max_sq):
    """Independent lattice-count oracle: {lambda: real multiplicity}."""
    table = {}
    for m1 in range(-truncation, truncation + 1):
        for m2 in range(-truncation, truncation + 1):
            for m3 in range(-truncation, truncation + 1):
                q = m1 * m1 + m2 * m2 + m3 * m3
                if 0 < q <= max_sq:
                    lam = np.sqrt(q)
                    table[lam] = table.get(lam, 0) + 1
                    table[-lam] = table.get(-lam, 0) + 1
    return table


class TestModeBasis:
    def test_roundtrip(self, rng):
        basis = ModeBasis(2)
        form = random_one_form(2, rng)
        v = basis.pack(form.coeffs)
        assert v.shape == (basis.dim,)
        np.testing.assert_allclose(basis.unpack(v), form.coeffs, atol=1e-14)

    def test_flat_isometry(self, rng, flat):
        basis = ModeBasis(2)
        a = random_one_form(2, rng)
        b = random_one_form(2, rng)
        packed = float(basis.pack(a.coeffs) @ basis.pack(b.coeffs))
        from curllab.fields import l2_inner

        assert packed == pytest.approx(l2_inner(flat, a, b), rel=1e-12)

    def test_dimension(self):
        for n in (1, 2, 3):
            assert ModeBasis(n).dim == 3 * (2 * n + 1) ** 3


class TestApply:
    def test_helical_action_single_mode(self, flat, rng):
        # oracle: hand cross product i m x a on a single Fourier mode
        m = (1, -2, 1)
        a = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        form = FourierField.from_modes(
            "one_form", 2, {(m[0], m[1], m[2], c): a[c] for c in range(3)}
        )
        op = assemble(flat, 2)
        out = op.apply(form)
        expect = 1j * np.cross(m, a)
        got = np.array([out.mode(*m, comp=c) for c in range(3)])
        np.testing.assert_allclose(got, expect, atol=1e-12)

    def test_shear_form_is_unit_eigenform(self, flat):
        form = shear_one_form(1)
        out = assemble(flat, 2).apply(form)
        np.testing.assert_allclose(
            out.coeffs, form.pad_to(2).coeffs, atol=1e-13
        )

    def test_constant_form_in_kernel(self, flat):
        c = FourierField.constant("one_form", [1.0, 2.0, -0.5])
        out = assemble(flat, 1).apply(c)
        assert np.abs(out.coeffs).max() <= 1e-14

    def test_weak_apply_matches_pointwise_star_closely(self, bumpy, rng):
        from curllab.fields import hodge

        op = assemble(bumpy, 2)
        form = random_one_form(2, rng)
        weak = op.apply(form)
        pointwise = hodge(bumpy, exterior_d(form), op.grid, 2)
        diff = l2_norm(bumpy, weak - pointwise) / l2_norm(bumpy, form)
        assert diff <= 1e-3  # they differ only by spectral-tail terms


class TestCoexactProjection:
    def test_exact_forms_die(self, flat):
        phi = sin_mode("scalar", 1, (1, 0, 0), 0)
        out = coexact_project(flat, exterior_d(phi))
        assert np.abs(out.coeffs).max() <= 1e-12

    def test_coexact_forms_survive(self, flat):
        form = shear_one_form(1)
        out = coexact_project(flat, form)
        np.testing.assert_allclose(out.coeffs, form.coeffs, atol=1e-12)

    def test_strips_harmonic_part(self, flat):
        form = shear_one_form(1) + FourierField.constant("one_form", [1, 0, 0])
        out = coexact_project(flat, form)
        np.testing.assert_allclose(out.coeffs, shear_one_form(1).coeffs, atol=1e-12)

    def test_idempotent(self, bumpy, rng):
        op = assemble(bumpy, 2)
        once = op.coexact_project(random_one_form(2, rng))
        twice = op.coexact_project(once)
        np.testing.assert_allclose(twice.coeffs, once.coeffs, atol=1e-11)

    def test_output_weakly_divergence_free(self, bumpy, rng):
        op = assemble(bumpy, 2)
        out = op.coexact_project(random_one_form(2, rng))
        resid = op.coexact_residual_packed(op.basis.pack(out.coeffs))
        assert resid <= 1e-10 * op.norm(out)


class TestResidual:
    def test_exact_eigenform(self, flat):
        assert residual(flat, shear_one_form(1), 1.0) <= 1e-12

    def test_wrong_eigenvalue_is_order_one(self, flat):
        assert residual(flat, shear_one_form(1), 2.0) == pytest.approx(1.0, rel=1e-10)

    def test_three_term_beltrami(self, flat):
        assert residual(flat, abc_one_form(1, 1, 1), 1.0) <= 1e-12

    def test_zero_form_rejected(self, flat):
        with pytest.raises(ValueError):
            residual(flat, FourierField.zeros("one_form", 1), 1.0)


class TestEigenpairs:
    def test_flat_smallest_cluster(self, flat):
        pairs = eigenpairs(flat, 2, {"count": 12})
        vals = np.array([p.eigenvalue for p in pairs])
        np.testing.assert_allclose(np.abs(vals), 1.0, atol=1e-10)
        assert np.sum(vals > 0) == 6 and np.sum(vals < 0) == 6
        assert all(p.cluster_size == 6 for p in pairs)
        # positive cluster sorts first
        assert all(v > 0 for v in vals[:6])

    def test_flat_next_cluster_multiplicity(self, flat):
        pairs = eigenpairs(flat, 2, {"interval": [1.2, 1.6]})
        vals = [p.eigenvalue for p in pairs]
        assert len(vals) == 12
        np.testing.assert_allclose(vals, np.sqrt(2.0), atol=1e-10)

    def test_flat_table_at_truncation_three(self, flat):
        pairs = eigenpairs(flat, 3, {"count": 112})
        oracle = flat_eigenvalue_table(3, 5)
        got = {}
        for p in pairs:
            key = min(oracle, key=lambda lam: abs(lam - p.eigenvalue))
            assert abs(p.eigenvalue - key) <= 1e-8
            got[key] = got.get(key, 0) + 1
        assert got == oracle

    def test_conformal_spectrum_scaling(self, flat, conformal2):
        base = eigenpairs(flat, 2, {"count": 12})
        scaled = eigenpairs(conformal2, 2, {"count": 12})
        for p, q in zip(base, scaled):
            assert q.eigenvalue == pytest.approx(p.eigenvalue / 2.0, abs=1e-8)

    def test_pair_invariants(self, bumpy):
        op = assemble(bumpy, 2)
        pairs = eigenpairs(bumpy, 2, {"count": 8}, operator=op)
        for p in pairs:
            assert p.eigenvalue != 0.0
            assert p.residual <= 1e-8
            assert op.norm(p.form) == pytest.approx(1.0, abs=1e-10)
            assert p.coexact_residual <= 1e-8

    def test_spectrum_symmetric_under_sign_flip(self, flat):
        pairs = eigenpairs(flat, 2, {"count": 36})
        vals = sorted(p.eigenvalue for p in pairs)
        np.testing.assert_allclose(vals, sorted(-v for v in vals), atol=1e-10)

    def test_window_containing_zero_rejected(self, flat):
        with pytest.raises(ValueError, match="exclude"):
            eigenpairs(flat, 2, {"interval": [-1.0, 1.0]})

    def test_krylov_matches_dense(self, bumpy):
        dense = eigenpairs(bumpy, 2, {"interval": [0.8, 1.2]})
        krylov = eigenpairs(bumpy, 2, {"interval": [0.8, 1.2]}, method="krylov")
        assert len(dense) == len(krylov)
        for p, q in zip(dense, krylov):
            assert q.eigenvalue == pytest.approx(p.eigenvalue, abs=1e-8)

    def test_krylov_needs_interval(self, flat):
        with pytest.raises(EigensolverError, match="interval"):
            eigenpairs(flat, 2, {"count": 6}, method="krylov")


class TestGramMatrix:
    def test_indexed_assembly_matches_quadrature_operator(self, bumpy, rng):
        # the dense Gram must agree with the FFT-based quadrature applier
        op = assemble(bumpy, 2)
        G = op.gram_matrix
        for _ in range(3):
            v = rng.standard_normal(op.dim)
            direct = op.basis.pack(
                op.gram_apply_coeffs(op.basis.unpack_batch(v[None]))[0]
            )
            np.testing.assert_allclose(G @ v, direct, atol=1e-10 * op.dim)

    def test_matches_l2_inner(self, bumpy, rng):
        from curllab.fields import l2_inner

        op = assemble(bumpy, 2)
        a = random_one_form(2, rng)
        b = random_one_form(2, rng)
        va, vb = op.basis.pack(a.coeffs), op.basis.pack(b.coeffs)
        quad = l2_inner(bumpy, a, b, op.grid)
        assert float(va @ op.gram_matrix @ vb) == pytest.approx(quad, rel=1e-11)


class TestSelfAdjointness:
    def test_random_spd_metrics(self):
        for i in range(5):
            g = random_metric(2.0, 5e-2, 1000 + i)
            op = assemble(g, 2)
            assert op.self_adjointness_residual(n_trials=6, seed=i) <= 1e-8


class TestTracking:
    def test_constant_path(self):
        g = random_metric(2.0, 0.1, 314)
        pairs = eigenpairs(g, 2, {"count": 6})
        pair = pairs[0]
        lam0, gap0 = pair.eigenvalue, None
        track = track_eigenvalue(lambda s: g, pair, steps=4)
        for _, lam, gap in track:
            assert lam == pytest.approx(lam0, abs=1e-10)
            gap0 = gap0 or gap
            assert gap == pytest.approx(gap0, abs=1e-10)

    def test_conformal_path_scaling_law(self):
        # conformal rescaling divides the whole spectrum by the factor,
        # for any base metric; start from a simple eigenvalue
        g = random_metric(2.0, 0.1, 314)
        pair = eigenpairs(g, 2, {"count": 6})[0]
        lam0 = pair.eigenvalue

        def path(s):
            c2 = (1.0 + s) ** 2
            return MetricField([comp * c2 for comp in g.components])

        track = track_eigenvalue(path, pair, steps=5)
        assert track[-1][0] == pytest.approx(1.0)
        for s, lam, _ in track:
            assert lam == pytest.approx(lam0 / (1.0 + s), abs=1e-9)

    def test_degenerate_start_flags_ambiguity(self, flat):
        # lambda = 1 has multiplicity six at the flat point; tracking from
        # inside the cluster cannot pick a branch
        pair = eigenpairs(flat, 2, {"count": 1})[0]

        def path(s):
            return random_metric(2.0, 1e-2 * s, 42) if s > 0 else flat

        with pytest.raises(BranchAmbiguityError):
            track_eigenvalue(path, pair, steps=4, max_halvings=6)

    def test_cluster_split_tracking(self, flat):
        # start from the already-split metric at s0 and continue outward
        def path(s):
            return random_metric(2.0, 1e-2 * (0.2 + 0.8 * s), 42)

        start_pairs = eigenpairs(path(0.0), 2, {"count": 6})
        for pair in start_pairs[:2]:
            track = track_eigenvalue(path, pair, steps=5)
            sign = np.sign(pair.eigenvalue)
            for _, lam, _ in track:
                # branch keeps its sign and stays inside the split cluster
                assert np.sign(lam) == sign
                assert abs(abs(lam) - 1.0) <= 0.1
