from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equivmd.errors import DimensionMismatchError, NotSpdError
from equivmd.linalg import bilinear_form_inv, cholesky_spd, quadratic_form_inv

from conftest import random_spd

SIGMA1 = [[120, 39, -9], [39, 146, 111], [-9, 111, 113]]
SIGMA2 = [[32, 52, 38, 26], [52, 87, 66, 44], [38, 66, 65, 35], [26, 44, 35, 30]]


def exact_quadratic_form(m, v):
    """v' M^{-1} v by Gauss-Jordan elimination in rational arithmetic."""
    p = len(m)
    a = [[Fraction(m[i][j]) for j in range(p)] + [Fraction(v[i])] for i in range(p)]
    for c in range(p):
        piv = next(r for r in range(c, p) if a[r][c] != 0)
        a[c], a[piv] = a[piv], a[c]
        for r in range(p):
            if r != c and a[r][c] != 0:
                f = a[r][c] / a[c][c]
                a[r] = [x - f * y for x, y in zip(a[r], a[c])]
    sol = [a[i][p] / a[i][i] for i in range(p)]
    return sum(Fraction(v[i]) * sol[i] for i in range(p))


class TestCholesky:
    def test_identity(self):
        f = cholesky_spd(np.eye(3))
        np.testing.assert_array_equal(f.lower, np.eye(3))

    def test_known_factor(self):
        f = cholesky_spd([[4.0, 2.0], [2.0, 3.0]])
        np.testing.assert_allclose(f.lower, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], rtol=1e-15)

    def test_rejects_indefinite(self):
        with pytest.raises(NotSpdError):
            cholesky_spd([[1.0, 2.0], [2.0, 1.0]])

    def test_rejects_singular(self):
        with pytest.raises(NotSpdError):
            cholesky_spd([[1.0, 1.0], [1.0, 1.0]])

    def test_rejects_asymmetric(self):
        with pytest.raises(NotSpdError):
            cholesky_spd([[2.0, 1.0], [0.0, 2.0]])

    def test_rejects_non_square(self):
        with pytest.raises(DimensionMismatchError):
            cholesky_spd(np.ones((2, 3)))

    def test_scale_relative_tolerance(self):
        # tiny but well-conditioned matrices are fine
        f = cholesky_spd(1e-20 * np.eye(3))
        assert f.dim == 3

    def test_paper_covariances_are_spd(self):
        for s in (SIGMA1, SIGMA2):
            f = cholesky_spd(s)
            np.testing.assert_allclose(f.reconstruct(), s, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(p=st.integers(2, 6), seed=st.integers(0, 2**32 - 1), logc=st.floats(0, 6))
    def test_reconstruction(self, p, seed, logc):
        m = random_spd(np.random.default_rng(seed), p, cond=10 ** logc * 0.999)
        f = cholesky_spd(m)
        assert np.max(np.abs(f.reconstruct() - m)) <= 1e-10 * np.max(np.abs(m))


class TestQuadraticForms:
    def test_examples(self):
        eye = cholesky_spd(np.eye(2))
        assert bilinear_form_inv(eye, [1, 0], [0, 1]) == 0.0
        assert bilinear_form_inv(eye, [1, 1], [1, 1]) == 2.0
        assert bilinear_form_inv(cholesky_spd(np.diag([2.0, 4.0])), [2, 0], [2, 4]) == pytest.approx(2.0)
        assert quadratic_form_inv(cholesky_spd(np.diag([2.0, 4.0])), [2, 2]) == pytest.approx(3.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            quadratic_form_inv(cholesky_spd(np.eye(3)), [1.0, 2.0])

    @pytest.mark.parametrize(
        "sigma, v, exact",
        [
            (SIGMA1, (10, 10, 10), Fraction(678700, 239619)),
            (SIGMA1, (8, 8, 8), Fraction(434368, 239619)),
            (SIGMA2, (10, 10, 10, 10), Fraction(54875, 1909)),
            (SIGMA2, (8, 8, 8, 8), Fraction(35120, 1909)),
        ],
    )
    def test_paper_margins_against_rational_oracle(self, sigma, v, exact):
        # frozen output of exact_quadratic_form
        assert exact_quadratic_form(sigma, v) == exact
        assert quadratic_form_inv(cholesky_spd(sigma), v) == pytest.approx(float(exact), rel=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(p=st.integers(2, 6), seed=st.integers(0, 2**32 - 1))
    def test_matches_explicit_inverse(self, p, seed):
        r = np.random.default_rng(seed)
        m = random_spd(r, p, cond=1e3)
        v = r.normal(size=p)
        q = quadratic_form_inv(cholesky_spd(m), v)
        assert q > 0
        assert q == pytest.approx(v @ np.linalg.inv(m) @ v, rel=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(p=st.integers(2, 6), seed=st.integers(0, 2**32 - 1))
    def test_affine_consistency(self, p, seed):
        r = np.random.default_rng(seed)
        m = random_spd(r, p, cond=100.0)
        a = r.normal(size=(p, p)) + 3 * np.eye(p)
        v = r.normal(size=p)
        lhs = quadratic_form_inv(cholesky_spd(a @ m @ a.T), a @ v)
        assert lhs == pytest.approx(quadratic_form_inv(cholesky_spd(m), v), rel=1e-8)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_bilinear_symmetric(self, seed):
        r = np.random.default_rng(seed)
        f = cholesky_spd(random_spd(r, 4))
        u, v = r.normal(size=(2, 4))
        assert bilinear_form_inv(f, u, v) == pytest.approx(bilinear_form_inv(f, v, u), rel=1e-12)
