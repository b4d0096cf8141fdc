"""Unit tests for the scalar BSDE with Gaussian terminal law."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

from mfcontrol.core import GaussianLaw
from mfcontrol.errors import InfeasibleVarianceError, InvalidInputError
from mfcontrol.wbsde import (
    Wbsde1DParams,
    ZSegment,
    ZSignal,
    backward_law_from_z,
    backward_reachable_set_1d,
    exp2_catalog,
    exp2_params,
    f_factor,
    forward_moments_check,
    soundness_search,
    z_alpha_signal,
)


@pytest.fixture
def unit_params() -> Wbsde1DParams:
    """a1 = a2 = 0, b = 1, T = 1, mu = N(0, 1)."""
    return Wbsde1DParams(a1=0.0, a2=0.0, b=1.0, T=1.0, mu=GaussianLaw.scalar(0.0, 1.0))


@pytest.fixture
def drifting_params() -> Wbsde1DParams:
    return Wbsde1DParams(a1=0.4, a2=-0.3, b=1.2, T=2.0, mu=GaussianLaw.scalar(0.5, 2.0))


class TestFFactor:
    """Test suite for f_factor."""

    def test_zero_rate(self) -> None:
        """f = s when a2 = 0."""
        assert f_factor(0.0, 0.7) == 0.7

    def test_closed_form(self) -> None:
        """(1 - e^{-2}) / 2 at a2 = s = 1."""
        assert f_factor(1.0, 1.0) == pytest.approx((1.0 - np.exp(-2.0)) / 2.0, rel=1e-14)

    def test_series_branch_is_continuous(self) -> None:
        """Small rates agree with the exact expression."""
        assert f_factor(1e-7, 1.0) == pytest.approx(1.0 - 1e-7, rel=1e-12)
        assert f_factor(2e-6, 1.0) == pytest.approx(
            -np.expm1(-4e-6) / 4e-6, rel=1e-12
        )

    def test_negative_time(self) -> None:
        """s must be nonnegative."""
        with pytest.raises(InvalidInputError):
            f_factor(0.0, -1.0)


class TestZSignal:
    """Test suite for ZSegment and ZSignal."""

    def test_segments_must_be_contiguous(self) -> None:
        """Gaps between segments are rejected."""
        with pytest.raises(ValidationError, match="contiguous"):
            ZSignal(
                segments=[
                    ZSegment(t_start=0.0, t_end=0.4, amplitude=1.0),
                    ZSegment(t_start=0.5, t_end=1.0, amplitude=1.0),
                ]
            )

    def test_square_integral_of_constant_pieces(self) -> None:
        """Unweighted integral of z^2 for levels 1 and 2."""
        z = ZSignal.piecewise_constant([1.0, 2.0], 0.0, 1.0)

        assert z.integral(0.0, 2, 0.0, 1.0) == pytest.approx(2.5)
        assert z.integral(0.0, 1, 0.25, 1.0) == pytest.approx(1.25)
        assert z.evaluate(0.5) == 2.0

    def test_weighted_exponential_integral(self) -> None:
        """Integral of e^{w (r-s)} (c e^{k (r-s)})^2 in closed form."""
        z = ZSignal(
            segments=[ZSegment(t_start=0.0, t_end=1.0, amplitude=2.0, rate=0.5, origin=0.0)]
        )
        expected = 4.0 * np.expm1(0.7 + 1.0) / (0.7 + 1.0)

        assert z.integral(0.7, 2, 0.0, 1.0) == pytest.approx(expected, rel=1e-13)

    def test_integral_outside_domain(self) -> None:
        """Integrals beyond the signal's support are invalid."""
        with pytest.raises(InvalidInputError):
            ZSignal.zero(0.5, 1.0).integral(0.0, 2, 0.0, 1.0)


class TestReachableSet:
    """Test suite for backward_reachable_set_1d."""

    def test_unit_case_bounds(self, unit_params: Wbsde1DParams) -> None:
        """At s = 0 and sigma = 0 the mean ranges over [-1, 1]."""
        reach = backward_reachable_set_1d(unit_params, 0.0)

        assert reach.sigma_max == 1.0
        assert reach.y_bounds(0.0) == (-1.0, 1.0)
        assert reach.y_bounds(1.0) == (0.0, 0.0)
        assert reach.boundary_rows([0.0, 1.0]) == [[0.0, -1.0, 1.0], [1.0, 0.0, 0.0]]

    def test_variance_above_maximum(self, unit_params: Wbsde1DParams) -> None:
        """sigma > sigma_max is infeasible."""
        reach = backward_reachable_set_1d(unit_params, 0.5)

        with pytest.raises(InfeasibleVarianceError):
            reach.y_bounds(1.5)

    def test_contains(self, unit_params: Wbsde1DParams) -> None:
        """Boundary points are inside, points beyond them are not."""
        reach = backward_reachable_set_1d(unit_params, 0.0)

        assert reach.contains(1.0, 0.0)
        assert reach.contains(0.0, 1.0)
        assert not reach.contains(1.01, 0.0)
        assert not reach.contains(0.0, 1.01)

    @pytest.mark.parametrize("s", [-0.1, 1.0, 2.0])
    def test_query_time_must_precede_horizon(
        self, unit_params: Wbsde1DParams, s: float
    ) -> None:
        """s has to lie in [0, T)."""
        with pytest.raises(InvalidInputError):
            backward_reachable_set_1d(unit_params, s)

    def test_terminal_law_must_be_scalar(self) -> None:
        """mu is one-dimensional."""
        with pytest.raises(ValidationError):
            Wbsde1DParams(a1=0.0, a2=0.0, b=1.0, T=1.0, mu=GaussianLaw.point([0.0, 0.0]))


class TestZAlpha:
    """Test suite for the boundary-attaining z_alpha family."""

    def test_endpoints_attain_the_boundary(self, drifting_params: Wbsde1DParams) -> None:
        """alpha = 0 lands on y_min and alpha = 1 on y_max for b > 0."""
        reach = backward_reachable_set_1d(drifting_params, 0.5)
        sigma = 0.5 * reach.sigma_max

        y_low, sigma_low = backward_law_from_z(
            drifting_params, z_alpha_signal(drifting_params, 0.5, sigma, 0.0), 0.5
        )
        y_high, sigma_high = backward_law_from_z(
            drifting_params, z_alpha_signal(drifting_params, 0.5, sigma, 1.0), 0.5
        )

        assert y_low == pytest.approx(reach.y_min(sigma), abs=1e-10)
        assert y_high == pytest.approx(reach.y_max(sigma), abs=1e-10)
        assert sigma_low == pytest.approx(sigma, abs=1e-10)
        assert sigma_high == pytest.approx(sigma, abs=1e-10)

    def test_negative_b_mirrors_the_endpoints(self, drifting_params: Wbsde1DParams) -> None:
        """With b < 0 alpha = 0 lands on y_max."""
        params = drifting_params.model_copy(update={"b": -1.2})
        reach = backward_reachable_set_1d(params, 0.0)

        y, _ = backward_law_from_z(params, z_alpha_signal(params, 0.0, 0.0, 0.0), 0.0)

        assert y == pytest.approx(reach.y_max(0.0), abs=1e-10)

    def test_alpha_out_of_range(self, unit_params: Wbsde1DParams) -> None:
        """alpha must lie in [0, 1]."""
        with pytest.raises(InvalidInputError):
            z_alpha_signal(unit_params, 0.0, 0.5, 1.5)

    @settings(max_examples=60, deadline=None)
    @given(
        alpha=st.floats(min_value=0.0, max_value=1.0),
        fraction=st.floats(min_value=0.0, max_value=1.0),
        s=st.floats(min_value=0.0, max_value=1.9),
    )
    def test_members_stay_reachable_and_round_trip(
        self, alpha: float, fraction: float, s: float
    ) -> None:
        """Every z_alpha law is reachable and propagates back to mu."""
        params = Wbsde1DParams(
            a1=0.4, a2=-0.3, b=1.2, T=2.0, mu=GaussianLaw.scalar(0.5, 2.0)
        )
        reach = backward_reachable_set_1d(params, s)
        sigma = fraction * reach.sigma_max
        z = z_alpha_signal(params, s, sigma, alpha)

        y, sigma_s = backward_law_from_z(params, z, s)
        mean_T, variance_T = forward_moments_check(params, y, sigma_s, z, s)

        assert reach.contains(y, sigma_s, tol=1e-9)
        assert mean_T == pytest.approx(0.5, abs=1e-9)
        assert variance_T == pytest.approx(2.0, abs=1e-9)


class TestExp2Catalog:
    """Test suite for the three constructions reaching N(0, 1)."""

    def test_switching_sign(self) -> None:
        """z = +1 then -1 after t0 reaches unit variance."""
        law, z = exp2_catalog(1, t0=0.3)

        mean, variance = forward_moments_check(
            exp2_params(), float(law.mean[0]), law.variance, z, 0.0
        )

        assert mean == 0.0
        assert variance == pytest.approx(1.0, abs=1e-12)
        assert z.evaluate(0.2) == 1.0
        assert z.evaluate(0.5) == -1.0

    def test_intermediate_law(self) -> None:
        """The two-level z passes through N(0, 0.25) at s0 = 0.5."""
        law, z = exp2_catalog(2, sigma=0.25, s0=0.5)
        p = exp2_params()

        _, at_s0 = forward_moments_check(p, 0.0, law.variance, z, 0.0, until=0.5)
        _, at_T = forward_moments_check(p, 0.0, law.variance, z, 0.0)

        assert at_s0 == pytest.approx(0.25, abs=1e-12)
        assert at_T == pytest.approx(1.0, abs=1e-12)

    def test_random_start(self) -> None:
        """N(0, 0.5) with constant z reaches N(0, 1)."""
        law, z = exp2_catalog(3, sigma=0.5)

        _, variance = forward_moments_check(exp2_params(), 0.0, law.variance, z, 0.0)

        assert law.variance == 0.5
        assert variance == pytest.approx(1.0, abs=1e-12)

    def test_backward_run_recovers_point_start(self) -> None:
        """Running variant 1 backward from N(0, 1) gives a Dirac at 0."""
        _, z = exp2_catalog(1, t0=0.3)

        y, sigma = backward_law_from_z(exp2_params(), z, 0.0)

        assert y == 0.0
        assert sigma == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"variant": 1},
            {"variant": 2, "sigma": 0.5, "s0": 1.0},
            {"variant": 3, "sigma": 1.5},
            {"variant": 4, "sigma": 0.5},
        ],
    )
    def test_invalid_requests(self, kwargs: dict[str, float]) -> None:
        """Missing or out-of-range parameters are rejected."""
        with pytest.raises(InvalidInputError):
            exp2_catalog(**kwargs)  # type: ignore[arg-type]


class TestSoundness:
    """Test suite for soundness_search."""

    def test_no_random_z_escapes(self, drifting_params: Wbsde1DParams) -> None:
        """Random piecewise-constant z never leave the reachable set."""
        assert soundness_search(drifting_params, 0.5, n_samples=200, seed=3) == 0

    def test_forward_check_rejects_backward_time(self, unit_params: Wbsde1DParams) -> None:
        """Propagation only runs forward."""
        with pytest.raises(InvalidInputError):
            forward_moments_check(unit_params, 0.0, 0.0, ZSignal.zero(0.0, 1.0), 0.5, until=0.2)
