"""Design rows, data validation, the flat layout, and L L' covariance."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from jointvar.errors import InputError
from jointvar.model import (
    AssociationFlags,
    BaselineFamily,
    BaselineSpec,
    Dataset,
    ModelSpec,
    ParameterVector,
    SubjectData,
    build_design,
    covariance_from_cholesky,
    design_matrix,
    design_slope_matrix,
    flatten,
    get_layout,
    unflatten,
)
from support import subject, two_event_spec, two_event_params


# --------------------------------------------------------------------------
# Oracles
# --------------------------------------------------------------------------

def cov_by_triple_loop(L):
    """Sigma_ij = sum_m L_im L_jm written out elementwise, no linalg."""
    d = L.shape[0]
    out = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            for m in range(d):
                out[i, j] += L[i, m] * L[j, m]
    return out


def spec_with_treatment():
    weib = BaselineSpec(BaselineFamily.WEIBULL)
    return ModelSpec(
        fixed_marker_covariates=("intercept", "time", "trt"),
        random_marker_terms=("intercept", "time"),
        fixed_variance_covariates=("intercept",),
        random_variance_terms=(),
        survival_covariates_per_event=(("trt",), ("trt",)),
        association_flags_per_event=(
            AssociationFlags(True, False, False),
            AssociationFlags(True, False, False),
        ),
        baseline_family_per_event=(weib, weib),
    )


# --------------------------------------------------------------------------
# Design rows
# --------------------------------------------------------------------------

def test_design_row_with_treatment_covariate():
    spec = spec_with_treatment()
    sub = subject(covariates={"trt": 1.0}, times=(2.0,), values=(0.0,))
    X = design_matrix(spec, sub, [2.0], which="X")
    assert X.shape == (1, 3)
    np.testing.assert_array_equal(X[0], [1.0, 2.0, 1.0])


def test_intercept_only_random_design_at_origin():
    weib = BaselineSpec(BaselineFamily.WEIBULL)
    spec = ModelSpec(
        fixed_marker_covariates=("intercept",),
        random_marker_terms=("intercept",),
        fixed_variance_covariates=("intercept",),
        random_variance_terms=(),
        survival_covariates_per_event=((),),
        association_flags_per_event=(AssociationFlags(True, False, False),),
        baseline_family_per_event=(weib,),
        n_events=1,
    )
    Z = design_matrix(spec, subject(), [0.0], which="Z")
    np.testing.assert_array_equal(Z, [[1.0]])


def test_reference_spec_rows_agree_across_blocks():
    """With intercept+time everywhere, all four rows equal (1, t)."""
    spec = two_event_spec()
    X, Z, O, M, W = build_design(spec, subject(), 1.5)
    for row in (X, Z, O, M):
        np.testing.assert_array_equal(row, [1.0, 1.5])
    assert all(w.size == 0 for w in W)


def test_slope_rows_differentiate_time_terms():
    spec = spec_with_treatment()
    sub = subject(covariates={"trt": 3.0})
    dX = design_slope_matrix(spec, sub, [0.25, 4.0], which="X")
    # d/dt of (1, t, trt) is (0, 1, 0) at any t
    np.testing.assert_array_equal(dX, [[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]])


def test_quadratic_time_slope():
    weib = BaselineSpec(BaselineFamily.WEIBULL)
    spec = ModelSpec(
        fixed_marker_covariates=("intercept", "time", "time2"),
        random_marker_terms=("intercept",),
        fixed_variance_covariates=("intercept",),
        random_variance_terms=(),
        survival_covariates_per_event=((),),
        association_flags_per_event=(AssociationFlags(False, True, False),),
        baseline_family_per_event=(weib,),
        n_events=1,
    )
    dX = design_slope_matrix(spec, subject(), [1.5], which="X")
    np.testing.assert_array_equal(dX, [[0.0, 1.0, 3.0]])


def test_unknown_covariate_names_subject_and_column():
    spec = spec_with_treatment()
    sub = subject(id="p17")  # no trt in the covariate map
    with pytest.raises(InputError, match="p17.*trt"):
        design_matrix(spec, sub, [0.0], which="X")


# --------------------------------------------------------------------------
# Spec and data validation
# --------------------------------------------------------------------------

def test_random_terms_must_nest_in_fixed():
    weib = BaselineSpec(BaselineFamily.WEIBULL)
    with pytest.raises(InputError, match="subset"):
        ModelSpec(
            fixed_marker_covariates=("intercept",),
            random_marker_terms=("intercept", "time"),
            fixed_variance_covariates=("intercept",),
            random_variance_terms=(),
            survival_covariates_per_event=((),),
            association_flags_per_event=(AssociationFlags(),),
            baseline_family_per_event=(weib,),
            n_events=1,
        )


def test_times_must_increase():
    with pytest.raises(InputError, match="strictly increasing"):
        subject(times=(0.0, 1.0, 1.0), values=(1.0, 2.0, 3.0))


def test_measurement_after_event_rejected():
    with pytest.raises(InputError, match="after the event"):
        subject(times=(0.0, 3.0), values=(1.0, 2.0), event_time=2.5)


def test_entry_after_event_rejected():
    with pytest.raises(InputError, match="entry"):
        subject(times=(0.0,), values=(1.0,), event_time=1.0, entry_time=1.5)


def test_event_indicator_domain():
    with pytest.raises(InputError, match="0, 1 or 2"):
        subject(event_indicator=3)


def test_duplicate_ids_rejected():
    a = subject(id="dup")
    with pytest.raises(InputError, match="dup"):
        Dataset((a, subject(id="dup")))


# --------------------------------------------------------------------------
# Flat parameter layout
# --------------------------------------------------------------------------

def test_flat_length_two_event_reference():
    # 2 beta + 2 mu + 10 lower-triangular entries of a 4x4 factor
    # + per event: 0 gamma + 3 alpha + 2 Weibull = 5
    expected = 2 + 2 + (4 * 5) // 2 + 5 + 5
    assert expected == 24
    assert get_layout(two_event_spec()).size == 24


def test_flat_length_masked_factor():
    # independence mask drops the 2x2 cross block of L
    lay = get_layout(two_event_spec(masked=True))
    assert lay.size == 24 - 4
    assert not any(
        name.startswith("chol[2,0") or name.startswith("chol[2,1")
        or name.startswith("chol[3,0") or name.startswith("chol[3,1")
        for name in lay.names
    )


def test_alpha_segment_absent_without_flags():
    weib = BaselineSpec(BaselineFamily.WEIBULL)
    spec = ModelSpec(
        fixed_marker_covariates=("intercept",),
        random_marker_terms=(),
        fixed_variance_covariates=("intercept",),
        random_variance_terms=(),
        survival_covariates_per_event=((),),
        association_flags_per_event=(AssociationFlags(),),
        baseline_family_per_event=(weib,),
        n_events=1,
    )
    lay = get_layout(spec)
    assert lay.alpha_slices[0].stop == lay.alpha_slices[0].start
    assert not any("alpha" in name for name in lay.names)


def test_layout_names_cover_vector():
    lay = get_layout(two_event_spec())
    assert len(lay.names) == lay.size
    assert lay.names[0] == "beta[intercept]"
    assert "baseline2[sqrt_kappa]" in lay.names


def test_round_trip_reference_params():
    spec = two_event_spec()
    params = two_event_params(spec)
    again = unflatten(flatten(params, spec), spec)
    assert again == params


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=24, max_size=24))
def test_round_trip_random_vectors(vals):
    spec = two_event_spec()
    vec = np.asarray(vals)
    np.testing.assert_array_equal(flatten(unflatten(vec, spec), spec), vec)


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=20, max_size=20))
def test_round_trip_masked_vectors(vals):
    spec = two_event_spec(masked=True)
    vec = np.asarray(vals)
    params = unflatten(vec, spec)
    # masked cross block stays structurally zero
    np.testing.assert_array_equal(params.chol_lower[2:, :2], 0.0)
    np.testing.assert_array_equal(flatten(params, spec), vec)


def test_unflatten_rejects_wrong_length():
    spec = two_event_spec()
    with pytest.raises(Exception):
        unflatten(np.zeros(23), spec)


# --------------------------------------------------------------------------
# Covariance from the Cholesky factor
# --------------------------------------------------------------------------

def test_cov_identity():
    np.testing.assert_array_equal(covariance_from_cholesky(np.eye(4)), np.eye(4))


def test_cov_diagonal_factor_squares():
    sds = np.sqrt([207.36, 9.224, 0.0001, 0.0157])
    cov = covariance_from_cholesky(np.diag(sds))
    np.testing.assert_allclose(
        np.diag(cov), [207.36, 9.224, 0.0001, 0.0157], rtol=1e-12
    )
    assert np.all(cov[~np.eye(4, dtype=bool)] == 0.0)


def test_cov_matches_triple_loop():
    rng = np.random.default_rng(5)
    L = np.tril(rng.normal(size=(4, 4)))
    np.testing.assert_allclose(
        covariance_from_cholesky(L), cov_by_triple_loop(L), rtol=0, atol=1e-13
    )


def test_cov_output_is_symmetric():
    rng = np.random.default_rng(6)
    L = np.tril(rng.normal(size=(5, 5)))
    cov = covariance_from_cholesky(L)
    np.testing.assert_array_equal(cov, cov.T)
