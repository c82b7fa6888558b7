import numpy as np
import pytest

from app.core.exceptions import FlatSignalError
from app.utils.statistics import (
    coefficient_of_variation,
    cosine_similarity,
    pearson_correlation,
    resample_to_length,
    safe_ratio,
)


def test_pearson_is_scale_and_shift_invariant():
    x = np.sin(np.linspace(0, 6, 200))
    assert pearson_correlation(x, 3 * x + 2) == pytest.approx(1.0)
    assert pearson_correlation(x, -x) == pytest.approx(-1.0)


def test_pearson_flat_input():
    with pytest.raises(FlatSignalError):
        pearson_correlation(np.ones(10), np.arange(10))


def test_pearson_length_mismatch():
    with pytest.raises(ValueError):
        pearson_correlation(np.arange(5), np.arange(6))


def test_cosine_orthogonal_and_zero():
    assert cosine_similarity([1.0, 0.0], [0.0, 2.0]) == pytest.approx(0.0)
    with pytest.raises(FlatSignalError):
        cosine_similarity([0.0, 0.0], [1.0, 1.0])


def test_coefficient_of_variation():
    assert coefficient_of_variation([1.0, 1.0, 1.0]) == 0.0
    assert coefficient_of_variation([0.0, 0.0]) == float("inf")
    assert coefficient_of_variation([1.0, 3.0]) == pytest.approx(0.5)


def test_safe_ratio_floors_denominator():
    assert safe_ratio(1.0, 0.0) == pytest.approx(1e6)
    assert safe_ratio(3.0, 2.0) == 1.5


def test_resample_to_length_keeps_endpoints():
    out = resample_to_length([0.0, 1.0, 4.0], 5)
    assert out.shape == (5,)
    assert out[0] == 0.0 and out[-1] == 4.0
    np.testing.assert_array_equal(resample_to_length([2.0], 3), [2.0, 2.0, 2.0])
