from __future__ import annotations

import numpy as np
import pytest

from src.utils.validators import (
    as_matrix,
    as_vector,
    is_non_negative_number,
    is_positive_int,
    is_positive_number,
    relative_error,
)


def test_is_positive_int_and_non_negative_number():
    assert is_positive_int(5) is True
    assert is_positive_int("3") is True
    assert is_positive_int(0) is False
    assert is_positive_int("bad") is False

    assert is_non_negative_number(0) is True
    assert is_non_negative_number("2.5") is True
    assert is_non_negative_number(-1) is False
    assert is_non_negative_number("bad") is False


@pytest.mark.parametrize(
    "value,expected",
    [
        (1e-10, True),
        ("4", True),
        (0, False),
        (-2.0, False),
        (float("inf"), False),
        (float("nan"), False),
        ("bad", False),
    ],
)
def test_is_positive_number(value, expected: bool):
    assert is_positive_number(value) is expected


def test_as_vector_checks_shape_and_finiteness():
    v = as_vector([1, 2, 3], 3, name="z")
    assert v.dtype == float
    with pytest.raises(ValueError, match="z"):
        as_vector([1, 2], 3, name="z")
    with pytest.raises(ValueError):
        as_vector([[1.0, 2.0]])
    with pytest.raises(ValueError, match="no finitos"):
        as_vector([1.0, np.nan])


def test_as_matrix_promotes_vectors_to_columns():
    A = as_matrix([1.0, 2.0, 3.0], rows=3, cols=1)
    assert A.shape == (3, 1)
    with pytest.raises(ValueError):
        as_matrix(np.zeros((2, 2)), cols=3)


def test_relative_error_handles_zero_reference():
    assert relative_error([1.0, 1.0], [1.0, 1.0]) == 0.0
    assert relative_error([2.0], [1.0]) == pytest.approx(1.0)
    assert np.isfinite(relative_error([1e-300], [0.0]))


@pytest.mark.parametrize(
    "predicate,value,expected",
    [
        (is_positive_number, np.float64(2.0), True),
        (is_positive_number, np.float64(np.inf), False),
        (is_positive_number, np.float32(np.nan), False),
        (is_positive_int, np.int64(3), True),
        (is_non_negative_number, np.float32(0.0), True),
        (is_non_negative_number, np.float64(-1.0), False),
    ],
)
def test_predicates_return_plain_bool_for_numpy_scalars(predicate, value, expected: bool):
    result = predicate(value)
    assert type(result) is bool
    assert result is expected
