import numpy as np
import pytest

from ph_shape.exceptions import DomainError
from ph_shape.hermite import HermiteTable


def sin_table(quintic):
    x = np.linspace(0.0, 1.0, 11)
    y = np.sin(3 * x)
    return HermiteTable(x, y, 3 * np.cos(3 * x), -9 * y if quintic else None)


@pytest.mark.parametrize("quintic", [False, True])
def test_reproduces_nodes_exactly(quintic):
    t = sin_table(quintic)
    for xk, yk, dk in zip(t.x, t.y, t.dy):
        v, d = t(xk)
        assert abs(v - yk) <= 1e-15 and abs(d - dk) <= 1e-13


def test_error_orders():
    xs = np.linspace(0.0, 1.0, 997)
    err = {q: max(abs(sin_table(q)(v)[0] - np.sin(3 * v)) for v in xs) for q in (False, True)}
    # h = 0.1: cubic error ~ h^4 f''''/384, quintic ~ h^6 f^(6)/46080
    assert err[False] < 3e-5
    assert err[True] < 3e-8


def test_exact_for_polynomials_of_matching_degree():
    x = np.linspace(-1.0, 2.0, 4)
    c = lambda s: 2 * s ** 3 - s + 1
    dc = lambda s: 6 * s ** 2 - 1
    t = HermiteTable(x, c(x), dc(x))
    q = lambda s: s ** 5 - 3 * s ** 2
    t5 = HermiteTable(x, q(x), 5 * x ** 4 - 6 * x, 20 * x ** 3 - 6)
    for v in np.linspace(-1.0, 2.0, 37):
        assert abs(t(v)[0] - c(v)) < 1e-12 and abs(t(v)[1] - dc(v)) < 1e-11
        assert abs(t5(v)[0] - q(v)) < 1e-11 and abs(t5(v)[1] - (5 * v ** 4 - 6 * v)) < 1e-10


def test_matrix_valued_and_value_shortcut():
    x = np.linspace(0, 1, 5)
    y = np.stack([np.outer([1, 2], [3, 4]) * s for s in x])
    t = HermiteTable(x, y, np.stack([np.outer([1, 2], [3, 4])] * 5))
    v, d = t(0.37)
    assert v.shape == (2, 2) and np.allclose(v, 0.37 * np.outer([1, 2], [3, 4]))
    assert np.allclose(t.value(0.37), v)


def test_out_of_range_raises():
    t = sin_table(False)
    assert t.contains(1.0) and not t.contains(1.0 + 1e-12)
    with pytest.raises(DomainError):
        t(1.01)


def test_validation():
    with pytest.raises(ValueError):
        HermiteTable([0, 0], [0, 1], [0, 0])
    with pytest.raises(ValueError):
        HermiteTable([0, 1], [0, 1], [0])
