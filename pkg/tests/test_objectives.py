import math
import sys

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from emcbo.objectives import (
    ExternalObjective,
    IcpGrid,
    Objective,
    builtin,
    check_growth,
    check_icp,
    check_local_lipschitz,
)


def test_builtin_minima():
    assert builtin("sphere", 2)([0.0, 0.0]) == 0.0
    assert builtin("rastrigin", 1)([0.0]) == 0.0
    assert builtin("ackley", 3)([0.0, 0.0, 0.0]) == pytest.approx(0.0, abs=1e-14)
    sh = builtin("shifted_sphere", 2, [1.0, -2.0])
    assert sh([1.0, -2.0]) == 0.0
    np.testing.assert_array_equal(sh.x_star, [1.0, -2.0])


def test_rastrigin_regression_value():
    with mpmath.workdps(40):
        oracle = 10 + mpmath.mpf(0.25) - 10 * mpmath.cos(2 * mpmath.pi * mpmath.mpf(0.5))
    assert float(oracle) == 20.25
    assert builtin("rastrigin", 1)([0.5]) == pytest.approx(20.25, abs=1e-12)


def test_ackley_matches_high_precision():
    x = [0.3, -1.7]
    with mpmath.workdps(40):
        a = [mpmath.mpf(v) for v in x]
        r = mpmath.sqrt(sum(v**2 for v in a) / 2)
        c = sum(mpmath.cos(2 * mpmath.pi * v) for v in a) / 2
        oracle = -20 * mpmath.exp(-0.2 * r) - mpmath.exp(c) + 20 + mpmath.e
    assert builtin("ackley", 2)(x) == pytest.approx(float(oracle), abs=1e-13)


def test_unknown_builtin():
    with pytest.raises(ValueError):
        builtin("rosenbrock", 2)
    with pytest.raises(ValueError):
        builtin("sphere", 0)


def test_declared_minimum_is_checked():
    with pytest.raises(ValueError):
        Objective(lambda x: np.sum(x**2, axis=1) + 1.0, 1, [0.0], 0.0, "bad")


@given(st.lists(st.floats(-50, 50), min_size=3, max_size=3))
def test_sphere_formula(x):
    assert builtin("sphere", 3)(x) == pytest.approx(0.5 * sum(v * v for v in x), rel=1e-12, abs=1e-300)


def test_lipschitz_sphere():
    res = check_local_lipschitz(builtin("sphere", 2), radius=10, samples=4000)
    assert res.passed
    assert res.fitted_L <= 1 + 1e-9


def test_lipschitz_constant():
    res = check_local_lipschitz(Objective(lambda x: np.full(len(x), 3.0), 2, None, None, "c"), 10, 1000)
    assert res.passed and res.fitted_L == 0.0


def test_lipschitz_exp_fails():
    obj = Objective(lambda x: np.exp(np.sum(x**2, axis=1)), 2, [0.0, 0.0], 1.0, "exp")
    assert not check_local_lipschitz(obj, 10, 2000).passed


def test_lipschitz_nonfinite_raises():
    obj = Objective(lambda x: np.where(x[:, 0] > 0, np.nan, 0.0), 1, None, None, "nan")
    with pytest.raises(ValueError):
        check_local_lipschitz(obj, 1.0, 100)


def test_growth_sphere_constants():
    res = check_growth(builtin("sphere", 2), 10, 4000)
    assert res.upper_ok and res.lower_ok and res.quadratic and res.passed
    assert res.c_u == pytest.approx(0.5, rel=0.05)
    assert res.c_l == pytest.approx(0.5, rel=0.05)


def test_growth_ackley_bounded():
    res = check_growth(builtin("ackley", 2), 10, 4000)
    assert res.upper_ok and res.bounded and res.passed


def test_growth_abs_fails():
    obj = Objective(lambda x: np.linalg.norm(x, axis=1), 2, [0.0, 0.0], 0.0, "abs")
    res = check_growth(obj, 10, 4000)
    assert not res.lower_ok and not res.bounded and not res.passed


def test_growth_needs_e_min():
    with pytest.raises(ValueError):
        check_growth(Objective(lambda x: x[:, 0] ** 2, 1, None, None, "no-min"), 1.0, 10)


def test_icp_sphere():
    res = check_icp(builtin("sphere", 2), "euclidean", 1.0)
    assert res.passed
    assert res.nu == 0.5
    assert res.eta == pytest.approx(1 / math.sqrt(2), rel=1e-3)


def test_icp_rastrigin_regression():
    res = check_icp(builtin("rastrigin", 1), "euclidean", 0.5)
    assert res.passed and res.nu == 0.5
    assert res.eta == pytest.approx(9.022076012041566, rel=1e-6)
    assert res.e_inf == pytest.approx(0.99496, rel=1e-4)


def test_icp_twin_minima_fails():
    def twin(x):
        a = np.sum((x - [1.0, 0.0]) ** 2, axis=1)
        b = np.sum((x + [1.0, 0.0]) ** 2, axis=1)
        return np.minimum(a, b)

    obj = Objective(twin, 2, [1.0, 0.0], 0.0, "twin")
    assert not check_icp(obj, "euclidean", 0.5).passed


def test_icp_max_norm_sphere():
    assert check_icp(builtin("sphere", 3), "max", 1.0).passed


def test_icp_needs_minimizer():
    with pytest.raises(ValueError):
        check_icp(Objective(lambda x: x[:, 0] ** 2, 1, None, None, "anon"), "euclidean", 1.0)


@pytest.mark.parametrize("name", ["sphere", "rastrigin", "ackley"])
@pytest.mark.parametrize("dim", [1, 2, 4])
def test_builtins_pass_all_checks(name, dim):
    obj = builtin(name, dim)
    assert check_local_lipschitz(obj, 10, 2000).passed
    assert check_growth(obj, 10, 2000).passed
    assert check_icp(obj, "euclidean", 0.5 if name == "rastrigin" else 1.0).passed


def test_checkers_deterministic():
    obj = builtin("rastrigin", 2)
    assert check_local_lipschitz(obj, 5, 500, seed=3) == check_local_lipschitz(obj, 5, 500, seed=3)
    assert check_growth(obj, 5, 500, seed=3) == check_growth(obj, 5, 500, seed=3)


def test_external_objective(tmp_path):
    script = tmp_path / "obj.py"
    script.write_text(
        "import sys\n"
        "for line in sys.stdin:\n"
        "    x = [float(v) for v in line.split()]\n"
        "    print(repr(0.5 * sum(v * v for v in x)), flush=True)\n"
    )
    ext = ExternalObjective([sys.executable, str(script)], 2)
    try:
        x = np.array([[1.0, 2.0], [0.1, -0.3]])
        np.testing.assert_array_equal(ext(x), builtin("sphere", 2)(x))
    finally:
        ext.close()
