import math

import numpy as np
import pytest
import sympy as sp

from etlab.grid import build_grid, grad_edge
from etlab.scheme import SchemeParams, make_initial_state
from etlab.experiments import (
    ConvergenceTable,
    SweepSpec,
    default_manufactured,
    default_run_matrix,
    fit_loglog_slope,
    initial_condition,
    manufactured_from_expressions,
    regularization_study,
    run_sweep,
)

GRID = build_grid(32, 1.0)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", ["equilibrium", "gauss-bump", "temp-step"])
def test_presets_positive(name):
    rho0, theta0 = initial_condition(name, GRID)
    assert np.all(rho0 > 0.0)
    assert np.all(theta0 > 0.0)


def test_preset_equilibrium_is_unit():
    rho0, theta0 = initial_condition("equilibrium", GRID)
    assert np.all(rho0 == 1.0) and np.all(theta0 == 1.0)


def test_preset_gauss_bump_shape():
    rho0, theta0 = initial_condition("gauss-bump", GRID)
    assert rho0.max() == pytest.approx(1.2, abs=0.02)  # cell centers miss the peak
    assert rho0.min() == pytest.approx(0.2, abs=0.01)
    assert np.all(theta0 == 1.0)


def test_preset_temp_step_range():
    _, theta0 = initial_condition("temp-step", GRID)
    assert 0.49 < theta0.min() < 0.52
    assert 0.98 < theta0.max() < 1.01


def test_presets_no_flux_compatible():
    # boundary gradients negligible relative to the interior for every preset
    for name in ("gauss-bump", "temp-step"):
        rho0, theta0 = initial_condition(name, GRID)
        for f in (rho0, theta0):
            g = np.abs(grad_edge(GRID, f))
            if g.max() > 0.0:
                assert g[0] < 1e-3 * g.max() or g[0] < 1e-10
                assert g[-1] < 1e-3 * g.max() or g[-1] < 1e-10


def test_unknown_preset_rejected():
    with pytest.raises(ValueError):
        initial_condition("vortex", GRID)


# ---------------------------------------------------------------------------
# convergence tables
# ---------------------------------------------------------------------------


def test_table_orders_match_log2_on_dyadic_sweep():
    table = ConvergenceTable.from_errors([0.2, 0.1, 0.05], [8.0, 2.0, 0.5], [4.0, 1.0, 0.25])
    assert math.isnan(table.rows[0].order_rho)
    assert table.rows[1].order_rho == pytest.approx(2.0)
    assert table.rows[2].order_energy == pytest.approx(2.0)


def test_table_csv_round_trip(tmp_path):
    table = ConvergenceTable.from_errors(
        [1e-2, 1e-3, 1e-4], [3.2e-3, 3.3e-4, 3.1e-5], [1.1e-3, 1.2e-4, 1.3e-5]
    )
    path = tmp_path / "table.csv"
    table.write_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "param,err_rho_L1,err_E_L1,order_rho,order_E"
    again = ConvergenceTable.read_csv(path)
    assert table.equals(again)


def test_table_csv_uses_lf_endings(tmp_path):
    table = ConvergenceTable.from_errors([0.5, 0.25], [1.0, 0.25], [1.0, 0.25])
    path = tmp_path / "t.csv"
    table.write_csv(path)
    raw = path.read_bytes()
    assert b"\r" not in raw


def test_fit_loglog_slope_exact_powers():
    x = [1e-2, 1e-3, 1e-4]
    y = [v**0.5 for v in x]
    assert fit_loglog_slope(x, y) == pytest.approx(0.5, rel=1e-12)


# ---------------------------------------------------------------------------
# regularization studies
# ---------------------------------------------------------------------------


def test_regularization_study_equilibrium_errors_vanish():
    # at theta = 1 the eps terms all vanish, so equilibrium is stationary
    # for every eps and the self-convergence errors are zero
    init = make_initial_state(*initial_condition("equilibrium", GRID))
    p = SchemeParams(tau=1e-2, eps=1e-4, delta=0.0, t_final=0.05)
    result = regularization_study(GRID, init, p, "eps", [1e-4, 1e-5, 1e-6])
    for row in result.table.rows:
        assert row.err_rho < 1e-11
        assert row.err_energy < 1e-11


def test_regularization_study_equilibrium_delta_errors_small():
    # with delta > 0 the equilibrium drifts at rate delta * integral(phi),
    # so self-convergence errors are O(delta), far below bump-run errors
    init = make_initial_state(*initial_condition("equilibrium", GRID))
    p = SchemeParams(tau=1e-2, eps=0.0, delta=1e-4, t_final=0.05)
    result = regularization_study(GRID, init, p, "delta", [1e-3, 1e-4, 1e-5])
    for row in result.table.rows:
        assert row.err_rho < 5e-4
        assert row.err_energy < 5e-4


def test_regularization_study_requires_decreasing_values():
    init = make_initial_state(*initial_condition("equilibrium", GRID))
    p = SchemeParams(tau=1e-2, t_final=0.02)
    with pytest.raises(ValueError):
        regularization_study(GRID, init, p, "delta", [1e-4, 1e-3])
    with pytest.raises(ValueError):
        regularization_study(GRID, init, p, "sigma", [1e-3, 1e-4])


def test_regularization_study_tau_first_order():
    init = make_initial_state(*initial_condition("gauss-bump", GRID))
    p = SchemeParams(tau=1e-3, eps=1e-6, delta=1e-4, t_final=0.04)
    # deep reference value so the Cauchy offset barely biases the slope
    result = regularization_study(GRID, init, p, "tau", [8e-3, 4e-3, 2e-3, 2.5e-4])
    for row in result.table.rows[1:]:
        assert 0.75 < row.order_rho < 1.35
        assert 0.75 < row.order_energy < 1.35


def test_regularization_study_records_drifts():
    init = make_initial_state(*initial_condition("gauss-bump", GRID))
    p = SchemeParams(tau=2e-3, eps=0.0, delta=1e-4, t_final=0.02)
    result = regularization_study(GRID, init, p, "delta", [1e-3, 1e-4])
    assert set(result.mass_drift) == {1e-3, 1e-4}
    assert result.mass_drift[1e-3] > result.mass_drift[1e-4]


# ---------------------------------------------------------------------------
# manufactured solutions
# ---------------------------------------------------------------------------


def test_manufactured_constant_fields_have_zero_sources():
    x, t = sp.symbols("x t", real=True)
    ms = manufactured_from_expressions(sp.Integer(2), sp.Rational(3, 2), x, t)
    xs = np.linspace(0.0, 1.0, 17)
    assert np.allclose(ms.source_mass(xs, 0.3), 0.0)
    assert np.allclose(ms.source_energy(xs, 0.3), 0.0)
    assert np.allclose(ms.rho(xs, 0.0), 2.0)
    assert np.allclose(ms.energy(xs, 0.0), 1.5 * (1.0 + 3.0))


def test_manufactured_sources_match_finite_differences():
    ms = default_manufactured(1.0)
    xs = np.linspace(0.05, 0.95, 7)
    t0, dh = 0.2, 1e-5
    dt_rho = (ms.rho(xs, t0 + dh) - ms.rho(xs, t0 - dh)) / (2.0 * dh)
    flux = lambda x: ms.rho(x, t0) * ms.theta(x, t0)
    dxx = (flux(xs + dh) - 2.0 * flux(xs) + flux(xs - dh)) / dh**2
    assert np.allclose(ms.source_mass(xs, t0), dt_rho - dxx, atol=1e-4)


def test_default_manufactured_positive_and_wall_compatible():
    ms = default_manufactured(1.0)
    xs = np.linspace(0.0, 1.0, 101)
    for t in (0.0, 0.1, 1.0):
        assert np.all(ms.rho(xs, t) > 0.0)
        assert np.all(ms.theta(xs, t) > 0.0)
    dh = 1e-6
    for t in (0.0, 0.5):
        for f in (ms.rho, ms.theta):
            assert abs(f(np.array([dh]), t)[0] - f(np.array([0.0]), t)[0]) < 1e-10


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def test_sweep_spec_combinations_cross_product():
    spec = SweepSpec(
        base=SchemeParams(),
        varied={"delta": [1e-3, 1e-4], "tau": [1e-2, 1e-3, 5e-4]},
    )
    combos = spec.combinations()
    assert len(combos) == 6
    assert {frozenset(c.items()) for c in combos} == {
        frozenset({("delta", d), ("tau", t)})
        for d in (1e-3, 1e-4)
        for t in (1e-2, 1e-3, 5e-4)
    }


def test_run_sweep_is_deterministic():
    grid = build_grid(16, 1.0)
    spec = SweepSpec(
        base=SchemeParams(tau=5e-3, t_final=0.02, eps=0.0, delta=1e-4),
        varied={"delta": [1e-3, 1e-4]},
        preset="gauss-bump",
    )
    res_a = run_sweep(grid, spec)
    res_b = run_sweep(grid, spec)
    for (_, ta), (_, tb) in zip(res_a, res_b):
        assert np.array_equal(ta.states[-1].phi, tb.states[-1].phi)


def test_default_run_matrix_shape():
    matrix = default_run_matrix()
    assert len(matrix) == 3 * 2 * 3 * 2
    positive = default_run_matrix(positive_reg_only=True)
    assert len(positive) == 3 * 1 * 2 * 2
    assert all(p.eps > 0.0 and p.delta > 0.0 for _, p in positive)
