import csv
import io

import numpy as np
import pytest

from safeproj.demos import (
    DEMOS,
    ClipProblem,
    angle_deg,
    default_halfspace_plant,
    default_halfspace_policy,
    det_gradients,
    run_demo,
)
from safeproj.errors import UnknownDemo


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_fig1_values():
    out = rows(run_demo("fig1")["fig1.csv"])
    assert [r["policy"] for r in out] == ["safe", "projected"]
    assert float(out[0]["qvalue"]) == pytest.approx(440 / 121, abs=1e-9)
    assert float(out[1]["qvalue"]) == pytest.approx(11.0, abs=1e-9)


def test_fig2_boundary_mass():
    files = run_demo("fig2", seed=3)
    assert set(files) == {"fig2_far.csv", "fig2_centered.csv", "fig2_summary.csv"}
    summary = {r["case"]: float(r["boundary_fraction"]) for r in rows(files["fig2_summary.csv"])}
    assert summary["far"] > 0.9 and summary["centered"] < 0.01
    counts = [int(r["count"]) for r in rows(files["fig2_far.csv"])]
    assert sum(counts) == 100_000


def test_clip_closed_form_matches_quadrature():
    for theta in (-1.0, 0.0, 1.0, 2.5):
        p = ClipProblem(theta=theta, sigma=0.7)
        assert p.gradient_closed_form() == pytest.approx(p.gradient_quadrature(), abs=1e-10)


def test_clip_expected_cost_matches_quadrature():
    from scipy import integrate, stats
    p = ClipProblem()
    f = lambda z: p.cost(min(p.theta + p.sigma * z, p.bound)) * stats.norm.pdf(z)  # noqa: E731
    direct = integrate.quad(f, -np.inf, 0.0)[0] + integrate.quad(f, 0.0, np.inf)[0]
    assert p.expected_cost() == pytest.approx(direct, abs=1e-9)


def test_clip_gradient_matches_derivative_of_cost():
    h = 1e-5
    p = ClipProblem()
    up, down = ClipProblem(theta=p.theta + h), ClipProblem(theta=p.theta - h)
    assert p.gradient_closed_form() == pytest.approx((up.expected_cost() - down.expected_cost()) / (2 * h), abs=1e-8)


def test_bias_stoch_table():
    out = {r["estimator"]: r for r in rows(run_demo("bias-stoch", seed=1)["bias_stoch.csv"])}
    assert ClipProblem().mass_beyond() >= 0.3
    assert abs(float(out["corrected"]["z_score"])) < 3
    assert abs(float(out["naive"]["z_score"])) > 5


def test_bias_det_table():
    out = {r["estimator"]: r for r in rows(run_demo("bias-det")["bias_det.csv"])}
    assert float(out["corrected"]["rel_error_vs_fd"]) < 1e-3
    assert float(out["naive"]["angle_deg_vs_fd"]) > 10


def test_bias_det_constraint_is_active():
    _, _, _, active, dropped = det_gradients(default_halfspace_plant(), default_halfspace_policy())
    assert active > 0 and dropped == 0


def test_angle():
    assert angle_deg(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == pytest.approx(90.0)
    assert angle_deg(np.array([1.0, 1.0]), np.array([2.0, 2.0])) == pytest.approx(0.0, abs=1e-5)


def test_unknown_demo():
    with pytest.raises(UnknownDemo, match="choose from"):
        run_demo("fig9")
    assert set(DEMOS) == {"fig1", "fig2", "bias-det", "bias-stoch"}
