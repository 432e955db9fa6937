import numpy as np
import pytest

from dnls.errors import DomainError, InvalidMetricError
from dnls.geometry import (
    DampingField,
    MetricField,
    PRESET_NAMES,
    build_preset,
    bump_profile,
    bump_profile_derivative,
    check_control,
    coercivity_constant,
    cutoff_field,
    gradient_bound_constant,
    smooth_transition,
)
from dnls.grid import Field, GridSpec, gradient


SPEC = GridSpec(2, 64, 10.0)
SPEC3 = GridSpec(3, 24, 10.0)


def test_bump_profile_shape():
    r = np.array([0.0, 1.0, 1.999, 2.0, 5.0])
    b = bump_profile(r, 2.0)
    assert b[0] == pytest.approx(1.0)
    assert 0 < b[1] < 1
    assert b[3] == 0.0 and b[4] == 0.0
    db = bump_profile_derivative(r, 2.0)
    assert db[0] == 0.0
    assert db[1] < 0.0
    assert db[3] == 0.0


def test_bump_derivative_matches_finite_differences():
    r = np.linspace(0.05, 1.9, 40)
    h = 1e-6
    fd = (bump_profile(r + h, 2.0) - bump_profile(r - h, 2.0)) / (2 * h)
    assert np.max(np.abs(fd - bump_profile_derivative(r, 2.0))) < 1e-7


def test_smooth_transition_endpoints_and_monotonicity():
    s = np.linspace(-0.5, 1.5, 101)
    t = smooth_transition(s)
    assert np.all(t[s <= 0] == 0.0)
    assert np.all(t[s >= 1] == 1.0)
    assert np.all(np.diff(t) >= 0.0)


def test_cutoff_field_flat_and_support():
    chi = cutoff_field(SPEC, 3.0, 6.0)
    r2 = SPEC.radius_squared
    assert np.all(chi[r2 <= 9.0 - 1e-12] == 1.0)
    assert np.all(chi[r2 >= 36.0] == 0.0)
    assert np.all((0.0 <= chi) & (chi <= 1.0))
    with pytest.raises(DomainError):
        cutoff_field(SPEC, 6.0, 3.0)


# -- presets -------------------------------------------------------------------


def test_identity_preset_control_satisfied_with_infinite_delta0():
    metric, damping = build_preset("identity", SPEC, {"damping_radius": 3.0})
    report = check_control(metric, damping)
    assert report.satisfied
    assert report.delta0 == np.inf
    assert report.violation_count == 0
    assert metric.is_identity


def test_conformal_preset_control_satisfied_with_scanned_delta0():
    metric, damping = build_preset(
        "conformal_bump", SPEC,
        {"metric_amplitude": 0.5, "metric_radius": 2.0, "damping_radius": 4.0},
    )
    report = check_control(metric, damping, g_tol=1e-12, a_min=1e-8)
    assert report.satisfied
    assert report.delta0 > 0
    # exhaustive oracle: min of a over points where the off-grid evaluator
    # puts the perturbation above threshold
    pts = np.stack(
        [np.broadcast_to(x, SPEC.shape) for x in SPEC.coords], axis=-1
    ).reshape(-1, 2)
    dev = np.linalg.norm(
        metric.eval_metric(pts) - np.eye(2), axis=(-2, -1)
    )  # Frobenius
    a_vals = damping.eval_damping(pts)
    oracle = a_vals[dev > 1e-12].min()
    assert report.delta0 == pytest.approx(oracle, rel=1e-12)


def test_uncontrolled_preset_violates_control():
    metric, damping = build_preset("uncontrolled_bump", SPEC)
    report = check_control(metric, damping)
    assert not report.satisfied
    assert report.violation_count > 0
    assert report.violation_points.shape[1] == SPEC.dim
    # every reported violation point carries a perturbed metric and no damping
    dev = np.linalg.norm(
        metric.eval_metric(report.violation_points) - np.eye(2), axis=(-2, -1)
    )
    assert np.all(dev > 1e-12)
    assert np.all(damping.eval_damping(report.violation_points) <= 1e-8)


def test_shifted_bump_outside_damping_is_violation():
    metric = MetricField(SPEC, amplitude=0.3, radius=2.0)
    damping = DampingField(SPEC, amplitude=1.0, radius=2.0,
                           center=np.array([6.0, 0.0]))
    assert not check_control(metric, damping).satisfied


def test_unknown_preset_rejected():
    with pytest.raises(DomainError):
        build_preset("wormhole", SPEC)
    with pytest.raises(DomainError):
        build_preset("identity", SPEC, {"warp_factor": 2.0})


# -- coercivity -----------------------------------------------------------------


def test_coercivity_identity():
    metric, _ = build_preset("identity", SPEC)
    assert coercivity_constant(metric) == 1.0


def test_coercivity_positive_bump_never_lowers():
    metric = MetricField(SPEC, amplitude=0.5, radius=2.0)
    assert coercivity_constant(metric) == pytest.approx(1.0)


def test_coercivity_negative_bump_apex():
    # b attains 1 at the on-grid origin, so min eig = 1 - 0.9 exactly
    metric = MetricField(SPEC, amplitude=-0.9, radius=2.0)
    assert coercivity_constant(metric) == pytest.approx(0.1, abs=1e-12)


def test_coercivity_loss_rejected():
    metric = MetricField(SPEC, amplitude=-1.1, radius=2.0)
    with pytest.raises(InvalidMetricError) as excinfo:
        coercivity_constant(metric)
    assert "eigenvalue" in str(excinfo.value)
    with pytest.raises(InvalidMetricError):
        build_preset("conformal_bump", SPEC, {"metric_amplitude": -1.05})


def test_anisotropic_preset_symmetric_and_coercive():
    metric, _ = build_preset("anisotropic_bump", SPEC3,
                             {"metric_amplitude": 0.4, "metric_radius": 2.0})
    table = metric.table
    for i in range(3):
        for j in range(3):
            assert np.array_equal(table[i, j], table[j, i])
    assert coercivity_constant(metric) == pytest.approx(1.0)
    g = metric.eval_metric(np.array([[0.0, 0.0, 0.0]]))[0]
    assert g[0, 0] == pytest.approx(1.4)
    assert g[1, 1] == pytest.approx(1.0)


# -- gradient bound constant -------------------------------------------------------


def test_gradient_bound_zero_damping():
    damping = DampingField(SPEC, amplitude=0.0, radius=3.0)
    assert gradient_bound_constant(damping, 0.01) == 0.0


def test_gradient_bound_matches_exhaustive_scan():
    damping = DampingField(SPEC, amplitude=1.0, radius=3.0)
    eps = 0.01
    got = gradient_bound_constant(damping, eps)
    # oracle: raw spectral gradient magnitude and a full-grid maximization
    a = damping.table
    grad = gradient(Field(a.astype(complex), SPEC))
    mag = np.sqrt(sum(np.abs(g.values) ** 2 for g in grad))
    best = 0.0
    flat_a, flat_m = a.ravel(), mag.ravel()
    for ai, mi in zip(flat_a, flat_m):
        if ai > 0.0 and mi > eps:
            best = max(best, (mi - eps) / ai)
    assert got == pytest.approx(best, rel=1e-12)
    assert got > 0.0


def test_gradient_bound_monotone_in_eps():
    damping = DampingField(SPEC, amplitude=1.0, radius=3.0)
    values = [gradient_bound_constant(damping, eps) for eps in (0.005, 0.01, 0.05, 0.2)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    with pytest.raises(DomainError):
        gradient_bound_constant(damping, 0.0)


# -- evaluator / table agreement -----------------------------------------------------


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_offgrid_evaluator_matches_tables_at_grid_points(name):
    metric, damping = build_preset(name, SPEC3)
    pts = np.stack(
        [np.broadcast_to(x, SPEC3.shape) for x in SPEC3.coords], axis=-1
    ).reshape(-1, 3)
    g = metric.eval_metric(pts).reshape(SPEC3.shape + (3, 3))
    for i in range(3):
        for j in range(3):
            assert np.max(np.abs(g[..., i, j] - metric.table[i, j])) < 1e-12
    a = damping.eval_damping(pts).reshape(SPEC3.shape)
    assert np.max(np.abs(a - damping.table)) < 1e-12


def test_metric_grad_evaluator_matches_finite_differences():
    metric = MetricField(SPEC3, amplitude=-0.5, radius=2.0)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1.8, 1.8, size=(20, 3))
    dg = metric.eval_metric_grad(pts)
    h = 1e-6
    for k in range(3):
        shift = np.zeros(3)
        shift[k] = h
        fd = (metric.eval_metric(pts + shift) - metric.eval_metric(pts - shift)) / (
            2 * h
        )
        assert np.max(np.abs(fd - dg[:, k])) < 1e-6


def test_damping_annulus_shape():
    damping = DampingField(SPEC, amplitude=2.0, shape="annulus",
                           inner_radius=2.0, outer_radius=6.0)
    pts = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 7.0]])
    vals = damping.eval_damping(pts)
    assert vals[0] == 0.0
    assert vals[1] == pytest.approx(2.0)  # annulus midline
    assert vals[2] == 0.0
    assert np.all(damping.table >= 0.0)
    with pytest.raises(DomainError):
        DampingField(SPEC, shape="annulus", inner_radius=3.0, outer_radius=2.0)


def test_damping_support_must_fit_in_box():
    with pytest.raises(DomainError):
        DampingField(SPEC, amplitude=1.0, radius=11.0)
    with pytest.raises(DomainError):
        DampingField(SPEC, amplitude=1.0, radius=4.0, center=np.array([8.0, 0.0]))
