import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from thinfree.solver import (
    ObstacleProblemSpec,
    SolutionField,
    ThinObstacleSolver,
    build_domain,
    discrete_laplacian,
    lcp_bruteforce,
    optimal_omega,
    residuals,
    solve_thin_obstacle,
)


def spec_for(domain, obstacle, boundary=0.0, tol=1e-12, **kw):
    return ObstacleProblemSpec(domain, obstacle, boundary, omega=optimal_omega(domain), tol=tol, **kw)


def center_spike():
    d = build_domain(2, 1.0, 0.5)
    phi = -np.ones(d.thin_shape)
    phi[2, 2] = 1.0
    return spec_for(d, phi)


def energy_oracle(spec):
    """Minimise the Dirichlet energy of the even reflection subject to the obstacle.

    Plane edges are shared by both halves, so they carry half the weight of
    the other edges.  Independent of the stencil code under test.
    """
    d = spec.domain
    free = ~d.boundary_mask()
    base = np.array(spec.boundary, dtype=float)

    def unpack(x):
        u = base.copy()
        u[free] = x
        return u

    def energy(x):
        u = unpack(x)
        e, g = 0.0, np.zeros_like(u)
        for ax in range(u.ndim):
            diff = np.diff(u, axis=ax)
            w = np.ones_like(diff)
            if ax < d.n:
                w[..., 0] = 0.5
            e += 0.5 * np.sum(w * diff**2)
            flux = w * diff
            lo = [slice(None)] * u.ndim
            hi = [slice(None)] * u.ndim
            lo[ax], hi[ax] = slice(0, -1), slice(1, None)
            g[tuple(lo)] -= flux
            g[tuple(hi)] += flux
        return e, g[free]

    lower = np.full(d.dims, -np.inf)
    lower[..., 0] = spec.obstacle
    bounds = [(lo if np.isfinite(lo) else None, None) for lo in lower[free]]
    x0 = np.maximum(np.zeros(free.sum()), np.nan_to_num(lower[free], neginf=0.0))
    res = minimize(energy, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"ftol": 1e-15, "gtol": 1e-13, "maxiter": 20000})
    return unpack(res.x)


# -- domain --------------------------------------------------------------------


def test_domain_dims():
    assert build_domain(2, 1, 0.5).dims == (5, 5, 3)
    assert build_domain(2, 4, 1 / 16).dims == (129, 129, 65)
    assert build_domain(1, 2, 0.25).dims == (17, 9)


@pytest.mark.parametrize("args", [(2, 1, 0.3), (3, 1, 0.5), (2, -1, 0.5), (2, 1, 0), (2, 64, 1 / 64)])
def test_domain_errors(args):
    with pytest.raises(ValueError):
        build_domain(*args)


def test_node_coordinates():
    d = build_domain(2, 1, 0.25)
    X, Y, Z = d.grid_coords()
    assert (X[3, 5, 2], Y[3, 5, 2], Z[3, 5, 2]) == (-1 + 3 * 0.25, -1 + 5 * 0.25, 2 * 0.25)
    assert d.plane_coords()[0][d.origin_index()] == 0.0


def test_spec_validation():
    d = build_domain(2, 1, 0.5)
    with pytest.raises(ValueError):
        ObstacleProblemSpec(d, 0.0, 0.0, omega=2.0)
    with pytest.raises(ValueError):
        ObstacleProblemSpec(d, 0.0, 0.0, tol=0)
    with pytest.raises(ValueError):
        ObstacleProblemSpec(d, 0.0, np.inf)
    with pytest.raises(ValueError):
        ObstacleProblemSpec(d, np.zeros((4, 4)), 0.0)


# -- trivial solves --------------------------------------------------------------


def test_low_obstacle_gives_zero():
    d = build_domain(2, 1, 0.25)
    u = solve_thin_obstacle(spec_for(d, -1.0))
    assert u.converged and np.abs(u.values).max() == 0


def test_constant_boundary_gives_constant():
    d = build_domain(2, 1, 0.25)
    u = solve_thin_obstacle(spec_for(d, 0.0, 1.0))
    assert np.abs(u.values - 1).max() < 1e-10


def test_oracle_all_contact_and_all_free():
    d = build_domain(2, 1, 0.5)
    assert np.abs(lcp_bruteforce(spec_for(d, 0.0)).values).max() < 1e-14
    spec = spec_for(d, -100.0, lambda x, y, z: x + 2 * y + z)
    u = lcp_bruteforce(spec).values
    # linear data is discretely harmonic, and even in z only when it does not depend on z
    lap = discrete_laplacian(u, d)
    assert np.nanmax(np.abs(lap[..., 1:])) < 1e-10


def test_projection_is_exact():
    spec = center_spike()
    u = solve_thin_obstacle(spec)
    assert np.all(u.plane >= spec.obstacle)


# -- oracle agreement --------------------------------------------------------------


def test_center_spike_matches_oracle():
    spec = center_spike()
    u = solve_thin_obstacle(spec).values
    assert np.abs(u - lcp_bruteforce(spec).values).max() <= 1e-8


def test_center_spike_matches_energy_minimiser():
    spec = center_spike()
    assert np.abs(lcp_bruteforce(spec).values - energy_oracle(spec)).max() <= 1e-6


@pytest.mark.parametrize("seed", range(4))
def test_oracle_methods_agree(seed):
    rng = np.random.default_rng(seed)
    d = build_domain(2, 1.5, 0.5)
    spec = spec_for(d, rng.uniform(-1, 1, d.thin_shape), rng.uniform(-0.5, 0.5, d.dims))
    ref = lcp_bruteforce(spec, method="pivot").values
    assert np.abs(lcp_bruteforce(spec, method="iterate").values - ref).max() < 1e-9
    assert np.abs(solve_thin_obstacle(spec).values - ref).max() < 1e-8
    assert np.abs(energy_oracle(spec) - ref).max() < 1e-6


def test_enumeration_agrees_with_pivot():
    rng = np.random.default_rng(7)
    d = build_domain(1, 3.0, 0.5)
    spec = spec_for(d, rng.uniform(-1, 1, d.thin_shape), rng.uniform(-0.5, 0.5, d.dims))
    a = lcp_bruteforce(spec, method="enumerate").values
    b = lcp_bruteforce(spec, method="pivot").values
    assert np.abs(a - b).max() < 1e-12


def test_oracle_size_limit():
    d = build_domain(2, 2, 0.125)
    with pytest.raises(ValueError):
        lcp_bruteforce(spec_for(d, 0.0))


# -- residuals -----------------------------------------------------------------------


def test_residual_examples():
    d = build_domain(2, 1, 0.25)
    one = SolutionField(d, np.ones(d.dims))
    r = residuals(one, spec_for(d, 0.0, 1.0))
    assert r.within(0.0)
    zero = SolutionField(d, np.zeros(d.dims))
    assert residuals(zero, spec_for(d, -1.0)).within(0.0)


def test_residuals_detect_a_wrong_field():
    d = build_domain(2, 1, 0.25)
    bad = SolutionField(d, np.full(d.dims, 0.5))
    assert residuals(bad, spec_for(d, -1.0)).boundary == 0.5


# -- properties -------------------------------------------------------------------------


@st.composite
def small_specs(draw):
    n = draw(st.sampled_from([1, 2]))
    m = draw(st.integers(1, 3 if n == 2 else 8))
    h = draw(st.sampled_from([0.25, 0.5, 1.0]))
    d = build_domain(n, m * h, h)
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    return d, rng


@given(small_specs())
def test_comparison_principle(args):
    d, rng = args
    phi1 = rng.uniform(-1, 1, d.thin_shape)
    b1 = rng.uniform(-0.5, 0.5, d.dims)
    s1 = spec_for(d, phi1, b1, tol=1e-11)
    s2 = s1.replace(obstacle=phi1 + rng.uniform(0, 0.5, d.thin_shape), boundary=b1 + rng.uniform(0, 0.5, d.dims))
    u1, u2 = solve_thin_obstacle(s1).values, solve_thin_obstacle(s2).values
    assert np.all(u1 <= u2 + 10 * s1.tol)


@given(small_specs())
def test_maximum_principle(args):
    d, rng = args
    phi = rng.uniform(-1, 1, d.thin_shape)
    u = solve_thin_obstacle(spec_for(d, phi)).values
    assert u.min() >= -1e-12
    assert u.max() <= max(phi.max(), 0) + 1e-12


def test_dihedral_symmetry():
    d = build_domain(2, 1.5, 0.125)
    X, Y = d.plane_coords()
    phi = 0.4 - 2 * (X**2 + Y**2) + 3 * X**2 * Y**2
    u = solve_thin_obstacle(spec_for(d, phi, tol=1e-13)).values
    for g in (lambda a: a[::-1], lambda a: a[:, ::-1], lambda a: a.transpose(1, 0, 2)):
        assert np.abs(g(u) - u).max() <= 1e-10


def test_monotone_truncation():
    h = 0.125
    small, big = build_domain(2, 1.0, h), build_domain(2, 1.5, h)
    f = lambda x, y: 0.5 - 2 * (x**2 + y**2)
    us = solve_thin_obstacle(spec_for(small, f)).values
    ub = solve_thin_obstacle(spec_for(big, f)).values
    off = (big.dims[0] - small.dims[0]) // 2
    common = ub[off:off + small.dims[0], off:off + small.dims[0], :small.dims[2]]
    assert np.all(common >= us - 1e-10)


def test_worker_count_does_not_matter():
    d = build_domain(2, 1.0, 1 / 8)
    X, Y = d.plane_coords()
    spec = spec_for(d, 0.5 - 2 * (X**2 + Y**2))
    sols = [solve_thin_obstacle(spec, sweep="redblack", workers=w).values for w in (1, 2, 4)]
    assert max(np.abs(s - sols[0]).max() for s in sols) <= 1e-10
    lex = solve_thin_obstacle(spec).values
    assert np.abs(lex - sols[0]).max() < 1e-9


def test_one_dimensional_plane():
    d = build_domain(1, 2.0, 0.25)
    spec = spec_for(d, lambda x: 0.5 - x**2)
    u = solve_thin_obstacle(spec).values
    assert np.abs(u - lcp_bruteforce(spec).values).max() < 1e-8


def test_non_convergence_is_flagged():
    spec = center_spike().replace(max_sweeps=1)
    assert not solve_thin_obstacle(spec).converged


def test_warm_start_converges_to_same_solution():
    spec = center_spike()
    cold = solve_thin_obstacle(spec)
    warm = solve_thin_obstacle(spec, u0=cold)
    assert warm.sweeps_used <= 2
    assert np.abs(warm.values - cold.values).max() < 1e-10


def test_estimator_interface():
    spec = center_spike()
    est = ThinObstacleSolver(tol=1e-12)
    assert est.get_params()["tol"] == 1e-12
    values = est.fit(spec).predict()
    assert est.spec_.omega == pytest.approx(optimal_omega(spec.domain))
    assert np.abs(values - lcp_bruteforce(spec).values).max() < 1e-8
    est.set_params(sweep="redblack", workers=2)
    assert np.abs(est.predict(spec) - values).max() < 1e-9
