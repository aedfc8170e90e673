import json
import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from thinfree import io as tio
from thinfree.pipelines import (
    CLAIMS,
    Check,
    ClassPreconditionError,
    GridConfig,
    PipelineReport,
    l_shape_points,
    rho_bar,
    rho_bar_oracle,
    run_bounded_positivity,
    run_compact_contact,
    run_named_example,
    run_prop_polysets,
    run_prop_subsets,
    run_property_suite,
    run_thm_approx,
    zero_level_raster,
)
from thinfree.polyalg import Polynomial, parse_poly, radial_power
from thinfree.setgeom import ThinSet, ball_raster, connected_components, hausdorff, raster_boundary

COARSE = GridConfig(L=4.0, h=1 / 8)


def all_anchored(report):
    return all(c.anchor in CLAIMS for c in report.checks)


# -- the radius rho_bar ------------------------------------------------------------


def _rho_by_scan(k, n):
    """Independent route: the largest t making min_r g(r) = 0 solvable, by nested scalar minimisation.

    For fixed A the best t is 1 - min_r (A r^(1-n) + r^k); the contact radius is
    the r solving A (n-1) r^(-n) = k r^(k-1) at the A where t = 0.
    """
    def t_of(A):
        res = minimize_scalar(lambda r: A * r ** (1 - n) + r**k, bounds=(1e-6, 10), method="bounded",
                              options={"xatol": 1e-14})
        return 1 - res.fun, res.x

    lo, hi = 1e-9, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_of(mid)[0] > 0:
            lo = mid
        else:
            hi = mid
    return t_of(lo)[1]


def test_rho_bar_closed_form_value():
    assert rho_bar(2, 2) == pytest.approx(1 / math.sqrt(3), abs=1e-12)
    assert rho_bar(8, 2) == pytest.approx(0.7599, abs=1e-4)


@pytest.mark.parametrize("k,n", [(2, 2), (4, 2), (8, 2), (4, 3), (6, 4)])
def test_rho_bar_against_scan(k, n):
    assert rho_bar(k, n) == pytest.approx(_rho_by_scan(k, n), abs=1e-6)


def test_rho_bar_oracle_and_shape():
    for n in (2, 3, 4):
        vals = [rho_bar(k, n) for k in range(2, 17)]
        assert all(v < 1 for v in vals)
        assert all(a < b for a, b in zip(vals, vals[1:]))
        assert max(abs(rho_bar(k, n) - rho_bar_oracle(k, n)) for k in range(2, 17)) <= 1e-10


# -- report plumbing -----------------------------------------------------------------


def test_report_pass_rules():
    ok = Check.holds("fine", "solver-convergence", True)
    assert PipelineReport("r", {}, [ok]).passed
    assert not PipelineReport("r", {}, []).passed
    assert not PipelineReport("r", {}, [ok, Check.holds("orphan", "no-such-claim", True)]).passed
    assert Check.at_most("x", "unit-bound", 2.0, 1.0).passed is False
    assert Check.at_least("x", "unit-bound", None, 1.0).passed


def test_report_key_order():
    keys = list(PipelineReport("r", {"a": 1}, [Check.holds("c", "solver-convergence", True)]).to_dict())
    assert keys == ["name", "passed", "inputs", "truncation_budget", "checks", "log", "artifacts"]


def test_zero_level_raster_marks_sign_changes():
    v = np.array([[1.0, 0.5, -0.2, -1.0]])
    assert zero_level_raster(v).tolist() == [[False, False, True, False]]
    assert zero_level_raster(np.array([0.0, 1.0])).tolist() == [True, False]


# -- compact contact ---------------------------------------------------------------------


def test_positive_polynomial_has_no_contact():
    rep = run_compact_contact(Polynomial.constant(2, 1), COARSE)
    assert rep.passed and not rep.data["contact"]
    assert np.abs(rep.data["field"].values).max() == 0


def test_unbounded_class_is_rejected():
    with pytest.raises(ClassPreconditionError):
        run_compact_contact(parse_poly("x1^2*x2^2 - 1", 2), COARSE)


def test_contact_depends_only_on_sign():
    pbar = radial_power(2, 2) - 1
    a = run_compact_contact(pbar, COARSE).data["contact"]
    b = run_compact_contact(2 * pbar, COARSE).data["contact"]
    assert a == b


def test_scaling_covariance():
    # u_r(x) = r^-2 u(r x) with r = 2 maps the (4, 1/8) problem onto the (2, 1/16) grid node for node
    big = run_compact_contact(radial_power(2, 2) - 1, COARSE).data["contact"]
    small = run_compact_contact(radial_power(2, 2) - Polynomial.constant(2, 0.25), GridConfig(L=2.0, h=1 / 16))
    diff = big.mask ^ small.data["contact"].mask
    layer = raster_boundary(big).mask | raster_boundary(small.data["contact"]).mask
    assert not np.any(diff & ~layer)


def test_globk2(named):
    rep = named("globk2")
    assert rep.passed and all_anchored(rep)
    contact = rep.data["contact"]
    assert ball_raster(rep.data["domain"], radius=0.5).issubset(contact)
    assert contact.issubset(ball_raster(rep.data["domain"], radius=1.08))
    assert rep.check("discrete-complementarity").passed


def test_globk8(named):
    rep = named("globk8")
    assert rep.passed
    r = rep.data["domain"].plane_radius()[rep.data["contact"].mask]
    assert rho_bar(8, 2) - 0.08 <= r.max() <= 1.08


def test_twoballs(named):
    rep = named("twoballs")
    assert rep.passed and all_anchored(rep)
    comps = connected_components(rep.data["contact"])
    assert len(comps) == 2
    ys = sorted(c.points()[:, 1].mean() for c in comps)
    assert ys[0] < -0.5 and ys[1] > 0.5


def test_annulus(named):
    rep = named("annulus")
    assert rep.passed and all_anchored(rep)
    d = rep.data["domain"]
    assert not rep.data["contact"].mask[d.origin_index()]


# -- bounded positivity ------------------------------------------------------------------------


def test_constant_q_gives_minus_abs_z():
    cfg = GridConfig(L=3.0, h=3 / 32)
    rep = run_bounded_positivity(Polynomial.constant(2, 1), cfg)
    d = rep.data["domain"]
    z = d.grid_coords()[-1]
    assert np.abs(rep.data["field"].values + z).max() <= 1e-5
    assert not rep.data["positivity"]
    assert rep.passed


def test_quartic_positivity_is_star_shaped():
    rep = run_bounded_positivity(radial_power(2, 4) - 1, GridConfig(L=4.0, h=1 / 8))
    assert rep.passed
    assert rep.check("star-shaped-positivity").measured is True


def test_cubicq(named):
    rep = named("cubicq")
    assert rep.passed and all_anchored(rep)
    d = rep.data["domain"]
    assert ball_raster(d, radius=1.0).issubset(rep.data["positivity"])
    assert rep.log["weight"] > 0


def test_positivity_rejects_unbounded():
    with pytest.raises(ClassPreconditionError):
        run_bounded_positivity(parse_poly("x1", 2), COARSE)


# -- polynomial zero sets -----------------------------------------------------------------------


def test_polysets_point_zero_set():
    rep = run_prop_polysets(radial_power(2, 4), 0.2, config=COARSE)
    assert rep.passed
    contact = rep.data["contact"]
    d = rep.data["domain"]
    assert contact.mask[d.origin_index()]
    assert d.plane_radius()[contact.mask].max() <= 0.2 + d.h


def test_polysets_line_zero_set():
    rep = run_prop_polysets(parse_poly("x1^2", 2), 0.2, config=COARSE)
    assert rep.passed
    d = rep.data["domain"]
    X, Y = d.plane_coords()
    seg = ThinSet(d, (X == 0) & (np.abs(Y) <= 1))
    assert seg.issubset(rep.data["contact"])
    assert np.abs(X[rep.data["contact"].mask]).max() <= 0.2


def test_polysets_large_k_variant():
    rep = run_prop_polysets(parse_poly("x1^2", 2), 0.5, variant="large", config=COARSE)
    assert rep.inputs["k"] >= 2 and 1 / rep.inputs["rho_bar"] <= 1.5
    assert rep.passed


def test_polysets_rejects_negative_f():
    with pytest.raises(ClassPreconditionError):
        run_prop_polysets(parse_poly("x1", 2), 0.2, config=COARSE)


def test_starshaped(named):
    rep = named("starshaped")
    assert rep.passed and all_anchored(rep)
    d = rep.data["domain"]
    X, Y = d.plane_coords()
    cross = ThinSet(d, ((X == 0) | (Y == 0)) & (d.plane_radius() <= 1))
    assert cross.issubset(rep.data["contact"])


# -- sublevel sets ---------------------------------------------------------------------------------


def test_subsets_never_nonpositive():
    rep = run_prop_subsets(Polynomial.constant(2, 1), 0.1, COARSE, k_ladder=(2, 4, 6), keep_fields=True)
    assert rep.passed
    assert all(rg["contact_nodes"] == 0 for rg in rep.log["rungs"])


def test_subsets_disk(subsets_report):
    rep = subsets_report
    assert rep.passed and rep.log["status"] == "covered"
    d = rep.data["domain"]
    g = rep.data["normalized"]
    fvals = g.evaluate(*d.plane_coords())
    contact = rep.data["contact"]
    # the ladder stops once {f < -2 delta} is covered; contact never leaves {f <= -delta}
    assert ThinSet(d, fvals < -0.2).issubset(contact)
    assert contact.issubset(ThinSet(d, fvals <= -0.1 + 1e-8))


def test_subsets_monotone(subsets_report):
    w = subsets_report.data["fields"]
    assert {2, 4, 6} <= set(w)
    assert np.all(w[2].values <= w[4].values + 1e-7)
    assert np.all(w[4].values <= w[6].values + 1e-7)


def test_subsets_normalisation():
    big = radial_power(2, 2) * Fraction(1, 4) - 2  # {f <= 0} has radius 2 sqrt 2 and min f = -2
    rep = run_prop_subsets(big, 0.2, COARSE)
    norm = rep.inputs["normalization"]
    assert norm["divide_by"] == 2.0
    assert 2 * math.sqrt(2) - COARSE.h <= norm["rescale_by"] <= 2 * math.sqrt(2)
    assert rep.passed
    with pytest.raises(ClassPreconditionError):
        run_prop_subsets(big, 0.2, COARSE, normalize=False)


def test_subsets_rejects_delta():
    with pytest.raises(ValueError):
        run_prop_subsets(radial_power(2, 2) - 0.5, 0.6, COARSE)


# -- approximation of compact sets ------------------------------------------------------------------


def test_approx_single_point():
    rep = run_thm_approx(np.array([[0.0, 0.0]]), 0.2)
    assert rep.passed
    contact = rep.data["contact"]
    assert contact
    origin = ThinSet.from_function(contact.domain, lambda x, y: (x == 0) & (y == 0))
    assert hausdorff(contact, origin) <= 0.4


def test_approx_two_points_gives_two_components():
    rep = run_thm_approx(np.array([[-0.2, 0.0], [0.2, 0.0]]), 0.15)
    assert rep.passed
    assert len(connected_components(rep.data["contact"])) == 2


def test_approx_lshape(lshape_report):
    rep = lshape_report
    assert rep.passed and all_anchored(rep)
    log = rep.log
    assert log["fit_residual"] <= log["eta_bar"] / 4
    assert len(l_shape_points()) == 30


def test_approx_rejects_empty():
    with pytest.raises(ValueError):
        run_thm_approx(np.zeros((0, 2)), 0.2)


# -- named examples, determinism, suite --------------------------------------------------------------


def test_unknown_example():
    with pytest.raises(ValueError):
        run_named_example("nope")


def test_report_artifacts_exist(named, run_dir):
    rep = named("twoballs")
    for name in rep.artifacts:
        assert (run_dir / "twoballs" / name).exists()
    assert tio.read_pgm(run_dir / "twoballs" / "twoballs_contact.pgm").shape == (129, 129)


def test_report_serialises(named, tmp_path):
    path = tio.write_report(named("globk2"), tmp_path / "r.json")
    data = json.loads(path.read_text())
    assert data["passed"] is True and data["checks"][0]["anchor"] in CLAIMS


def test_small_property_suite():
    rep = run_property_suite(seed=3, n_oracle=20, n_pairs=5, n_poly=5)
    assert rep.passed and all_anchored(rep)
