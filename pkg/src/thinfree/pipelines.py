"""End-to-end constructions: build the obstacle, solve, extract sets, check predictions.

Every pipeline returns a :class:`PipelineReport`.  Each check in a report
names a claim from :data:`CLAIMS`, the predicted bound, and the measured
value; a report passes iff it has checks and all of them pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from . import io as tio
from .fitting import fit_distance_poly
from .polyalg import (
    Parity,
    Polynomial,
    format_poly,
    harmonic_extension,
    laplacian_poly,
    negativity_bounded,
    p2k_values,
    radial_power,
)
from .setgeom import (
    ThinSet,
    ball_raster,
    connected_components,
    convexity_check,
    distance_grid,
    eta_bar,
    extract_thin_sets,
    hausdorff,
    raster_boundary,
    star_shaped,
)
from .solver import (
    ObstacleProblemSpec,
    build_domain,
    discrete_laplacian,
    lcp_bruteforce,
    optimal_omega,
    residuals,
    solve_thin_obstacle,
)

__all__ = [
    "CLAIMS",
    "Check",
    "PipelineReport",
    "GridConfig",
    "PipelineError",
    "ClassPreconditionError",
    "NAMED_EXAMPLES",
    "rho_bar",
    "rho_bar_oracle",
    "run_compact_contact",
    "run_bounded_positivity",
    "run_prop_polysets",
    "run_prop_subsets",
    "run_thm_approx",
    "run_named_example",
    "run_property_suite",
    "random_small_spec",
    "oracle_gap",
    "comparison_gap",
    "worker_spread",
    "zero_level_raster",
    "l_shape_points",
]

CLAIMS = {
    "solver-convergence": "the projected sweep reached its update tolerance",
    "discrete-complementarity": "the discrete complementarity system holds to the solver tolerance",
    "contact-in-negativity": "contact forces the obstacle polynomial to be nonpositive",
    "contact-nonempty": "contact is nonempty exactly when the polynomial takes negative values",
    "nonnegative-solution": "the solution with obstacle -p is nonnegative",
    "far-field-decay": "the solution decays towards the truncated boundary",
    "ball-inclusions": "contact of |x'|^k - 1 lies between the balls of radius rho_bar(k, n) and 1",
    "disconnected-contact": "the double-well obstacle has disconnected contact",
    "contact-near-wells": "each contact component sits in a half-ball around a well",
    "nonconvex-contact": "the contact set is nonconvex",
    "annulus-hole": "the radial double-well obstacle has an annular contact component around the origin",
    "annulus-band": "contact lies in the band where the radial double-well obstacle is nonnegative",
    "star-shaped-contact": "contact of a homogeneous-minus-one obstacle is star-shaped at the origin",
    "zero-set-in-contact": "the zero set of f inside the unit ball is in contact",
    "contact-near-zero-set": "contact lies within eps of the zero set of f",
    "contact-in-dilated-ball": "contact lies in the ball of radius 1 / rho_bar(k, n)",
    "lower-barrier": "the solution lies above -|z| q",
    "upper-barrier": "the solution lies below -|z| q plus a multiple of the bump barrier",
    "hopf-constant": "the bump barrier has a negative normal derivative on its plateau",
    "bounded-positivity": "the positivity set is bounded",
    "positivity-contains-negativity": "the solution is positive where q < 0",
    "star-shaped-positivity": "the positivity set is star-shaped at the origin",
    "unit-bound": "every member of the ladder lies in [0, 1]",
    "fundamental-solution-bound": "ladder members decay like |x|^(1-n) near the truncated boundary",
    "monotone-sequence": "the ladder is nondecreasing in k",
    "inner-inclusion": "{f < -2 delta} is in contact for k large enough",
    "outer-inclusion": "contact lies in {f <= -delta}, hence in {f <= 0}",
    "fit-residual": "the fitted polynomial is within eta_bar / 4 of the distance function",
    "barrier-positivity": "the radial correction makes f positive outside the unit ball",
    "sublevel-sandwich": "the target lies in {f <= 0}, which lies in {d <= eta_bar}",
    "target-in-contact": "the target is contained in the contact set",
    "hausdorff-contact": "contact is within 2 eps of the target in Hausdorff distance",
    "hausdorff-free-boundary": "the free boundary is within 2 eps of the boundary of the target",
    "rho-closed-form": "rho_bar(2, 2) = 1 / sqrt(3)",
    "rho-oracle": "the closed form matches direct minimisation of the radial barrier",
    "rho-monotone": "rho_bar(k, 2) increases with k and stays below 1",
    "oracle-agreement": "projected SOR matches the direct complementarity solve",
    "comparison-principle": "ordered data give ordered solutions",
    "extension-harmonic": "harmonic extensions are harmonic and restrict correctly",
    "worker-independence": "red-black sweeps do not depend on the worker count",
}

INCLUSION_BUDGET = 0.08


class PipelineError(RuntimeError):
    """A pipeline could not finish; ``report`` holds what was measured so far."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ClassPreconditionError(ValueError):
    """The input polynomial is outside the class the construction needs."""


@dataclass(frozen=True)
class Check:
    description: str
    anchor: str
    relation: str
    predicted: object
    measured: object
    passed: bool

    @classmethod
    def at_most(cls, description, anchor, measured, bound):
        ok = measured is None or (measured <= bound)
        return cls(description, anchor, "<=", float(bound), _num(measured), bool(ok))

    @classmethod
    def at_least(cls, description, anchor, measured, bound):
        ok = measured is None or (measured >= bound)
        return cls(description, anchor, ">=", float(bound), _num(measured), bool(ok))

    @classmethod
    def holds(cls, description, anchor, flag):
        return cls(description, anchor, "==", True, bool(flag), bool(flag))

    def to_dict(self):
        return {
            "description": self.description,
            "anchor": self.anchor,
            "relation": self.relation,
            "predicted": self.predicted,
            "measured": self.measured,
            "passed": self.passed,
        }


def _num(x):
    if x is None:
        return None
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    return float(x)


@dataclass
class PipelineReport:
    name: str
    inputs: dict
    checks: list = field(default_factory=list)
    truncation_budget: float = 0.0
    artifacts: list = field(default_factory=list)
    log: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def passed(self):
        return bool(self.checks) and all(c.passed and c.anchor in CLAIMS for c in self.checks)

    def failed_checks(self):
        return [c for c in self.checks if not (c.passed and c.anchor in CLAIMS)]

    def check(self, anchor):
        """First check carrying ``anchor``."""
        for c in self.checks:
            if c.anchor == anchor:
                return c
        raise KeyError(anchor)

    def to_dict(self):
        return {
            "name": self.name,
            "passed": self.passed,
            "inputs": self.inputs,
            "truncation_budget": float(self.truncation_budget),
            "checks": [c.to_dict() for c in self.checks],
            "log": self.log,
            "artifacts": list(self.artifacts),
        }


@dataclass(frozen=True)
class GridConfig:
    """Grid and solver settings shared by the pipelines.

    ``omega=None`` picks :func:`optimal_omega`; ``tau_c=None`` uses
    ``100 * tol`` as the contact band.
    """

    L: float = 4.0
    h: float = 1 / 16
    n: int = 2
    omega: float | None = None
    tol: float = 1e-10
    tau_c: float | None = None
    sweep: str = "lexicographic"
    workers: int = 1

    def domain(self):
        return build_domain(self.n, self.L, self.h)

    def spec(self, domain, obstacle, boundary):
        omega = optimal_omega(domain) if self.omega is None else self.omega
        return ObstacleProblemSpec(domain, obstacle, boundary, omega=omega, tol=self.tol)

    def solve(self, spec, u0=None):
        return solve_thin_obstacle(spec, u0=u0, sweep=self.sweep, workers=self.workers)

    def band(self):
        return 100.0 * self.tol if self.tau_c is None else float(self.tau_c)

    def slack(self):
        return 10.0 * self.tol

    def as_dict(self):
        return {"n": self.n, "L": self.L, "h": self.h, "omega": self.omega, "tol": self.tol,
                "tau_c": self.band(), "sweep": self.sweep, "workers": self.workers}


NAMED_GRID = GridConfig(L=4.0, h=1 / 16)
POSITIVITY_GRID = GridConfig(L=6.0, h=6 / 64)
APPROX_GRID = GridConfig(L=2.0, h=1 / 32)


# ---------------------------------------------------------------------------
# The radius rho_bar(k, n)
# ---------------------------------------------------------------------------


def rho_bar(k, n):
    """Radius of the ball guaranteed in contact for ``|x'|^k - 1``."""
    if k < 2 or n < 2:
        raise ValueError("rho_bar needs k >= 2 and n >= 2")
    kap = k / (n - 1)
    first = kap ** (-1.0 / ((n - 1) * (kap + 1)))
    second = (kap ** (-kap / (kap + 1)) + kap ** (1.0 / (kap + 1))) ** (-1.0 / ((n - 1) * kap))
    return first * second


def _bracket(fn, lo, hi, grow):
    while fn(lo) > 0:
        lo /= grow
    while fn(hi) < 0:
        hi *= grow
    return lo, hi


def rho_bar_oracle(k, n):
    """Largest minimiser of ``g(r) = A r^(1-n) + t - 1 + r^k`` with ``min g = 0`` and ``t = 0``.

    For each ``A`` the minimiser solves ``g'(r) = 0``; ``A`` is then tuned
    until the minimum with ``t = 0`` touches zero.  Both roots are found by
    bracketing, independently of the closed form.
    """

    def argmin(A):
        dg = lambda r: -(n - 1) * A * r ** (-n) + k * r ** (k - 1)  # noqa: E731
        lo, hi = _bracket(dg, 1.0, 1.0, 2.0)
        return brentq(dg, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)

    def slack(A):
        r = argmin(A)
        return 1.0 - r**k - A * r ** (1 - n)

    lo, hi = 1e-3, 1.0
    while slack(hi) > 0:
        hi *= 2.0
    while slack(lo) < 0:
        lo /= 2.0
    A = brentq(slack, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return argmin(A)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _ring_mask(domain):
    """Unknown nodes with a face neighbour on the Dirichlet boundary."""
    b = domain.boundary_mask()
    grown = ndimage.binary_dilation(b, structure=ndimage.generate_binary_structure(domain.n + 1, 1))
    return grown & ~b


def _max_or_none(values):
    values = np.asarray(values)
    return float(values.max()) if values.size else None


def zero_level_raster(values):
    """Plane nodes on the zero level set of sampled values.

    A node qualifies if it vanishes, or if a 4-neighbour has the opposite sign
    and the node is the closer of the two to zero.
    """
    v = np.asarray(values, dtype=float)
    out = v == 0
    for ax in range(v.ndim):
        for s in (-1, 1):
            nb = np.roll(v, s, axis=ax)
            valid = np.ones(v.shape, dtype=bool)
            edge = [slice(None)] * v.ndim
            edge[ax] = 0 if s == 1 else -1
            valid[tuple(edge)] = False
            out |= valid & (np.sign(v) * np.sign(nb) < 0) & (np.abs(v) <= np.abs(nb))
    return out


def _emit(report, out_dir, sets=None, field=None, spec=None, overlay=None):
    if out_dir is None:
        return
    out = Path(out_dir)
    for label, s in (sets or {}).items():
        pgm = tio.write_pgm(s.mask, out / f"{report.name}_{label}.pgm", overlay=overlay)
        csvp = tio.write_thin_csv(s, out / f"{report.name}_{label}.csv")
        report.artifacts += [pgm.name, csvp.name]
    if field is not None:
        report.artifacts.append(tio.save_checkpoint(field, out / f"{report.name}_grid.bin").name)
        if spec is not None:
            report.artifacts.append(tio.write_plane_csv(field, spec, out / f"{report.name}_plane.csv").name)


def _solver_checks(field, spec, band, label=""):
    d = spec.domain
    res = residuals(field, spec, contact_tol=band)
    worst = max(res.harmonic, res.superharmonic, res.complementarity, res.boundary)
    return [
        Check.holds(f"{label}solver converged in {field.sweeps_used} sweeps", "solver-convergence", field.converged),
        Check.at_most(f"{label}max discrete residual", "discrete-complementarity", worst, 10 * spec.tol / d.h**2),
    ]


# ---------------------------------------------------------------------------
# Compact contact sets
# ---------------------------------------------------------------------------


def run_compact_contact(pbar, config=NAMED_GRID, name="compact-contact", out_dir=None, u0=None):
    """Solve with obstacle ``-p`` on the plane (``p`` the even extension of ``pbar``), boundary 0."""
    verdict = negativity_bounded(pbar)
    if not verdict.bounded:
        raise ClassPreconditionError(f"negativity set of {format_poly(pbar)} is not certified bounded ({verdict.status.value})")
    domain = config.domain()
    if pbar.dim != domain.n:
        raise ValueError(f"polynomial has {pbar.dim} variables, the plane has {domain.n}")
    even_ext = harmonic_extension(pbar, Parity.EVEN)
    pvals = even_ext.restrict_last().evaluate(*domain.plane_coords())
    spec = config.spec(domain, obstacle=-pvals, boundary=0.0)
    fld = config.solve(spec, u0)
    band = config.band()
    slack = config.slack()
    pair = extract_thin_sets(fld, spec, band)
    contact = pair.contact

    peak = max(0.0, float((-pvals).max()))
    budget = 2.0 * peak / domain.L
    report = PipelineReport(
        name=name,
        inputs={"polynomial": format_poly(pbar), "grid": config.as_dict()},
        truncation_budget=budget,
    )
    report.checks += _solver_checks(fld, spec, band)
    report.checks += [
        Check.at_most("max of p over the contact set", "contact-in-negativity",
                      _max_or_none(pvals[contact.mask]), band + slack),
        Check.holds("contact nonempty iff p takes negative values on the plane", "contact-nonempty",
                    bool(contact) == bool((pvals < 0).any())),
        Check.at_least("min of the solution", "nonnegative-solution", float(fld.values.min()), -slack),
        Check.at_most("max of the solution on the boundary ring", "far-field-decay",
                      float(np.abs(fld.values[_ring_mask(domain)]).max()), budget + slack),
    ]
    report.log.update({"radius_certificate": verdict.radius, "sweeps": fld.sweeps_used,
                       "contact_nodes": len(contact), "unclassified_nodes": len(pair.unclassified)})
    report.data.update(domain=domain, spec=spec, field=fld, contact=contact,
                       positivity=pair.positivity, plane_values=pvals, extension=even_ext)
    _emit(report, out_dir, {"contact": contact}, fld, spec)
    return report


def _globk(k, config, name, out_dir):
    pbar = radial_power(2, k) - 1
    report = run_compact_contact(pbar, config, name=name)
    d = report.data["domain"]
    contact = report.data["contact"]
    r = d.plane_radius()
    rb = rho_bar(k, 2)
    inner = rb - INCLUSION_BUDGET
    outer = 1.0 + INCLUSION_BUDGET
    free_r = r[~contact.mask]
    report.checks += [
        Check.at_least(f"radius of the largest ball in contact (rho_bar = {rb:.6f})", "ball-inclusions",
                       float(free_r.min()) if free_r.size else math.inf, inner),
        Check.at_most("largest radius in contact", "ball-inclusions", _max_or_none(r[contact.mask]), outer),
        Check.holds("contact is star-shaped at the origin", "star-shaped-contact",
                    bool(contact) and star_shaped(contact)),
    ]
    report.inputs.update(k=k, rho_bar=rb, inclusion_budget=INCLUSION_BUDGET)
    _emit(report, out_dir, {"contact": contact}, report.data["field"], report.data["spec"])
    return report


def _twoballs(config, name, out_dir):
    pbar = Polynomial(2, {(2, 0): 8}) + 8 * (Polynomial(2, {(0, 2): 1}) - 1) ** 2 - 1
    report = run_compact_contact(pbar, config, name=name)
    contact = report.data["contact"]
    comps = connected_components(contact)
    centers = {"+e2": np.array([0.0, 1.0]), "-e2": np.array([0.0, -1.0])}
    report.checks.append(Check.at_least("number of contact components", "disconnected-contact", len(comps), 2))
    report.checks.append(Check.at_most("number of contact components", "disconnected-contact", len(comps), 2))
    owners = []
    for i, comp in enumerate(comps):
        pts = comp.points()
        dist = {lab: float(np.max(np.maximum(np.linalg.norm(pts - c, axis=1) - 0.5, 0.0)))
                for lab, c in centers.items()}
        lab = min(dist, key=dist.get)
        owners.append(lab)
        report.checks.append(Check.at_most(f"component {i}: distance to the half-ball at {lab}",
                                           "contact-near-wells", dist[lab], 0.1))
    report.checks.append(Check.holds("one component per well", "contact-near-wells",
                                     sorted(owners) == sorted(centers)))
    if len(comps) >= 2:
        sep = min(cKDTree(a.points()).query(b.points())[0].min()
                  for i, a in enumerate(comps) for b in comps[i + 1:])
    else:
        sep = 0.0
    report.checks.append(Check.at_least("separation between components", "disconnected-contact", sep, 0.5))
    report.checks.append(Check.holds("contact is nonconvex", "nonconvex-contact",
                                     bool(contact) and not convexity_check(contact)))
    report.log["components"] = [len(c) for c in comps]
    _emit(report, out_dir, {"contact": contact}, report.data["field"], report.data["spec"])
    return report


def _has_hole_at_origin(comp):
    d = comp.domain
    outside, _ = ndimage.label(~comp.mask, structure=ndimage.generate_binary_structure(d.n, 1))
    lab = outside[d.origin_index()]
    if lab == 0:
        return False
    region = outside == lab
    border = np.zeros_like(region)
    for ax in range(d.n):
        idx = [slice(None)] * d.n
        idx[ax] = 0
        border[tuple(idx)] = True
        idx[ax] = -1
        border[tuple(idx)] = True
    return not np.any(region & border)


def _annulus(config, name, out_dir):
    r2 = radial_power(2, 2)
    pbar = 4 * (r2 - 1) ** 2 - 1
    report = run_compact_contact(pbar, config, name=name)
    d = report.data["domain"]
    contact = report.data["contact"]
    rr = d.plane_radius() ** 2
    holes = [i for i, c in enumerate(connected_components(contact)) if _has_hole_at_origin(c)]
    report.checks += [
        Check.holds("a contact component has a hole containing the origin", "annulus-hole", bool(holes)),
        Check.holds("origin is not in contact", "annulus-hole", not contact.mask[d.origin_index()]),
        Check.at_least("min |x'|^2 over contact", "annulus-band",
                       float(rr[contact.mask].min()) if contact else None, 0.5 - 0.05),
        Check.at_most("max |x'|^2 over contact", "annulus-band", _max_or_none(rr[contact.mask]), 1.5 + 0.05),
        Check.holds("contact is nonconvex", "nonconvex-contact", bool(contact) and not convexity_check(contact)),
    ]
    _emit(report, out_dir, {"contact": contact}, report.data["field"], report.data["spec"])
    return report


# ---------------------------------------------------------------------------
# Bounded positivity sets
# ---------------------------------------------------------------------------


def _bump(r, rho):
    taper = np.cos(0.5 * np.pi * (r - rho)) ** 2
    return np.where(r <= rho, 1.0, np.where(r < rho + 1.0, taper, 0.0))


def _is_homogeneous_minus_one(q):
    c0 = q.terms.get((0,) * q.dim, 0)
    rest = q - c0
    m = rest.degree()
    return c0 == -1 and m >= 2 and rest == rest.homogeneous_part(m)


def run_bounded_positivity(qbar, config=POSITIVITY_GRID, name="bounded-positivity", out_dir=None):
    """Solve with obstacle 0 and boundary data ``-|z| q``; bracket the solution with barriers."""
    verdict = negativity_bounded(qbar)
    if not verdict.bounded:
        raise ClassPreconditionError(f"negativity set of {format_poly(qbar)} is not certified bounded ({verdict.status.value})")
    domain = config.domain()
    if qbar.dim != domain.n:
        raise ValueError(f"polynomial has {qbar.dim} variables, the plane has {domain.n}")
    rho = max(1.0, float(verdict.radius))
    if rho + 1.0 >= domain.L:
        raise ClassPreconditionError(f"bump support radius {rho + 1.0:.3f} does not fit in the box of half-width {domain.L}")
    h = domain.h
    band = config.band()
    slack = config.slack()

    odd_ext = harmonic_extension(qbar, Parity.ODD)
    odd_vals = odd_ext.evaluate(*domain.grid_coords())
    spec = config.spec(domain, obstacle=0.0, boundary=-odd_vals)
    u = config.solve(spec)

    r = domain.plane_radius()
    bump_spec = config.spec(domain, obstacle=_bump(r, rho), boundary=0.0)
    barrier = config.solve(bump_spec)

    plateau = ball_raster(domain, radius=rho).mask & domain.plane_interior_mask()
    slopes = (barrier.values[..., 0] - barrier.values[..., 1]) / h
    c_rho = float(slopes[plateau].min())
    qbar_vals = qbar.evaluate(*domain.plane_coords())
    q_first = odd_vals[..., 1] / h  # q one layer above the plane
    q_floor = max(0.0, -float(min(qbar_vals.min(), q_first.min())))

    report = PipelineReport(
        name=name,
        inputs={"polynomial": format_poly(qbar), "grid": config.as_dict()},
    )
    report.checks += _solver_checks(u, spec, band)
    report.checks += _solver_checks(barrier, bump_spec, band, label="barrier: ")
    report.checks.append(Check.at_least("plateau slope of the barrier", "hopf-constant", c_rho, 0.0))
    if not c_rho > 0:
        raise PipelineError("barrier slope on the plateau is not positive", report)
    weight = q_floor / c_rho
    ring = _ring_mask(domain)
    budget = weight * min(1.0, (rho + 1.0) / (domain.L - h))
    report.truncation_budget = budget
    # the odd extension is harmonic but only discretely harmonic up to degree 3; the stencil
    # defect enters the comparison through psi = z (L - z) / 2, -L_h psi = 1
    defect = discrete_laplacian(odd_vals, domain)[..., 1:]
    stencil = float(np.nanmax(np.abs(defect))) * domain.L**2 / 8 if defect.size else 0.0

    gap_low = u.values + odd_vals
    gap_up = u.values + odd_vals - weight * barrier.values
    pair = extract_thin_sets(u, spec, band)
    pos = pair.positivity
    neg_nodes = qbar_vals < 0
    report.checks += [
        Check.at_least("min of u + |z| q", "lower-barrier", float(gap_low.min()), -slack - stencil),
        Check.at_most("max of u + |z| q - weight * barrier", "upper-barrier", float(gap_up.max()), slack + stencil),
        Check.at_most("largest radius of the positivity set", "bounded-positivity",
                      float(r[pos.mask].max()) if pos else 0.0, domain.L / 2),
        Check.at_most("nodes with q < 0 outside the positivity set", "positivity-contains-negativity",
                      int(np.sum(neg_nodes & ~pos.mask)), 0),
        Check.at_most("max |u + |z| q| on the boundary ring", "far-field-decay",
                      float(np.abs(gap_low[ring]).max()), budget + slack + stencil),
    ]
    if _is_homogeneous_minus_one(qbar) and pos:
        report.checks.append(Check.holds("positivity set star-shaped at the origin", "star-shaped-positivity",
                                         star_shaped(pos)))
    report.log.update({"rho": rho, "c_rho": c_rho, "q_floor": q_floor, "weight": weight, "stencil_allowance": stencil,
                       "sweeps": u.sweeps_used, "barrier_sweeps": barrier.sweeps_used,
                       "positivity_nodes": len(pos), "contact_nodes": len(pair.contact)})
    report.data.update(domain=domain, spec=spec, field=u, barrier=barrier, barrier_spec=bump_spec,
                       weight=weight, odd_extension=odd_ext, odd_values=odd_vals, positivity=pos, contact=pair.contact)
    _emit(report, out_dir, {"positivity": pos}, u, spec)
    return report


# ---------------------------------------------------------------------------
# Contact sets near zero sets of nonnegative polynomials
# ---------------------------------------------------------------------------


BETA_CAP = 2**20


def _choose_k(f, eps, variant, n):
    if variant == "fixed":
        m = f.degree()
        homogeneous = f == f.homogeneous_part(m)
        return m if homogeneous and m >= 2 and m % 2 == 0 else 2
    if variant == "large":
        k = 2
        while 1.0 / rho_bar(k, n) > 1.0 + eps:
            k += 2
        return k
    raise ValueError(f"unknown variant {variant!r} (use 'fixed' or 'large')")


def run_prop_polysets(f, eps, variant="fixed", config=NAMED_GRID, name="polysets", out_dir=None):
    """Contact set squeezed onto the zero set of ``f >= 0`` inside a dilated ball."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    domain = config.domain()
    n = domain.n
    coords = domain.plane_coords()
    fvals = f.evaluate(*coords)
    scale = 1.0 + f.max_abs_coef()
    if fvals.min() < -1e-12 * scale:
        raise ClassPreconditionError("f takes negative values on the plane raster")
    zero = fvals <= 1e-12 * scale
    if not zero.any():
        raise ClassPreconditionError("the zero set of f misses every grid node")

    k = _choose_k(f, eps, variant, n)
    rb = rho_bar(k, n)
    # dilated so that the ball contact of |x'|^k - 1 covers the unit ball
    base = radial_power(n, k).scale_variables([rb] * n) - 1
    base_vals = base.evaluate(*coords)
    zero_pts = ThinSet(domain, zero).points()
    dist = distance_grid(zero_pts, domain)
    far = dist > eps
    band = config.band()

    beta = 1
    ladder = []
    while True:
        s = base_vals + beta * fvals
        blocking = far & (s <= band)
        ladder.append({"beta": beta, "blocking_nodes": int(blocking.sum())})
        if not blocking.any():
            break
        beta *= 2
        if beta > BETA_CAP:
            where = ThinSet(domain, blocking).points()[:5].tolist()
            raise PipelineError(f"beta exceeded {BETA_CAP}; {int(blocking.sum())} nodes stay nonpositive, e.g. {where}")

    sbar = base + beta * f
    report = run_compact_contact(sbar, config, name=name)
    contact = report.data["contact"]
    r = domain.plane_radius()
    core = zero & (r <= 1.0)
    report.checks += [
        Check.at_most("zero-set nodes in the unit ball missing from contact", "zero-set-in-contact",
                      int(np.sum(core & ~contact.mask)), 0),
        Check.at_most("max distance from contact to the zero set", "contact-near-zero-set",
                      _max_or_none(dist[contact.mask]), eps),
        Check.at_most("largest radius in contact", "contact-in-dilated-ball",
                      _max_or_none(r[contact.mask]), 1.0 / rb + domain.h),
    ]
    report.inputs.update(f=format_poly(f), eps=eps, variant=variant, k=k, rho_bar=rb, beta=beta)
    report.log["beta_ladder"] = ladder
    report.data.update(f_values=fvals, zero_mask=zero, zero_distance=dist)
    return report


def _starshaped(config, name, out_dir):
    f = Polynomial(2, {(2, 2): 1})
    report = run_prop_polysets(f, 0.15, "fixed", config, name=name)
    contact = report.data["contact"]
    report.checks += [
        Check.holds("contact star-shaped at the origin", "star-shaped-contact", bool(contact) and star_shaped(contact)),
        Check.holds("contact is nonconvex", "nonconvex-contact", bool(contact) and not convexity_check(contact)),
    ]
    overlay = report.data["zero_mask"] & ball_raster(report.data["domain"], radius=1.0).mask
    _emit(report, out_dir, {"contact": contact}, report.data["field"], report.data["spec"], overlay=overlay)
    return report


# ---------------------------------------------------------------------------
# Sublevel sets through the p_2k ladder
# ---------------------------------------------------------------------------


K_LADDER = tuple(range(2, 65, 2))


def _normalize(f, fvals, domain):
    """Multiply and rescale so that ``f >= -1`` and ``{f <= 0}`` lies in the unit ball (on the raster)."""
    factor = max(1.0, -float(fvals.min()))
    r = domain.plane_radius()
    nonpos = fvals <= 0
    radius = max(1.0, float(r[nonpos].max())) if nonpos.any() else 1.0
    g = f * (1.0 / factor) if factor > 1 else f
    if radius > 1:
        g = g.scale_variables([radius] * f.dim)
    return g, factor, radius


def run_prop_subsets(f, delta, config=NAMED_GRID, name="subsets", out_dir=None, k_ladder=K_LADDER,
                     k_min=6, normalize=True, keep_fields=False):
    """Raise ``k`` until ``{f < -2 delta}`` is in contact of the solution with obstacle ``p_2k(f)``."""
    if not 0 < delta <= 0.5:
        raise ValueError("delta must lie in (0, 1/2]")
    verdict = negativity_bounded(f)
    if not verdict.bounded:
        raise ClassPreconditionError(f"negativity set of {format_poly(f)} is not certified bounded ({verdict.status.value})")
    domain = config.domain()
    coords = domain.plane_coords()
    fvals = f.evaluate(*coords)
    g, factor, radius = _normalize(f, fvals, domain)
    if (factor, radius) != (1.0, 1.0):
        if not normalize:
            raise ClassPreconditionError("f must satisfy f >= -1 with {f <= 0} inside the unit ball")
        fvals = g.evaluate(*coords)
    band = config.band()
    slack = config.slack()
    ring = _ring_mask(domain)
    target = fvals < -2 * delta

    report = PipelineReport(
        name=name,
        inputs={"f": format_poly(f), "delta": delta, "grid": config.as_dict(),
                "normalization": {"divide_by": factor, "rescale_by": radius}},
        truncation_budget=2.0 / domain.L,
    )
    rungs = []
    fields = {}
    prev = None
    covered = False
    worst_top = worst_ring = -math.inf
    worst_mono = worst_low = math.inf
    for k in k_ladder:
        spec = config.spec(domain, obstacle=p2k_values(fvals, delta, k), boundary=0.0)
        w = config.solve(spec, u0=prev)
        contact = extract_thin_sets(w, spec, band).contact
        top = float(w.values.max())
        edge = float(w.values[ring].max())
        mono = float((w.values - prev.values).min()) if prev is not None else None
        covered = not np.any(target & ~contact.mask)
        rungs.append({"k": k, "sweeps": w.sweeps_used, "converged": w.converged, "max": top,
                      "ring_max": edge, "monotone_defect": mono, "contact_nodes": len(contact),
                      "target_covered": covered})
        worst_top, worst_ring = max(worst_top, top), max(worst_ring, edge)
        worst_low = min(worst_low, float(w.values.min()))
        if mono is not None:
            worst_mono = min(worst_mono, mono)
        if keep_fields:
            fields[k] = w
        if not w.converged:
            break
        prev = w
        if covered and k >= k_min:
            break

    report.checks += _solver_checks(w, spec, band)
    report.checks += [
        Check.holds("every rung converged", "solver-convergence", all(rg["converged"] for rg in rungs)),
        Check.at_most("max of w_k over all rungs", "unit-bound", worst_top, 1.0 + slack),
        Check.at_least("min of w_k over all rungs", "unit-bound", worst_low, -slack),
        Check.at_most("max of w_k on the boundary ring", "fundamental-solution-bound", worst_ring, 2.0 / domain.L + slack),
        Check.at_least("min over rungs of w_k - w_(k-2)", "monotone-sequence",
                       worst_mono if len(rungs) > 1 else None, -slack),
        Check.holds("{f < -2 delta} covered by contact before the ladder ran out", "inner-inclusion", covered),
        Check.at_most("max of f over contact", "outer-inclusion", _max_or_none(fvals[contact.mask]), -delta + band),
    ]
    report.log.update({"rungs": rungs, "status": "covered" if covered else "inconclusive",
                       "final_k": rungs[-1]["k"]})
    report.data.update(domain=domain, spec=spec, field=w, contact=contact, f_values=fvals,
                       fields=fields, normalized=g, target=target)
    _emit(report, out_dir, {"contact": contact}, w, spec)
    return report


# ---------------------------------------------------------------------------
# Approximating a compact set
# ---------------------------------------------------------------------------


FIT_DEGREES = (2, 4, 6, 8, 10, 12, 14)


def _snap(points, domain):
    idx = np.rint((np.asarray(points) + domain.L) / domain.h).astype(int)
    idx = np.clip(idx, 0, domain.dims[0] - 1)
    mask = np.zeros(domain.thin_shape, dtype=bool)
    mask[tuple(idx.T)] = True
    return ThinSet(domain, mask)


def run_thm_approx(points, eps, config=APPROX_GRID, name="approx", out_dir=None, degrees=FIT_DEGREES, kf_max=64):
    """Contact set within ``2 eps`` in Hausdorff distance of the finite set ``points``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.size == 0:
        raise ValueError("points must be nonempty")
    if not eps > 0:
        raise ValueError("eps must be positive")
    domain = config.domain()
    n = domain.n
    if points.shape[1] != n:
        raise ValueError(f"points must have dimension {n}")
    extent = float(np.linalg.norm(points, axis=1).max())
    shrink = 0.25 / extent if extent > 0.25 else 1.0
    points = points * shrink
    eps_s = eps * shrink

    coords = domain.plane_coords()
    r = domain.plane_radius()
    dist = distance_grid(points, domain)
    unit = ball_raster(domain, radius=1.0)
    pts = unit.points()
    dvals = dist[unit.mask]
    eb = eta_bar(pts, dvals, eps_s, zero_set=points)
    target = eb.value / 4

    report = PipelineReport(
        name=name,
        inputs={"points": points.tolist(), "eps": eps, "grid": config.as_dict(), "rescale": shrink},
    )
    fits = []
    fit = None
    for deg in degrees:
        for method in ("lstsq", "minimax"):
            res = fit_distance_poly((pts, dvals), deg, method=method)
            fits.append({"degree": deg, "method": method, "used_degree": res.degree, "residual": res.residual})
            if res.residual <= target:
                fit = res
                break
        if fit is not None:
            break
    report.log.update({"eta_bar": eb.value, "eta_bar_fallback": eb.fallback, "fit_ladder": fits})
    if fit is None:
        report.checks.append(Check.at_most("best fit residual", "fit-residual", min(f["residual"] for f in fits), target))
        raise PipelineError("fit-degree ladder exhausted before reaching eta_bar / 4", report)
    report.checks.append(Check.at_most("fit residual on the unit-ball raster", "fit-residual", fit.residual, target))

    p = fit.polynomial
    outside = r > 1.0
    half = r <= 0.5
    kf = None
    # the radial term must dominate p at infinity, not only on the grid
    for j in range(p.degree() // 2 + 1, kf_max + 1):
        fbar = p + radial_power(n, 2 * j) * (Fraction(9, 4) ** j)
        fb = fbar.evaluate(*coords)
        if (fb[outside].min() > 0 and np.abs(fb[half] - dist[half]).max() <= eb.value / 3
                and negativity_bounded(fbar - 2 * eb.value / 3).bounded):
            kf = j
            break
    if kf is None:
        raise PipelineError("no radial correction made f positive outside the unit ball", report)
    f = fbar - 2 * eb.value / 3
    fv = f.evaluate(*coords)
    report.checks += [
        Check.at_least("min of f outside the unit ball", "barrier-positivity", float(fv[outside].min()), -2 * eb.value / 3),
        Check.at_most("max of f over the target points", "sublevel-sandwich", float(f.evaluate(*points.T).max()), 0.0),
        Check.at_most("max of d over {f <= 0}", "sublevel-sandwich", _max_or_none(dist[fv <= 0]), eb.value),
    ]

    inner = ball_raster(domain, radius=1.0).mask
    eb_f = eta_bar(np.stack([c[inner] for c in coords], axis=1), fv[inner], eps_s)
    dt = eb_f.value / 2
    shifted = f - 2 * dt
    sub = run_prop_subsets(shifted, dt / 2, config, name=f"{name}-subsets", normalize=False)
    report.checks += sub.checks

    contact = sub.data["contact"]
    kr = _snap(points, domain)
    gamma = raster_boundary(contact) if contact else contact
    dK = raster_boundary(kr)
    try:
        h_contact = hausdorff(contact, kr)
        h_boundary = hausdorff(gamma, dK)
    except ValueError:
        h_contact = h_boundary = math.inf
    report.checks += [
        Check.at_most("target raster nodes outside contact", "target-in-contact", int(np.sum(kr.mask & ~contact.mask)), 0),
        Check.at_most("Hausdorff distance from contact to the target", "hausdorff-contact", h_contact, 2 * eps_s),
        Check.at_most("Hausdorff distance from the free boundary to the boundary of the target",
                      "hausdorff-free-boundary", h_boundary, 2 * eps_s),
    ]
    report.truncation_budget = sub.truncation_budget
    report.log.update({"fit_degree": fit.degree, "fit_method": fit.method, "fit_residual": fit.residual,
                       "radial_k": kf, "eta_bar_f": eb_f.value, "delta": dt,
                       "subsets": sub.log, "contact_components": len(connected_components(contact))})
    report.data.update(domain=domain, contact=contact, free_boundary=gamma, target_raster=kr, points=points,
                       distance=dist, f=f, field=sub.data["field"], spec=sub.data["spec"])
    _emit(report, out_dir, {"contact": contact}, sub.data["field"], sub.data["spec"], overlay=kr.mask)
    return report


# ---------------------------------------------------------------------------
# Named examples
# ---------------------------------------------------------------------------


def _cubicq(config, name, out_dir):
    return run_bounded_positivity(radial_power(2, 2) - 1, config, name=name, out_dir=out_dir)


NAMED_EXAMPLES = {
    "twoballs": (_twoballs, NAMED_GRID),
    "annulus": (_annulus, NAMED_GRID),
    "starshaped": (_starshaped, NAMED_GRID),
    "globk2": (lambda c, nm, o: _globk(2, c, nm, o), NAMED_GRID),
    "globk8": (lambda c, nm, o: _globk(8, c, nm, o), NAMED_GRID),
    "cubicq": (_cubicq, POSITIVITY_GRID),
}


def run_named_example(name, config=None, out_dir=None):
    """Run one of the pinned examples; ``config`` overrides the pinned grid."""
    if name not in NAMED_EXAMPLES:
        raise ValueError(f"unknown example {name!r}; choose from {sorted(NAMED_EXAMPLES)}")
    fn, pinned = NAMED_EXAMPLES[name]
    return fn(config or pinned, name, out_dir)


# ---------------------------------------------------------------------------
# Randomised property suite
# ---------------------------------------------------------------------------


def random_small_spec(rng, tol=1e-12):
    """A random spec with at most 25 plane nodes."""
    n = int(rng.integers(1, 3))
    m = int(rng.integers(1, 3)) if n == 2 else int(rng.integers(1, 13))
    h = float(rng.choice([0.25, 0.5, 1.0]))
    domain = build_domain(n, m * h, h)
    obstacle = rng.uniform(-1.0, 1.0, domain.thin_shape)
    boundary = rng.uniform(-0.5, 0.5, domain.dims)
    return ObstacleProblemSpec(domain, obstacle, boundary, omega=optimal_omega(domain), tol=tol)


def oracle_gap(spec):
    """Max-norm difference between projected SOR and the direct solve."""
    return float(np.abs(solve_thin_obstacle(spec).values - lcp_bruteforce(spec).values).max())


def comparison_gap(rng, tol=1e-10):
    """Solve an ordered pair of random specs; returns ``max(u1 - u2)``."""
    s1 = random_small_spec(rng, tol=tol)
    d = s1.domain
    s2 = s1.replace(obstacle=s1.obstacle + rng.uniform(0.0, 0.5, d.thin_shape),
                    boundary=s1.boundary + rng.uniform(0.0, 0.5, d.dims))
    u1 = solve_thin_obstacle(s1).values
    u2 = solve_thin_obstacle(s2).values
    return float((u1 - u2).max())


def worker_spread(spec, workers=(1, 2, 3)):
    """Max difference between red-black solves run with different worker counts."""
    sols = [solve_thin_obstacle(spec, sweep="redblack", workers=w).values for w in workers]
    return float(max(np.abs(s - sols[0]).max() for s in sols[1:]))


def _random_poly(rng, dim, degree):
    from .polyalg import monomial_exponents

    terms = {e: int(rng.integers(-5, 6)) for e in monomial_exponents(dim, degree) if rng.random() < 0.5}
    return Polynomial(dim, terms)


def run_property_suite(seed=0, n_oracle=200, n_pairs=50, n_poly=20):
    """The randomised properties behind the solver, extension and radius claims."""
    rng = np.random.default_rng(seed)
    report = PipelineReport(name="verify", inputs={"seed": seed, "n_oracle": n_oracle, "n_pairs": n_pairs,
                                                   "n_poly": n_poly})
    gaps = [oracle_gap(random_small_spec(rng)) for _ in range(n_oracle)]
    report.checks.append(Check.at_most(f"max PSOR/oracle gap over {n_oracle} specs", "oracle-agreement",
                                       max(gaps, default=0.0), 1e-8))
    pairs = [comparison_gap(rng) for _ in range(n_pairs)]
    report.checks.append(Check.at_most(f"max of u1 - u2 over {n_pairs} ordered pairs", "comparison-principle",
                                       max(pairs, default=0.0), 1e-7))

    bad = 0
    for _ in range(n_poly):
        pbar = _random_poly(rng, 2, int(rng.integers(0, 7)))
        for parity in Parity:
            ext = harmonic_extension(pbar, parity)
            restricted = ext.restrict_last() if parity is Parity.EVEN else ext.derivative(2).restrict_last()
            if not (laplacian_poly(ext).is_zero() and restricted == pbar):
                bad += 1
    report.checks.append(Check.at_most("harmonic extensions failing the exact checks", "extension-harmonic", bad, 0))

    report.checks.append(Check.at_most("|rho_bar(2, 2) - 1/sqrt(3)|", "rho-closed-form",
                                       abs(rho_bar(2, 2) - 1 / math.sqrt(3)), 1e-9))
    rho_gap = max(abs(rho_bar(k, n) - rho_bar_oracle(k, n)) for k in range(2, 17) for n in (2, 3, 4))
    report.checks.append(Check.at_most("max closed-form/oracle gap, k <= 16, n <= 4", "rho-oracle", rho_gap, 1e-10))
    seq = [rho_bar(k, 2) for k in range(2, 17)]
    report.checks.append(Check.holds("rho_bar(k, 2) strictly increasing and below 1", "rho-monotone",
                                     all(a < b for a, b in zip(seq, seq[1:])) and seq[-1] < 1))

    domain = build_domain(2, 1.0, 1 / 8)
    X, Y = domain.plane_coords()
    spec = ObstacleProblemSpec(domain, 0.5 - 2 * (X**2 + Y**2), 0.0, omega=optimal_omega(domain), tol=1e-12)
    report.checks.append(Check.at_most("red-black spread over 1, 2, 3 workers", "worker-independence",
                                       worker_spread(spec), 1e-10))
    report.log.update({"oracle_gaps_max": max(gaps, default=0.0), "comparison_max": max(pairs, default=0.0),
                       "rho_oracle_gap": rho_gap})
    return report


def l_shape_points(count=30, arm=0.3, corner=(-0.15, -0.15)):
    """An L-shaped cloud of ``count`` points inside the ball of radius 1/4."""
    cx, cy = corner
    horiz = count // 2 + 1
    xs = np.linspace(cx, cx + arm, horiz)
    ys = np.linspace(cy, cy + arm, count - horiz + 1)[1:]
    return np.vstack([np.c_[xs, np.full(horiz, cy)], np.c_[np.full(len(ys), cx), ys]])
