"""Sparse multivariate polynomials.

A :class:`Polynomial` is an immutable map from exponent tuples to nonzero
coefficients.  Integer and :class:`fractions.Fraction` coefficients stay exact
under ``+``, ``-``, ``*`` and the symbolic operators (Laplacian, harmonic
extension); float coefficients fall back to double precision.  Variables are
named ``x1 .. x<dim>``; in ``dim = n + 1`` the last variable plays the role of
the normal coordinate.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from fractions import Fraction
from numbers import Number, Rational

import numpy as np

__all__ = [
    "Polynomial",
    "PolynomialSyntaxError",
    "Parity",
    "ClassVerdict",
    "Verdict",
    "format_poly",
    "parse_poly",
    "eval_poly",
    "laplacian_poly",
    "harmonic_extension",
    "negativity_bounded",
    "build_p2k",
    "p2k_values",
    "radial_power",
    "monomial_exponents",
]

ZERO_RTOL = 1e-9


def _clean(c):
    # Fractions with unit denominator collapse to int so the integer fast path
    # survives round trips through rational arithmetic.
    if isinstance(c, Fraction) and c.denominator == 1:
        return int(c.numerator)
    return c


class Polynomial:
    """Polynomial in ``dim`` variables with a canonical, zero-free term map."""

    __slots__ = ("dim", "_terms")

    def __init__(self, dim, terms=None):
        dim = int(dim)
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        merged = {}
        for exps, c in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != dim:
                raise ValueError(f"exponent {exps} does not have length {dim}")
            if any(e < 0 for e in exps):
                raise ValueError(f"negative exponent in {exps}")
            merged[exps] = merged.get(exps, 0) + c
        self.dim = dim
        self._terms = {e: _clean(c) for e, c in sorted(merged.items()) if c != 0}

    # -- construction helpers -------------------------------------------------
    @classmethod
    def constant(cls, dim, c):
        return cls(dim, {(0,) * dim: c})

    @classmethod
    def variable(cls, dim, index):
        """The coordinate ``x<index+1>`` (``index`` is zero based)."""
        if not 0 <= index < dim:
            raise ValueError(f"variable index {index} out of range for dim {dim}")
        e = [0] * dim
        e[index] = 1
        return cls(dim, {tuple(e): 1})

    @property
    def terms(self):
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self):
        return len(self._terms)

    def degree(self):
        return max((sum(e) for e in self._terms), default=0)

    def is_constant(self):
        return all(sum(e) == 0 for e in self._terms)

    def max_abs_coef(self):
        return max((abs(float(c)) for c in self._terms.values()), default=0.0)

    def is_zero(self, scale=None):
        """Zero test with tolerance ``1e-9 * (1 + scale)``.

        ``scale`` defaults to this polynomial's own largest coefficient.  For
        exact coefficients the test is exact.
        """
        if not self._terms:
            return True
        if all(isinstance(c, Rational) for c in self._terms.values()):
            return False
        if scale is None:
            scale = self.max_abs_coef()
        return self.max_abs_coef() <= ZERO_RTOL * (1.0 + scale)

    def homogeneous_part(self, d):
        return Polynomial(self.dim, {e: c for e, c in self._terms.items() if sum(e) == d})

    # -- arithmetic -----------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Polynomial):
            if other.dim != self.dim:
                raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")
            return other
        if isinstance(other, Number):
            return Polynomial.constant(self.dim, other)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for e, c in other._terms.items():
            out[e] = out.get(e, 0) + c
        return Polynomial(self.dim, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.dim, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0) + c1 * c2
        return Polynomial(self.dim, out)

    __rmul__ = __mul__

    def __pow__(self, k):
        if not isinstance(k, int) or k < 0:
            raise ValueError("only nonnegative integer powers are supported")
        result = Polynomial.constant(self.dim, 1)
        base = self
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    def __eq__(self, other):
        if isinstance(other, Number):
            other = Polynomial.constant(self.dim, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.dim == other.dim and self._terms == other._terms

    def __hash__(self):
        return hash((self.dim, tuple(self._terms.items())))

    def allclose(self, other, rtol=ZERO_RTOL):
        """Coefficientwise equality up to the symbolic zero tolerance."""
        diff = self - other
        scale = max(self.max_abs_coef(), other.max_abs_coef())
        return diff.is_zero(scale=scale) or diff.max_abs_coef() <= rtol * (1.0 + scale)

    # -- calculus and substitutions -------------------------------------------
    def derivative(self, i):
        out = {}
        for e, c in self._terms.items():
            if e[i]:
                ne = list(e)
                ne[i] -= 1
                out[tuple(ne)] = c * e[i]
        return Polynomial(self.dim, out)

    def scale_variables(self, factors):
        """Return ``x -> p(factors * x)`` (componentwise)."""
        factors = list(factors)
        if len(factors) != self.dim:
            raise ValueError("one factor per variable required")
        out = {}
        for e, c in self._terms.items():
            m = c
            for f, k in zip(factors, e):
                if k:
                    m = m * f**k
            out[e] = m
        return Polynomial(self.dim, out)

    def restrict_last(self):
        """Set the last variable to zero and drop it."""
        if self.dim < 2:
            raise ValueError("cannot drop the only variable")
        return Polynomial(self.dim - 1, {e[:-1]: c for e, c in self._terms.items() if e[-1] == 0})

    def embed(self, dim):
        """View this polynomial as one in ``dim >= self.dim`` variables."""
        pad = (0,) * (dim - self.dim)
        return Polynomial(dim, {e + pad: c for e, c in self._terms.items()})

    def flip_last(self):
        """``x_last -> -x_last``."""
        return Polynomial(
            self.dim, {e: (-c if e[-1] % 2 else c) for e, c in self._terms.items()}
        )

    # -- evaluation -----------------------------------------------------------
    def __call__(self, *x):
        if len(x) == 1 and not isinstance(x[0], Number):
            x = tuple(x[0])
        return eval_poly(self, x)

    def evaluate(self, *coords):
        """Vectorised float evaluation; ``coords`` are broadcastable arrays."""
        if len(coords) != self.dim:
            raise ValueError(f"expected {self.dim} coordinate arrays, got {len(coords)}")
        coords = [np.asarray(c, dtype=float) for c in coords]
        shape = np.broadcast_shapes(*(c.shape for c in coords))
        out = np.zeros(shape)
        powers = [{} for _ in coords]
        for e, c in self._terms.items():
            term = np.full(shape, float(c))
            for i, k in enumerate(e):
                if k:
                    if k not in powers[i]:
                        powers[i][k] = coords[i] ** k
                    term = term * powers[i][k]
            out = out + term
        return out

    # -- printing -------------------------------------------------------------
    def __str__(self):
        return format_poly(self)

    def __repr__(self):
        return f"Polynomial(dim={self.dim}, '{format_poly(self)}')"


# ---------------------------------------------------------------------------
# Text grammar
# ---------------------------------------------------------------------------


class PolynomialSyntaxError(ValueError):
    def __init__(self, message, position):
        super().__init__(f"{message} at position {position}")
        self.position = position


_TOKEN = re.compile(r"\s*(?:(?P<num>\d+(?:\.\d*)?|\.\d+)|(?P<var>x\d+)|(?P<op>[-+*^()]))")


def _tokenize(text):
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            start = len(text) - len(text[pos:].lstrip())
            raise PolynomialSyntaxError(f"unexpected character {text[start]!r}", start)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, dim):
        self.tokens = _tokenize(text)
        self.i = 0
        self.dim = dim

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value:
            raise PolynomialSyntaxError(f"expected {value!r}, found {val or 'end of input'!r}", pos)

    def parse(self):
        p = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise PolynomialSyntaxError(f"unexpected token {val!r}", pos)
        return p

    def expr(self):
        # A leading sign is accepted so printed output always parses back.
        sign = 1
        if self.peek()[1] in "+-" and self.peek()[0] == "op":
            sign = -1 if self.take()[1] == "-" else 1
        p = self.term() * sign
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            t = self.term()
            p = p + t if op == "+" else p - t
        return p

    def term(self):
        p = self.factor()
        while self.peek()[1] == "*" and self.peek()[0] == "op":
            self.take()
            p = p * self.factor()
        return p

    def factor(self):
        kind, val, pos = self.take()
        if kind == "num":
            p = Polynomial.constant(self.dim, _clean(Fraction(val)) if "." in val else int(val))
        elif kind == "var":
            idx = int(val[1:])
            if not 1 <= idx <= self.dim:
                raise PolynomialSyntaxError(f"variable {val} out of range for dim {self.dim}", pos)
            p = Polynomial.variable(self.dim, idx - 1)
        elif val == "(":
            p = self.expr()
            self.expect(")")
        else:
            raise PolynomialSyntaxError(f"unexpected token {val or 'end of input'!r}", pos)
        while self.peek()[1] == "^" and self.peek()[0] == "op":
            self.take()
            kind, val, pos = self.take()
            if kind != "num" or not val.isdigit():
                raise PolynomialSyntaxError("exponent must be a nonnegative integer", pos)
            p = p ** int(val)
        return p


def parse_poly(text, dim):
    """Parse ``text`` into a :class:`Polynomial` in ``dim`` variables.

    Decimal literals are read as exact rationals (``0.5`` becomes ``1/2``).

    >>> parse_poly("x1^2*x2^2", 2).terms
    {(2, 2): 1}
    """
    if int(dim) < 1:
        raise ValueError("dim must be positive")
    return _Parser(text, int(dim)).parse()


def _format_coef(c):
    if isinstance(c, int):
        return str(c)
    if isinstance(c, Fraction):
        d = c.denominator
        while d % 2 == 0:
            d //= 2
        while d % 5 == 0:
            d //= 5
        if d == 1:
            # terminating decimal: print it exactly
            s = format(Decimal(c.numerator) / Decimal(c.denominator), "f")
            return s
        c = float(c)
    return format(Decimal(repr(float(c))), "f")


def format_poly(p):
    if not p._terms:
        return "0"
    parts = []
    for e, c in p._terms.items():
        neg = c < 0
        mag = _format_coef(-c if neg else c)
        factors = [f"x{i + 1}" + (f"^{k}" if k > 1 else "") for i, k in enumerate(e) if k]
        if factors and mag == "1":
            body = "*".join(factors)
        else:
            body = "*".join([mag] + factors)
        if not parts:
            parts.append(("-" if neg else "") + body)
        else:
            parts.append(("- " if neg else "+ ") + body)
    return " ".join(parts)


# ---------------------------------------------------------------------------
# Core operations
# ---------------------------------------------------------------------------


def eval_poly(p, x):
    """Evaluate ``p`` at a point; exact for integer/rational inputs and data."""
    x = tuple(x)
    if len(x) != p.dim:
        raise ValueError(f"point has dimension {len(x)}, polynomial has {p.dim}")
    total = 0
    for e, c in p.items():
        m = c
        for xi, k in zip(x, e):
            if k:
                m = m * xi**k
        total = total + m
    return total


def laplacian_poly(p):
    out = Polynomial(p.dim)
    for i in range(p.dim):
        out = out + p.derivative(i).derivative(i)
    return out


class Parity(str, Enum):
    EVEN = "even"
    ODD = "odd"


def harmonic_extension(pbar, parity=Parity.EVEN):
    """Extend ``pbar`` on R^n to a harmonic polynomial on R^(n+1).

    Even: ``sum_j (-1)^j z^(2j) / (2j)! * L^j pbar`` restricts to ``pbar`` at
    ``z = 0``.  Odd: ``sum_j (-1)^j z^(2j+1) / (2j+1)! * L^j pbar`` has normal
    derivative ``pbar`` at ``z = 0``.  Here ``L`` is the Laplacian in the
    first ``n`` variables.
    """
    parity = Parity(parity)
    n = pbar.dim
    shift = 0 if parity is Parity.EVEN else 1
    out = Polynomial(n + 1)
    lap = pbar
    j = 0
    while len(lap):
        power = 2 * j + shift
        coef = Fraction((-1) ** j, math.factorial(power))
        lifted = {e + (power,): c * coef for e, c in lap.items()}
        out = out + Polynomial(n + 1, lifted)
        lap = laplacian_poly(lap)
        j += 1
    return out


def monomial_exponents(dim, degree):
    """All exponent tuples of total degree ``<= degree`` in lexicographic order."""
    out = []

    def rec(prefix, remaining, slots):
        if slots == 0:
            out.append(tuple(prefix))
            return
        for k in range(remaining + 1):
            rec(prefix + [k], remaining - k, slots - 1)

    rec([], degree, dim)
    return sorted(out)


def radial_power(dim, k):
    """``|x|^k`` for even ``k`` as a polynomial."""
    if k % 2:
        raise ValueError("|x|^k is a polynomial only for even k")
    r2 = Polynomial(dim)
    for i in range(dim):
        r2 = r2 + Polynomial.variable(dim, i) ** 2
    return r2 ** (k // 2)


# ---------------------------------------------------------------------------
# Negativity-set classification
# ---------------------------------------------------------------------------


class Verdict(str, Enum):
    BOUNDED = "Bounded"
    UNBOUNDED = "Unbounded"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class ClassVerdict:
    status: Verdict
    witness: tuple | None = None
    radius: float | None = None

    @property
    def bounded(self):
        return self.status is Verdict.BOUNDED


def _sphere_sample(dim, budget):
    if dim == 1:
        return np.array([[1.0], [-1.0]]), 0.0
    if dim == 2:
        theta = 2 * np.pi * np.arange(budget) / budget
        # chord half-gap bounds the distance from any direction to the sample
        return np.c_[np.cos(theta), np.sin(theta)], 2 * np.sin(np.pi / (2 * budget))
    if dim == 3:
        i = np.arange(budget) + 0.5
        z = 1 - 2 * i / budget
        r = np.sqrt(1 - z**2)
        phi = np.pi * (1 + 5**0.5) * i
        pts = np.c_[r * np.cos(phi), r * np.sin(phi), z]
        # generous covering radius for the Fibonacci lattice
        return pts, 3.0 * np.sqrt(4 * np.pi / budget)
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((budget, dim))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True), np.inf


def _weight_candidates(dim, top=4):
    """Integer gradings, the standard one first, then by size."""
    out = [w for w in itertools.product(range(1, top + 1), repeat=dim) if math.gcd(*w) == 1]
    return sorted(out, key=lambda w: (max(w), sum(w), w))


def _graded_certificate(pbar, weights, dirs, cover):
    """Radius outside of which ``pbar > 0``, via the grading ``x_i = t^{w_i} y_i``.

    With ``D`` the top weighted degree and ``y`` on the unit sphere,
    ``pbar(t^w y) >= mu t^D - S t^(D-1)`` for ``t >= 1``, where ``mu`` bounds
    the top graded part from below and ``S`` sums the remaining coefficient
    magnitudes.  Returns ``None`` when ``mu <= 0``.
    """
    w = np.asarray(weights)
    graded = {e: int(np.dot(w, e)) for e, _ in pbar.items()}
    top = max(graded.values())
    lead = Polynomial(pbar.dim, {e: c for e, c in pbar.items() if graded[e] == top})
    lip = sum(abs(float(c)) * sum(e) for e, c in lead.items())
    mu = float(lead.evaluate(*dirs.T).min()) - lip * cover
    if not mu > 0:
        return None
    lower = sum(abs(float(c)) for e, c in pbar.items() if graded[e] < top)
    # |x| <= t^max(w) on the sphere scaled by t >= 1
    return float(max(1.0, lower / mu) ** int(w.max()))


def negativity_bounded(pbar, sample_radius=1.0, budget=2**20):
    """Classify whether the closure of ``{pbar < 0}`` is compact.

    ``Bounded`` is a certificate: for some integer grading ``w`` (the
    standard one is tried first) the top graded part is at least ``mu > 0``
    on the unit sphere (sampled minimum minus a Lipschitz covering margin),
    and ``pbar >= 0`` outside ``radius = max(1, S / mu)^max(w)`` where ``S``
    sums the magnitudes of the remaining coefficients.  The sphere sample
    starts at 4096 directions and is refined sixteenfold up to ``budget``;
    every refinement is tried with one grading, keeping the smallest radius,
    before moving to the next grading.
    ``Unbounded`` needs a ray whose sampled values stay negative at radii
    ``sample_radius * 2**j``.  Anything else is ``Unknown``.
    """
    dim = pbar.dim
    if pbar.is_constant():
        c = float(eval_poly(pbar, (0,) * dim))
        if c >= 0:
            return ClassVerdict(Verdict.BOUNDED, radius=0.0)
        return ClassVerdict(Verdict.UNBOUNDED, witness=(float(sample_radius),) + (0.0,) * (dim - 1))

    m = pbar.degree()
    lead = pbar.homogeneous_part(m)
    size = min(4096, int(budget))
    dirs, cover = _sphere_sample(dim, size)
    lead_vals = lead.evaluate(*dirs.T)
    order = np.lexsort((np.arange(len(dirs)), lead_vals))

    # coordinate axes first, so that axis witnesses come out exact
    axes = np.vstack([np.eye(dim), -np.eye(dim)])
    probes = [a for a in axes if lead(*a) <= 0]
    probes += [dirs[idx] for idx in order if lead_vals[idx] <= 0]

    radii = float(sample_radius) * 2.0 ** np.arange(0, 24)
    for direction in probes:
        ray = radii[:, None] * direction[None, :]
        vals = pbar.evaluate(*ray.T)
        # negative on the whole outer half of the probe ladder
        if np.all(vals[len(radii) // 2:] < 0):
            return ClassVerdict(Verdict.UNBOUNDED, witness=tuple(float(v) for v in ray[-1]))

    samples = [(dirs, cover)]
    while np.isfinite(cover) and size * 16 <= budget:
        size *= 16
        dirs, cover = _sphere_sample(dim, size)
        samples.append((dirs, cover))
    # the standard grading gives the tightest radius, so exhaust it first
    for weights in _weight_candidates(dim):
        radii = [_graded_certificate(pbar, weights, d, c) for d, c in samples if np.isfinite(c)]
        radii = [r for r in radii if r is not None]
        if radii:
            return ClassVerdict(Verdict.BOUNDED, radius=min(radii))
    return ClassVerdict(Verdict.UNKNOWN)


# ---------------------------------------------------------------------------
# The p_{2k} composition
# ---------------------------------------------------------------------------


def _check_delta(delta):
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def build_p2k(f, delta, k):
    """Exact composition ``1 - ((f + 1) / (1 - delta))^(2k)``.

    Expanding this symbolically is only sensible for small ``k``; grids should
    use :func:`p2k_values` on sampled ``f`` instead.
    """
    _check_delta(delta)
    if int(k) < 1:
        raise ValueError("k must be a positive integer")
    if isinstance(delta, float):
        scale = 1.0 / (1.0 - delta)
    else:
        scale = 1 / (1 - Fraction(delta))
    return 1 - ((f + 1) * scale) ** (2 * int(k))


def p2k_values(f_values, delta, k, floor=-1e300):
    """Evaluate ``1 - ((t + 1) / (1 - delta))^(2k)`` on an array of ``t``.

    Overflow is clipped to ``floor``; such values only ever sit far below any
    solution and never become active constraints.
    """
    _check_delta(delta)
    t = (np.asarray(f_values, dtype=float) + 1.0) / (1.0 - delta)
    with np.errstate(over="ignore"):
        out = 1.0 - t ** (2 * int(k))
    return np.maximum(np.nan_to_num(out, neginf=floor), floor)
