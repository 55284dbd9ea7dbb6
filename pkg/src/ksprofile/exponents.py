"""Closed-form exponents, thresholds and iteration schedules.

Every quantity here is an explicit formula in the model parameters.  The
admissibility tests compare interval endpoints exactly: inputs that are
recognisably rational (ints, ``Fraction``, or floats within a few ulps of
a small-denominator fraction such as ``2/3``) are compared as
rationals, everything else as the exact binary value of the float.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from numbers import Rational, Real

from .errors import (
    DegenerateDenominator,
    InadmissibleParams,
    NonpositiveDenominator,
    RangeViolation,
    ValidationError,
)

INF = math.inf

_SNAP_DENOMINATOR = 10**6
_SNAP_ULPS = 4


def exact(x) -> Fraction:
    """Exact rational value of ``x``.

    Floats within a few ulps of a fraction with denominator <= 1e6 are
    snapped to that fraction, so ``1 - 2/3`` compares equal to ``1/3`` and
    ``1 + 4/6`` equal to ``5/3``.
    """
    if isinstance(x, Rational):
        return Fraction(x)
    return _snap(float(x))


@lru_cache(maxsize=4096)
def _snap(x: float) -> Fraction:
    if not math.isfinite(x):
        raise ValueError(f"cannot take exact value of {x!r}")
    f = Fraction(x)
    snapped = f.limit_denominator(_SNAP_DENOMINATOR)
    if abs(float(snapped) - x) <= _SNAP_ULPS * math.ulp(x):
        return snapped
    return f


def _pos(x):
    return x if x > 0 else 0


def _safe_div(num, den):
    """num / den with a vanishing denominator mapped to +inf."""
    if den == 0:
        return INF
    return num / den


@dataclass(frozen=True)
class ModelParams:
    """Analytic parameters of the model and of the scalar comparison problem.

    ``p_mass`` is the exponent of the conserved norm, ``theta``/``beta`` the
    integrability and weight exponents of the drift term.  Unset
    ``theta``/``beta`` default to ``4n`` and ``n - 1/2``.
    """

    n: int = 3
    R: Real = 1.0
    m: Real = 1.0
    q: Real = 1.0
    eta: Real = 1.0
    p_mass: Real = 1.0
    theta: Real | None = None
    beta: Real | None = None
    M: Real = 1.0
    L: Real = 1.0

    def __post_init__(self):
        if self.theta is None:
            object.__setattr__(self, "theta", 4.0 * self.n)
        if self.beta is None:
            object.__setattr__(self, "beta", self.n - 0.5)
        if int(self.n) != self.n or self.n < 2:
            raise ValidationError(f"n must be an integer >= 2, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        checks = [
            (self.R > 0, "R > 0"),
            (self.theta > self.n, "theta > n"),
            (self.p_mass >= 1, "p_mass >= 1"),
            (self.beta > 0, "beta > 0"),
            (self.M > 0, "M > 0"),
            (self.L > 0, "L > 0"),
            (self.eta > 0, "eta > 0"),
        ]
        for ok, what in checks:
            if not ok:
                raise ValidationError(f"ModelParams violates {what}")
        for name in ("m", "q"):
            if not math.isfinite(float(getattr(self, name))):
                raise ValidationError(f"{name} must be finite")


def critical_alpha(params: ModelParams) -> float:
    """Critical decay exponent n(n-1) / ((m-q) n + 1) of the pointwise bound."""
    n = params.n
    den = (exact(params.m) - exact(params.q)) * n + 1
    if den <= 0:
        raise DegenerateDenominator(
            f"(m-q)n + 1 = {float(den)} <= 0: pointwise bound is void for m-q <= -1/n"
        )
    return float(Fraction(n * (n - 1)) / den)


def lower_bound_alpha(m, q) -> float:
    """Exponent below which no pointwise bound ``u <= C|x|^-alpha`` can hold."""
    d = exact(q) - exact(m)
    first = _safe_div(2, _pos(1 + d))
    second = _safe_div(1, _pos(d))
    return float(min(first, second))


def admissible_scalar(params: ModelParams) -> bool:
    n = params.n
    p = exact(params.p_mass)
    theta = exact(params.theta)
    beta = exact(params.beta)
    m = exact(params.m)
    d = m - exact(params.q)
    left = p / theta - p / n
    right = p / theta + (beta * p - p) / n
    return left < d <= right and m > (n - 2 * p) / Fraction(n)


def admissible_ks(params: ModelParams) -> bool:
    n = params.n
    m = exact(params.m)
    d = m - exact(params.q)
    return Fraction(-1, n) < d <= Fraction(n - 2, n) and m > Fraction(n - 2, n)


def _scalar_denominator(params: ModelParams) -> Fraction:
    p = exact(params.p_mass)
    return exact(params.m) - exact(params.q) + p / params.n - p / exact(params.theta)


def scalar_alpha_threshold(params: ModelParams) -> float:
    den = _scalar_denominator(params)
    if den <= 0:
        raise NonpositiveDenominator(
            f"m - q + p/n - p/theta = {float(den)} <= 0; no admissible alpha"
        )
    return float(exact(params.beta) / den)


def compatible_beta(params: ModelParams, alpha) -> float:
    """A weight exponent beta' >= beta with (m-q) alpha < beta' that keeps
    alpha above the scalar threshold.

    Any beta' strictly between (m-q) alpha and alpha (m-q+p/n-p/theta) works;
    the midpoint is used when beta itself is too small.
    """
    alpha = float(alpha)
    d = float(params.m) - float(params.q)
    beta = float(params.beta)
    if d * alpha < beta:
        return beta
    upper = alpha * float(_scalar_denominator(params))
    return 0.5 * (d * alpha + upper)


@dataclass(frozen=True)
class IterationExponents:
    """Weight/power/Hoelder exponents of the three drift and diffusion terms.

    ``lam`` entries are ``math.inf`` when the positive part in their
    denominator vanishes.  ``beta`` records the weight exponent actually
    used (possibly enlarged, see :func:`compatible_beta`).
    """

    mu: tuple[float, float, float]
    gamma: tuple[float, float, float]
    kappa: tuple[float, float, float]
    lam: tuple[float, float, float]
    alpha: float
    beta: float


def exponent_triples(m, q, alpha, beta, theta, p_mass=1.0) -> IterationExponents:
    """Evaluate the mu/gamma/kappa/lambda formulas without any admissibility checks."""
    m, q, alpha, beta, theta, p_mass = map(float, (m, q, alpha, beta, theta, p_mass))
    mu = (
        (m - 1) * alpha + 2,
        (2 * q - m - 1) * alpha + 2 * beta,
        (q - 1) * alpha + 1 + beta,
    )
    gamma = (m - 1, 2 * q - m - 1, q - 1)
    kappa = (1.0, theta / (theta - 2), theta / (theta - 1))
    lam = tuple(
        _safe_div(alpha * p_mass, k * _pos(mu_i - (m - 1) * alpha))
        for mu_i, k in zip(mu, kappa)
    )
    return IterationExponents(mu, gamma, kappa, lam, alpha, beta)


def iteration_exponents(params: ModelParams, alpha, *, enlarge_beta=True) -> IterationExponents:
    """Exponents for the weighted L^p testing procedure at decay exponent ``alpha``.

    Requires scalar admissibility and ``alpha`` strictly above the scalar
    threshold.  With ``enlarge_beta`` the weight exponent is raised, if
    needed, so that (m-q) alpha < beta, which keeps every lambda finite.
    """
    if not admissible_scalar(params):
        raise InadmissibleParams("parameters fail the scalar admissibility window")
    threshold = scalar_alpha_threshold(params)
    if not alpha > threshold:
        raise InadmissibleParams(f"alpha={alpha!r} must exceed the threshold {threshold!r}")
    beta = compatible_beta(params, alpha) if enlarge_beta else float(params.beta)
    return exponent_triples(params.m, params.q, alpha, beta, params.theta, params.p_mass)


def sobolev_exponent(n: int) -> float:
    """2n/(n-2)_+, infinite for n <= 2."""
    return _safe_div(2 * n, _pos(n - 2))


def ehrling_exponent(n: int, s: float, r: float) -> float:
    """Interpolation exponent a of ||phi||_r <= C ||grad phi||_2^a ||phi||_s^(1-a) + ..."""
    if not 0 < s < r:
        raise RangeViolation(f"need 0 < s < r, got s={s!r}, r={r!r}")
    if not r < sobolev_exponent(n):
        raise RangeViolation(f"need r < 2n/(n-2)_+ = {sobolev_exponent(n)}, got r={r!r}")
    return (1 / s - 1 / r) / (1 / s + 1 / n - 0.5)


def moser_s_cap(m) -> float:
    """Largest admissible interpolation exponent, 1/2 min{1/(m-1)_+, 1}."""
    return 0.5 * min(_safe_div(1.0, _pos(float(m) - 1)), 1.0)


def s0_cap(n: int | None, m) -> float:
    sob = INF if n is None else sobolev_exponent(n)
    return min(sob, _safe_div(1.0, _pos(float(m) - 1)))


@dataclass(frozen=True)
class MoserSchedule:
    s: float
    s0: float
    p0: float
    p_seq: tuple[float, ...]
    a: float
    nu: float
    r: float

    def lower_bounds(self):
        return [2.0**j * self.p0 for j in range(len(self.p_seq))]

    def upper_bounds(self):
        return [(2.0 / self.s) ** j * self.p0 for j in range(len(self.p_seq))]


def moser_schedule(m, s, p_tilde=2.0, J=10, *, n=3, r=None) -> MoserSchedule:
    """Exponent sequence p_j = (p_{j-1} + 1 - (m-1)s)/s starting at
    p_0 = max{p_tilde, 1 - (m-1)s}.

    ``r`` is the upper Lebesgue exponent of the Ehrling pair (s, r) that
    fixes ``a`` and ``nu = 4a/(1-a)``; by default the midpoint of
    (s, 2n/(n-2)), or s + 1 when n = 2.
    """
    m = float(m)
    s = float(s)
    cap = moser_s_cap(m)
    if not 0 < s <= cap:
        raise RangeViolation(f"s={s!r} outside (0, {cap}]")
    if not p_tilde > 1:
        raise RangeViolation(f"p_tilde must exceed 1, got {p_tilde!r}")
    if J < 1:
        raise RangeViolation(f"J must be >= 1, got {J!r}")
    shift = 1 - (m - 1) * s
    p = [max(float(p_tilde), shift)]
    for _ in range(J):
        p.append((p[-1] + 1 - (m - 1) * s) / s)
    sob = sobolev_exponent(n)
    if r is None:
        r = s + 1.0 if math.isinf(sob) else 0.5 * (s + sob)
    a = ehrling_exponent(n, s, r)
    return MoserSchedule(
        s=s, s0=s0_cap(n, m), p0=p[0], p_seq=tuple(p), a=a, nu=4 * a / (1 - a), r=float(r)
    )


@dataclass(frozen=True)
class DerivedExponents:
    """Everything the calculus can say about one parameter tuple."""

    params: ModelParams
    admissible_ks: bool
    admissible_scalar: bool
    critical_alpha: float | None
    lower_bound_alpha: float
    scalar_threshold: float | None
    alpha: float | None
    iteration: IterationExponents | None
    schedule: MoserSchedule
    notes: list[str] = field(default_factory=list)

    def items(self):
        """Flat (key, value) pairs in a fixed order."""
        p = self.params
        out = [
            ("n", p.n), ("R", p.R), ("m", p.m), ("q", p.q), ("p_mass", p.p_mass),
            ("theta", p.theta), ("beta", p.beta),
            ("admissible_ks", self.admissible_ks),
            ("admissible_scalar", self.admissible_scalar),
            ("critical_alpha", self.critical_alpha),
            ("lower_bound_alpha", self.lower_bound_alpha),
            ("scalar_alpha_threshold", self.scalar_threshold),
            ("alpha", self.alpha),
        ]
        it = self.iteration
        if it is not None:
            out.append(("beta_effective", it.beta))
            for name in ("mu", "gamma", "kappa", "lam"):
                for i, val in enumerate(getattr(it, name), start=1):
                    out.append((f"{name}_{i}", val))
        sch = self.schedule
        out += [
            ("moser_s", sch.s), ("s0", sch.s0), ("ehrling_r", sch.r), ("ehrling_a", sch.a),
            ("nu", sch.nu), ("moser_p0", sch.p0),
            ("moser_p", ",".join(repr(x) for x in sch.p_seq)),
        ]
        return out


def derive_exponents(params: ModelParams, alpha=None, *, p_tilde=2.0, J=8, r=None) -> DerivedExponents:
    """Collect every derived exponent.  ``alpha`` defaults to 1.05 times the
    scalar threshold when that threshold exists."""
    notes = []
    try:
        crit = critical_alpha(params)
    except DegenerateDenominator as exc:
        crit = None
        notes.append(str(exc))
    try:
        thr = scalar_alpha_threshold(params)
    except NonpositiveDenominator as exc:
        thr = None
        notes.append(str(exc))
    adm_scalar = admissible_scalar(params)
    it = None
    if adm_scalar and thr is not None:
        if alpha is None:
            alpha = 1.05 * thr
        try:
            it = iteration_exponents(params, alpha)
        except InadmissibleParams as exc:
            notes.append(str(exc))
    s = moser_s_cap(params.m)
    schedule = moser_schedule(params.m, s, p_tilde, J, n=params.n, r=r)
    return DerivedExponents(
        params=params,
        admissible_ks=admissible_ks(params),
        admissible_scalar=adm_scalar,
        critical_alpha=crit,
        lower_bound_alpha=lower_bound_alpha(params.m, params.q),
        scalar_threshold=thr,
        alpha=None if alpha is None else float(alpha),
        iteration=it,
        schedule=schedule,
        notes=notes,
    )
