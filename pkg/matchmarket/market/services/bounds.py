"""
Characteristic pool sizes and the closed-form loss bounds.

The pool sizes are the roots of x + other * (1 - (1-p)^x) = lhs, the level at
which inflow and outflow of a greedy pool balance. The bounds are the
large-market limits: every value is asymptotic, out-of-regime lower bounds
come back as None with a flag, and upper bounds above 1 are reported as they
are with a ``<name>_vacuous`` flag.
"""
import logging
import math
from typing import Optional

from scipy.optimize import bisect

from ..exceptions import NonPositiveRate, ProbabilityOutOfRange
from ..schemas import BoundSet, LowerBounds, MarketParams, RootChecks, RootSet, UpperBounds
from .market_core import densities, survival

logger = logging.getLogger(__name__)

ROOT_RTOL = 1e-12
L1_AGREEMENT = 1e-9
LOWER_BOUND_MAX_P = 0.1


def default_sigma(rate: float) -> float:
    """sqrt(lambda log lambda), never below 1"""
    if rate <= math.e:
        return 1.0
    return max(1.0, math.sqrt(rate * math.log(rate)))


def root_residual(x: float, lhs_rate: float, other_rate: float, p: float) -> float:
    return x + other_rate * (1 - survival(p, x)) - lhs_rate


def solve_characteristic_root(lhs_rate: float, other_rate: float, p: float) -> float:
    """
    Unique root of x + other_rate * (1 - (1-p)^x) = lhs_rate on [0, lhs_rate].

    The left side is strictly increasing in x, negative at 0 and at least
    lhs_rate at x = lhs_rate, so bisection always brackets the root.
    """
    if not lhs_rate > 0:
        raise NonPositiveRate(f'lhs_rate must be > 0, got {lhs_rate}')
    if not other_rate >= 0:
        raise NonPositiveRate(f'other_rate must be >= 0, got {other_rate}')
    if not 0 < p < 1:
        raise ProbabilityOutOfRange(f'p must lie in (0, 1), got {p}')
    if other_rate == 0:
        return float(lhs_rate)
    return float(bisect(
        root_residual, 0.0, lhs_rate,
        args=(lhs_rate, other_rate, p),
        xtol=ROOT_RTOL * lhs_rate, rtol=ROOT_RTOL, maxiter=500,
    ))


def solve_l1(params: MarketParams, k1: float, sigma_a: float) -> float:
    """
    lambda_b (1-p)^(k1 - sigma_a), checked against the equivalent form
    (1-p)^(-sigma_a) (lambda_b - lambda_a + k1). A disagreement means k1 is
    not the characteristic root of `params` and is logged, not raised.
    """
    l1 = float(params.lambda_b * survival(params.p, k1 - sigma_a))
    other_form = float((params.lambda_b - params.lambda_a + k1) / survival(params.p, sigma_a))
    if abs(l1 - other_form) > L1_AGREEMENT * max(1.0, abs(l1)):
        logger.warning('l1 closed forms disagree: %.12g vs %.12g (k1=%s)', l1, other_form, k1)
    return l1


def characteristic_roots(
    params: MarketParams,
    sigma_a: Optional[float] = None,
    sigma_b: Optional[float] = None,
) -> RootSet:
    """
    k2, l2, k1 and the sigma-shifted variants. k1_upper is None when
    sigma_b >= lambda_b, where its defining equation has no positive rate.
    """
    la, lb, p = params.lambda_a, params.lambda_b, params.p
    sigma_a = default_sigma(la) if sigma_a is None else sigma_a
    sigma_b = default_sigma(lb) if sigma_b is None else sigma_b

    k2 = solve_characteristic_root(la, lb, p)
    l2 = solve_characteristic_root(lb, la, p)
    k1 = solve_characteristic_root(la, lb, p)
    k1_upper = None
    if sigma_b < lb:
        k1_upper = solve_characteristic_root(la, lb - sigma_b, p)
    else:
        logger.warning('k1_upper undefined: sigma_b=%s >= lambda_b=%s', sigma_b, lb)
    return RootSet(
        k2=k2,
        l2=l2,
        k1=k1,
        k2_lower=solve_characteristic_root(la, lb + sigma_b, p),
        l2_lower=solve_characteristic_root(lb, la + sigma_a, p),
        k1_lower=solve_characteristic_root(la, lb + sigma_b, p),
        k1_upper=k1_upper,
        l1=solve_l1(params, k1, sigma_a),
        sigma_a=sigma_a,
        sigma_b=sigma_b,
    )


def _oriented(params: MarketParams) -> tuple[MarketParams, bool]:
    """The market with d_a >= d_b, and whether the sides were exchanged"""
    if params.d_a < params.d_b:
        return params.swapped(), True
    return params, False


def _flag_vacuous(values: dict[str, float], flags: list[str]) -> None:
    for name, value in values.items():
        if value > 1:
            flags.append(f'{name}_vacuous')
            logger.warning('%s = %.4g exceeds 1 and says nothing', name, value)


def upper_bounds(params: MarketParams) -> UpperBounds:
    """
    Upper bounds for Greedy2, Patient2 and the 1-sided policies.

    The 2-sided forms assume d_a >= d_b and are evaluated on the swapped
    market otherwise, with per-side values mapped back to U and V.
    """
    oriented, swapped = _oriented(params)
    da, db = oriented.d_a, oriented.d_b
    delta = densities(params).delta
    log_term = math.log(db + 3)

    greedy2 = ((da - db) / da + log_term / da, log_term / db)
    exponent = max(da - db, da / (1 + db))
    patient2 = ((da - db) / da + log_term / da, math.exp(-exponent))
    if swapped:
        greedy2, patient2 = greedy2[::-1], patient2[::-1]
    balanced = math.isclose(da, db, rel_tol=1e-12)

    # The 1-sided policies fix U as the inactive side, so no swap
    da, db = params.d_a, params.d_b
    log_term = math.log(db + 3)
    if da >= db:
        alg1 = ((da - db) / da + log_term / da, log_term / db)
    else:
        alg1 = (log_term / da, (db - da) / db + log_term / db)

    values = {
        'greedy2_upper_a': greedy2[0],
        'greedy2_upper_b': greedy2[1],
        'greedy2_upper_total': delta + 2 * math.log(oriented.d_b + 3) / (da + db),
        'patient2_upper_a': patient2[0],
        'patient2_upper_b': patient2[1],
        'patient2_upper_total': delta + math.log(oriented.d_b + 3) / (da + db) + math.exp(-exponent),
        'alg1_upper_a': alg1[0],
        'alg1_upper_b': alg1[1],
        'alg1_upper_total': abs(db - da) / (da + db) + 2 * log_term / (da + db),
    }
    flags: list[str] = []
    _flag_vacuous(values, flags)
    return UpperBounds(
        **values,
        patient2_balanced_exponent=exponent if balanced else None,
        swapped=swapped,
        regime_flags=flags,
    )


def lower_bounds(params: MarketParams) -> LowerBounds:
    """
    Lower bounds on OPT and OMN (for d_a >= d_b >= 1, p < 0.1, after
    orientation), on Greedy1 and Patient1 (for d_a, d_b >= 1, p < 0.1), and
    the imbalance floor Delta that no algorithm can beat.
    """
    d = densities(params)
    delta = d.delta
    flags: list[str] = []
    values: dict[str, Optional[float]] = {}

    oriented, swapped = _oriented(params)
    da, db = oriented.d_a, oriented.d_b
    la, lb, p = oriented.lambda_a, oriented.lambda_b, oriented.p
    if db >= 1 and p < LOWER_BOUND_MAX_P:
        values['opt_lower'] = max(1 / (1 + 2 * da + db + 2 * da ** 2 / la + db ** 2 / lb), delta)
        values['opt_lower_asymptotic'] = 0.5 * (delta + 1 / (1 + 2 * da + db))
        omn_a = math.exp(-(da + da * p)) / (1 + da + da ** 2 / la)
        omn_b = math.exp(-(db + db * p)) / (1 + db + db ** 2 / lb)
        values['omn_lower'] = max(0.5 * (omn_a + omn_b), delta)
        if math.isclose(da, db, rel_tol=1e-12):
            values['omn_lower_balanced'] = math.exp(-da) / (1 + da)
    else:
        flags.append('opt_omn_lower_out_of_regime')
        logger.warning('OPT/OMN lower bounds need d_a >= d_b >= 1 and p < 0.1; got %s', d)

    da, db = params.d_a, params.d_b
    la, lb = params.lambda_a, params.lambda_b
    if da >= 1 and db >= 1 and p < LOWER_BOUND_MAX_P:
        values['greedy1_lower'] = max(1 / (2 * (1 + db + db ** 2 / lb)), delta)
        values['patient1_lower'] = max(
            math.log(db + db ** 2 / lb) / (da + db + da ** 2 / la + db ** 2 / lb), delta
        )
    else:
        flags.append('alg1_lower_out_of_regime')
        logger.warning('1-sided lower bounds need d_a, d_b >= 1 and p < 0.1; got %s', d)

    return LowerBounds(
        **values,
        delta_lower=delta,
        delta_floor_a=max(da - db, 0.0) / da,
        delta_floor_b=max(db - da, 0.0) / db,
        swapped=swapped,
        regime_flags=flags,
    )


def bound_set(params: MarketParams) -> BoundSet:
    """Upper and lower bounds flattened into one record"""
    upper = upper_bounds(params)
    lower = lower_bounds(params)
    fields = {
        **upper.model_dump(exclude={'swapped', 'regime_flags'}),
        **lower.model_dump(exclude={'swapped', 'regime_flags'}),
    }
    return BoundSet(
        lambda_a=params.lambda_a,
        lambda_b=params.lambda_b,
        p=params.p,
        d_a=params.d_a,
        d_b=params.d_b,
        swapped=upper.swapped,
        regime_flags=upper.regime_flags + lower.regime_flags,
        **fields,
    )


def check_root_sandwiches(
    params: MarketParams,
    sigma_a: Optional[float] = None,
    sigma_b: Optional[float] = None,
) -> RootChecks:
    """
    Solves every root on the market oriented so that d_a >= d_b and
    evaluates the sandwich and ordering inequalities they must satisfy.
    """
    oriented, swapped = _oriented(params)
    if swapped:
        sigma_a, sigma_b = sigma_b, sigma_a
    roots = characteristic_roots(oriented, sigma_a, sigma_b)
    la, lb, p = oriented.lambda_a, oriented.lambda_b, oriented.p
    da, db = oriented.d_a, oriented.d_b
    sa, sb = roots.sigma_a, roots.sigma_b

    checks = {
        'k2_residual': abs(root_residual(roots.k2, la, lb, p)) < 1e-9 * la,
        'l2_residual': abs(root_residual(roots.l2, lb, la, p)) < 1e-9 * lb,
        'k1_residual': abs(root_residual(roots.k1, la, lb, p)) < 1e-9 * la,
        'k2_sandwich_lower': max(la - lb, la / (1 + db)) <= roots.k2,
        'k2_sandwich_upper': roots.k2 <= la - lb + math.log(db + 3) / p,
        'l2_sandwich_lower': lb / (1 + da) <= roots.l2,
        'l2_sandwich_upper': roots.l2 <= lb / db * math.log(db + 3),
        'k2_lower_ordering': roots.k2 - sb < roots.k2_lower < roots.k2,
        'l2_lower_ordering': roots.l2 - sa < roots.l2_lower < roots.l2,
        'k1_lower_ordering': roots.k1 - sb < roots.k1_lower < roots.k1,
    }
    flags = []
    if roots.k1_upper is not None:
        checks['k1_upper_ordering'] = roots.k1 < roots.k1_upper < min(roots.k1 + sb, la)
    else:
        flags.append('k1_upper_undefined')

    failed = [name for name, ok in checks.items() if not ok]
    if failed:
        logger.warning('root inequalities failed for %s: %s', oriented, ', '.join(failed))
    checks = {name: bool(ok) for name, ok in checks.items()}
    return RootChecks(roots=roots, swapped=swapped, checks=checks, flags=flags)
