"""
Parameter validation and density arithmetic shared by every service.
"""
import math

import numpy as np

from ..exceptions import NonPositiveRate, ProbabilityOutOfRange
from ..schemas import Densities, MarketParams


def validate_params(lambda_a: float, lambda_b: float, p: float) -> MarketParams:
    """
    Builds a MarketParams, rejecting anything outside the model's regime.

    Raises:
        NonPositiveRate: if either arrival rate is not a finite positive number
        ProbabilityOutOfRange: if p is not in the open interval (0, 1)
    """
    for name, rate in (('lambda_a', lambda_a), ('lambda_b', lambda_b)):
        if not math.isfinite(rate) or rate <= 0:
            raise NonPositiveRate(f'{name} must be a finite positive rate, got {rate}')
    if not math.isfinite(p) or not 0 < p < 1:
        raise ProbabilityOutOfRange(f'p must lie in (0, 1), got {p}')
    return MarketParams(lambda_a=lambda_a, lambda_b=lambda_b, p=p)


def params_from_densities(d_a: float, d_b: float, p: float) -> MarketParams:
    """The (d_a, d_b, p) parameterization, converted to (lambda_a, lambda_b, p)"""
    if not math.isfinite(p) or not 0 < p < 1:
        raise ProbabilityOutOfRange(f'p must lie in (0, 1), got {p}')
    return validate_params(d_a / p, d_b / p, p)


def densities(params: MarketParams) -> Densities:
    """d_a = lambda_a p, d_b = lambda_b p and delta = |d_a - d_b| / (d_a + d_b)"""
    d_a = params.lambda_a * params.p
    d_b = params.lambda_b * params.p
    return Densities(d_a=d_a, d_b=d_b, delta=abs(d_a - d_b) / (d_a + d_b))


def survival(p: float, k):
    """
    (1 - p)^k evaluated as exp(k * log1p(-p)) so large k underflows gracefully.
    Accepts scalars or numpy arrays.
    """
    return np.exp(np.multiply(k, np.log1p(-p)))
