from __future__ import annotations

from gridmeter.errors import ConfigError


def sample_pareto(rng, alpha: float, xmin: float) -> float:
    """Draw one Pareto(alpha, xmin) variate by inverse transform.

    ``rng`` only needs a ``random()`` method returning floats in [0, 1).
    The result is never below ``xmin``.
    """
    if not alpha > 0:
        raise ConfigError(f"pareto alpha must be > 0, got {alpha}")
    if not xmin > 0:
        raise ConfigError(f"pareto xmin must be > 0, got {xmin}")
    u = 1.0 - rng.random()  # (0, 1]
    return xmin / u ** (1.0 / alpha)


def pareto_cdf(x: float, alpha: float, xmin: float) -> float:
    if x < xmin:
        return 0.0
    return 1.0 - (xmin / x) ** alpha


def pareto_mean(alpha: float, xmin: float) -> float:
    if alpha <= 1:
        return float("inf")
    return alpha * xmin / (alpha - 1)
