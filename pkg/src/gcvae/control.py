"""PI controllers for the Lagrangian loss weights, plus clamping and stopping.

Each controlled weight follows

    e_t    = set_point - actual
    weight = kp / (1 + exp(e_t)) - ki * (integral + e_t) + min_value

with ``exp`` evaluated on e_t clamped to [-50, 50], the integral being the
exact running sum of errors (no windup cap), and the output floored at
``min_value`` and capped at 1. A larger ``actual`` (a loss further above its
target) strictly increases the proportional term, so the controller raises
the penalty weight whenever the controlled quantity exceeds its set point.

The derivative term is intentionally absent.
"""

import math
from dataclasses import dataclass, replace

from .errors import ContractError


@dataclass(frozen=True)
class ControllerState:
    """Immutable controller snapshot; ``pid_step`` returns the successor."""

    kp: float
    ki: float
    min_value: float
    set_point: float
    integral: float = 0.0
    last_output: float = 0.0

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0:
            raise ContractError(f"gains must be >= 0, got kp={self.kp}, ki={self.ki}")
        if not 0.0 <= self.min_value <= 1.0:
            raise ContractError(f"min_value must lie in [0, 1], got {self.min_value}")
        if not math.isfinite(self.set_point):
            raise ContractError(f"set_point must be finite, got {self.set_point}")


@dataclass(frozen=True)
class WeightTriple:
    """One (alpha, beta, gamma) loss-weight snapshot."""

    alpha: float
    beta: float
    gamma: float


def pid_step(state: ControllerState, actual: float):
    """Advance one controller step; returns (new_state, weight)."""
    actual = float(actual)
    if not math.isfinite(actual):
        raise ContractError(f"controller input must be finite, got {actual}")
    e = state.set_point - actual
    proportional = state.kp / (1.0 + math.exp(min(max(e, -50.0), 50.0)))
    integral = state.integral + e
    weight = proportional - state.ki * integral + state.min_value
    weight = min(max(weight, state.min_value), 1.0)
    return replace(state, integral=integral, last_output=weight), weight


def clamp_weights(raw: WeightTriple) -> WeightTriple:
    """Project raw weights onto the feasible set.

    alpha and beta are clipped to [0, 1] and, if their sum exceeds 1,
    rescaled proportionally so alpha + beta == 1; gamma is clipped to [0, 1].
    Idempotent: clamping a clamped triple returns it unchanged.
    """
    a = min(max(raw.alpha, 0.0), 1.0)
    b = min(max(raw.beta, 0.0), 1.0)
    g = min(max(raw.gamma, 0.0), 1.0)
    s = a + b
    if s > 1.0:
        a /= s
        b /= s
        if a + b > 1.0:  # guard the last-ulp rounding case
            b = 1.0 - a
    return WeightTriple(alpha=a, beta=b, gamma=g)


def stopping_check(alpha_t, alpha_prev, beta_t, beta_prev, eps_a, eps_b) -> bool:
    """True when both weight deltas fall below their thresholds.

    |alpha_t - alpha_prev| < eps_a  and  |beta_t - beta_prev| < eps_b.
    Warm-up scheduling is the caller's job; this is a pure predicate.
    """
    if eps_a <= 0 or eps_b <= 0:
        raise ContractError(f"thresholds must be > 0, got eps_a={eps_a}, eps_b={eps_b}")
    return abs(alpha_t - alpha_prev) < eps_a and abs(beta_t - beta_prev) < eps_b
