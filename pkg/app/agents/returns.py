"""
File: app/agents/returns.py
Description: Bootstrapped TD(lambda) targets over a time-major sequence.
"""

# Internal Imports
from app.core import grad as G
from app.core.errors import ConfigurationError


def td_lambda(values, signals, gamma: float, lam: float) -> G.Tensor:
    """
    X_H = v_H and X_t = x_t + gamma * ((1 - lam) * v_{t+1} + lam * X_{t+1}).
    Axis 0 is time; x_H is not used. Differentiable in both inputs.
    """
    values, signals = G.as_tensor(values), G.as_tensor(signals)
    if values.shape != signals.shape:
        raise ConfigurationError(
            f"values {values.shape} and signals {signals.shape} differ in shape"
        )
    if values.ndim == 0 or values.shape[0] < 1:
        raise ConfigurationError("td_lambda needs at least one step")
    if not (0.0 <= gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise ConfigurationError(f"gamma and lambda must lie in [0, 1]: {gamma}, {lam}")

    horizon = values.shape[0]
    targets = [values[horizon - 1]]
    for t in range(horizon - 2, -1, -1):
        mixed = (1.0 - lam) * values[t + 1] + lam * targets[-1]
        targets.append(signals[t] + gamma * mixed)
    targets.reverse()
    return G.concat([x.reshape((1,) + x.shape) for x in targets], axis=0)
