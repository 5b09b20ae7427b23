"""Recurrent-style dynamical systems: activations, forms, fields, Jacobians."""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Activation",
    "SystemForm",
    "DynamicalSystem",
    "KinkWarning",
    "make_system",
    "eval_field",
    "jacobian_analytic",
    "jacobian_fd",
    "system_to_dict",
    "system_from_dict",
    "save_system",
    "load_system",
]


class KinkWarning(UserWarning):
    """An exact relu kink was hit; the derivative convention 0 was applied."""


def _logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


class Activation(str, enum.Enum):
    identity = "identity"
    relu = "relu"
    tanh = "tanh"
    sine = "sine"
    logistic = "logistic"

    def __call__(self, x):
        return _VALUE[self](np.asarray(x, dtype=float))

    def deriv(self, x):
        return _DERIV[self](np.asarray(x, dtype=float))


_VALUE = {
    Activation.identity: lambda x: x,
    Activation.relu: lambda x: np.maximum(x, 0.0),
    Activation.tanh: np.tanh,
    Activation.sine: np.sin,
    Activation.logistic: _logistic,
}

# relu derivative at exactly 0 is 0: the kink set has measure zero, but a
# fixed convention keeps outputs reproducible.
_DERIV = {
    Activation.identity: lambda x: np.ones_like(x),
    Activation.relu: lambda x: np.where(x > 0.0, 1.0, 0.0),
    Activation.tanh: lambda x: 1.0 - np.tanh(x) ** 2,
    Activation.sine: np.cos,
    Activation.logistic: lambda x: _logistic(x) * (1.0 - _logistic(x)),
}


class SystemForm(str, enum.Enum):
    pre_activation = "pre_activation"    # dx/dt = act(W x + b) - A x
    post_activation = "post_activation"  # dx/dt = -x + W act(x) + b
    discrete_map = "discrete_map"        # x(t+1) = act(W x(t) + b) - A x(t)


@dataclass(frozen=True)
class DynamicalSystem:
    """A square system defined by weight matrix W, leak matrix A, offset b.

    The `form` selects how the pieces combine (see SystemForm). For the
    post_activation form A is unused; the leak term is a plain -x.
    """

    n: int
    W: np.ndarray
    A: np.ndarray
    b: np.ndarray
    activation: Activation
    form: SystemForm

    def __post_init__(self):
        n = int(self.n)
        if n <= 0:
            raise ValueError(f"state dimension must be positive, got {n}")
        W = np.array(self.W, dtype=float)
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        if W.shape != (n, n):
            raise ValueError(f"W has shape {W.shape}, expected ({n}, {n})")
        if A.shape != (n, n):
            raise ValueError(f"A has shape {A.shape}, expected ({n}, {n})")
        if b.shape != (n,):
            raise ValueError(f"b has shape {b.shape}, expected ({n},)")
        for arr in (W, A, b):
            arr.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "form", SystemForm(self.form))


def make_system(W, A, b, activation, form) -> DynamicalSystem:
    """Build a DynamicalSystem, inferring n from b."""
    b = np.atleast_1d(np.asarray(b, dtype=float))
    return DynamicalSystem(n=b.shape[0], W=W, A=A, b=b,
                           activation=activation, form=form)


def _check_state(sys: DynamicalSystem, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (sys.n,):
        raise ValueError(f"state has shape {x.shape}, expected ({sys.n},)")
    return x


def eval_field(sys: DynamicalSystem, x) -> np.ndarray:
    """Right-hand side at x (the next state, for discrete maps)."""
    x = _check_state(sys, x)
    act = sys.activation
    if sys.form is SystemForm.post_activation:
        return -x + sys.W @ act(x) + sys.b
    return act(sys.W @ x + sys.b) - sys.A @ x


def jacobian_analytic(sys: DynamicalSystem, x) -> np.ndarray:
    """Exact Jacobian of eval_field at x.

    Emits a KinkWarning (and applies the derivative-0 convention) when a
    relu argument coordinate is exactly zero.
    """
    x = _check_state(sys, x)
    act = sys.activation
    post = sys.form is SystemForm.post_activation
    arg = x if post else sys.W @ x + sys.b
    if act is Activation.relu and np.any(arg == 0.0):
        warnings.warn("relu kink hit exactly; derivative 0 used at the kink",
                      KinkWarning, stacklevel=2)
    d = act.deriv(arg)
    if post:
        return sys.W * d - np.eye(sys.n)
    return d[:, None] * sys.W - sys.A


def jacobian_fd(sys: DynamicalSystem, x, h: float | None = None) -> np.ndarray:
    """Central-difference Jacobian of eval_field, column by column."""
    x = _check_state(sys, x)
    if h is None:
        h = 1e-6 * max(1.0, float(np.max(np.abs(x))))
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    J = np.empty((sys.n, sys.n))
    for j in range(sys.n):
        e = np.zeros(sys.n)
        e[j] = h
        J[:, j] = (eval_field(sys, x + e) - eval_field(sys, x - e)) / (2.0 * h)
    return J


def system_to_dict(sys: DynamicalSystem) -> dict:
    return {
        "n": sys.n,
        "form": sys.form.value,
        "activation": sys.activation.value,
        "W": sys.W.tolist(),
        "A": sys.A.tolist(),
        "b": sys.b.tolist(),
    }


def system_from_dict(d: dict) -> DynamicalSystem:
    missing = {"n", "form", "activation", "W", "A", "b"} - set(d)
    if missing:
        raise ValueError(f"system definition missing keys: {sorted(missing)}")
    return DynamicalSystem(n=d["n"], W=d["W"], A=d["A"], b=d["b"],
                           activation=d["activation"], form=d["form"])


def save_system(sys: DynamicalSystem, path) -> None:
    Path(path).write_text(json.dumps(system_to_dict(sys), indent=2))


def load_system(path) -> DynamicalSystem:
    return system_from_dict(json.loads(Path(path).read_text()))
