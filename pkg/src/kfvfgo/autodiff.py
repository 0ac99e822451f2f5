"""Forward-mode automatic differentiation on fixed-width dual scalars.

A DualScalar carries a value plus exactly four partial derivatives — one per
state component [px, py, vx, vy]. Keeping the width fixed lets the whole
Jacobian of a measurement function fall out of a single evaluation with all
four seed directions set jointly.
"""

from __future__ import annotations

import numbers

import numpy as np

from .core import DomainError

N_PARTIALS = 4


class DualScalar:
    """value + first-order partials with respect to the four state components."""

    __slots__ = ("value", "partials")

    def __init__(self, value, partials=None):
        if partials is None:
            partials = np.zeros(N_PARTIALS)
        else:
            partials = np.asarray(partials, dtype=float)
            if partials.shape != (N_PARTIALS,):
                raise ValueError(
                    f"partials must have length {N_PARTIALS}, got {partials.shape}"
                )
        self.value = float(value)
        self.partials = partials

    # ---------- coercion ----------

    @staticmethod
    def _lift(other) -> "DualScalar | None":
        if isinstance(other, DualScalar):
            return other
        if isinstance(other, numbers.Real):
            return DualScalar(float(other))
        return None

    # ---------- arithmetic ----------

    def __add__(self, other):
        other = self._lift(other)
        if other is None:
            return NotImplemented
        return DualScalar(self.value + other.value, self.partials + other.partials)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._lift(other)
        if other is None:
            return NotImplemented
        return DualScalar(self.value - other.value, self.partials - other.partials)

    def __rsub__(self, other):
        other = self._lift(other)
        if other is None:
            return NotImplemented
        return DualScalar(other.value - self.value, other.partials - self.partials)

    def __mul__(self, other):
        other = self._lift(other)
        if other is None:
            return NotImplemented
        return DualScalar(
            self.value * other.value,
            self.value * other.partials + other.value * self.partials,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        if other is None:
            return NotImplemented
        if other.value == 0.0:
            raise DomainError("dual division by zero")
        inv = 1.0 / other.value
        return DualScalar(
            self.value * inv,
            (self.partials - (self.value * inv) * other.partials) * inv,
        )

    def __rtruediv__(self, other):
        other = self._lift(other)
        if other is None:
            return NotImplemented
        return other.__truediv__(self)

    def __neg__(self):
        return DualScalar(-self.value, -self.partials)

    def __pow__(self, exponent):
        if not isinstance(exponent, numbers.Real):
            return NotImplemented
        p = float(exponent)
        if self.value == 0.0 and p < 1.0:
            raise DomainError("dual power with zero base and exponent < 1")
        if self.value < 0.0 and p != int(p):
            raise DomainError("dual power with negative base and fractional exponent")
        value = self.value ** p
        return DualScalar(value, p * self.value ** (p - 1.0) * self.partials)

    def sqrt(self):
        if self.value <= 0.0:
            raise DomainError("dual sqrt requires a strictly positive value")
        root = self.value ** 0.5
        # one division keeps the quotient identical to the analytic dx/r form
        return DualScalar(root, self.partials / (2.0 * root))

    def __repr__(self):
        return f"DualScalar({self.value!r}, {self.partials!r})"


def sqrt(x):
    """sqrt that works on DualScalar and plain floats alike."""
    if isinstance(x, DualScalar):
        return x.sqrt()
    if x <= 0.0:
        raise DomainError("sqrt requires a strictly positive value")
    return float(x) ** 0.5


def seed_state(x) -> list[DualScalar]:
    """Lift a 4-vector into duals with unit seed directions e_0..e_3."""
    arr = _state_array(x)
    eye = np.eye(N_PARTIALS)
    return [DualScalar(arr[i], eye[i]) for i in range(N_PARTIALS)]


def _state_array(x) -> np.ndarray:
    if hasattr(x, "as_array"):
        arr = x.as_array()
    else:
        arr = np.asarray(x, dtype=float).reshape(-1)
    if arr.shape != (N_PARTIALS,):
        raise ValueError(f"expected a state with {N_PARTIALS} components, got {arr.shape}")
    return arr.astype(float)


def jacobian_ad(vector_function, x) -> np.ndarray:
    """Jacobian of `vector_function` at state `x` via one dual evaluation.

    `vector_function` receives a list of four DualScalar inputs and returns a
    sequence of DualScalar (or plain float, whose row is then all zeros —
    the constant-function case). Domain errors raised inside the function
    propagate unchanged; the range evaluators attach their own row index.
    """
    duals = seed_state(x)
    outputs = vector_function(duals)
    if isinstance(outputs, (DualScalar, numbers.Real)):
        outputs = [outputs]
    rows = []
    for out in outputs:
        if isinstance(out, DualScalar):
            rows.append(out.partials)
        elif isinstance(out, numbers.Real):
            rows.append(np.zeros(N_PARTIALS))
        else:
            raise TypeError(f"vector_function returned a non-scalar output: {out!r}")
    return np.array(rows)
