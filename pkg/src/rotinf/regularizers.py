"""Separable convex transport penalties.

Each penalty f acts entrywise on a plan vector and exposes its value, gradient,
the diagonal of its Hessian, and the gradient of the convex conjugate (the
entrywise inverse of the gradient). All Hessians in this family are diagonal,
which downstream sensitivity code relies on.

Supported kinds and their open domains:

====================  ====================  =====================
kind                  interior of dom f     interior of dom f*
====================  ====================  =====================
entropy               x > 0                 all reals
burg                  x > 0                 y < 1
fermi_dirac           0 < x < 1             all reals
beta_potential(beta)  x > 0                 y < 1 / (1 - beta)
lp_quasi(p)           x > 0                 y < 0
====================  ====================  =====================

The quasi-norm penalty is stored with the sign that makes it convex,
f(x) = -sum(x**p) for 0 < p < 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy

from .exceptions import DomainError

KINDS = ("entropy", "burg", "fermi_dirac", "beta_potential", "lp_quasi")

_PARAMETRIC = ("beta_potential", "lp_quasi")


@dataclass(frozen=True)
class Regularizer:
    kind: str
    param: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.kind in _PARAMETRIC:
            if self.param is None or not 0.0 < float(self.param) < 1.0:
                raise ValueError(f"{self.kind} needs a parameter strictly inside (0, 1)")
            object.__setattr__(self, "param", float(self.param))
        elif self.param is not None:
            raise ValueError(f"{self.kind} takes no parameter")

    def __str__(self):
        if self.param is not None:
            return f"{self.kind}({self.param:g})"
        return self.kind


def entropy() -> Regularizer:
    """Negative Boltzmann-Shannon entropy, sum(x*log(x) - x + 1)."""
    return Regularizer("entropy")


def burg() -> Regularizer:
    """Burg entropy, sum(x - log(x) - 1)."""
    return Regularizer("burg")


def fermi_dirac() -> Regularizer:
    """Fermi-Dirac entropy, sum(x*log(x) + (1-x)*log(1-x))."""
    return Regularizer("fermi_dirac")


def beta_potential(beta: float) -> Regularizer:
    """Beta potential, sum(x**beta - beta*x + beta - 1) / (beta*(beta-1))."""
    return Regularizer("beta_potential", beta)


def lp_quasi(p: float) -> Regularizer:
    """Convex quasi-norm penalty, -sum(x**p) for 0 < p < 1."""
    return Regularizer("lp_quasi", p)


def from_spec(text: str) -> Regularizer:
    """Parse a textual selector: entropy | burg | fermi | beta:<b> | lpq:<p>."""
    name, _, arg = text.partition(":")
    name = name.strip().lower()
    if name in ("entropy",):
        return entropy()
    if name in ("burg",):
        return burg()
    if name in ("fermi", "fermi_dirac"):
        return fermi_dirac()
    if name in ("beta", "beta_potential"):
        return beta_potential(float(arg))
    if name in ("lpq", "lp_quasi"):
        return lp_quasi(float(arg))
    raise ValueError(f"cannot parse regularizer spec {text!r}")


def _check(cond: bool, msg: str):
    if not cond:
        raise DomainError(msg)


def value(reg: Regularizer, pi) -> float:
    """Penalty value f(pi); boundary points are allowed where f stays finite."""
    x = np.asarray(pi, dtype=float)
    k = reg.kind
    if k == "entropy":
        _check((x >= 0).all(), "entropy needs nonnegative entries")
        return float(np.sum(xlogy(x, x) - x + 1.0))
    if k == "burg":
        _check((x > 0).all(), "burg entropy needs strictly positive entries")
        return float(np.sum(x - np.log(x) - 1.0))
    if k == "fermi_dirac":
        _check(((x >= 0) & (x <= 1)).all(), "fermi-dirac needs entries in [0, 1]")
        return float(np.sum(xlogy(x, x) + xlogy(1.0 - x, 1.0 - x)))
    if k == "beta_potential":
        _check((x >= 0).all(), "beta potential needs nonnegative entries")
        b = reg.param
        return float(np.sum(x ** b - b * x + b - 1.0) / (b * (b - 1.0)))
    # lp_quasi
    _check((x >= 0).all(), "quasi-norm penalty needs nonnegative entries")
    return float(-np.sum(x ** reg.param))


def _check_interior(reg: Regularizer, x: np.ndarray):
    if reg.kind == "fermi_dirac":
        _check(((x > 0) & (x < 1)).all(), "point must lie strictly inside (0, 1)")
    else:
        _check((x > 0).all(), "point must lie strictly inside the positive orthant")


def grad(reg: Regularizer, pi) -> np.ndarray:
    """Entrywise gradient of f at an interior point."""
    x = np.asarray(pi, dtype=float)
    _check_interior(reg, x)
    k = reg.kind
    if k == "entropy":
        return np.log(x)
    if k == "burg":
        return 1.0 - 1.0 / x
    if k == "fermi_dirac":
        return np.log(x) - np.log1p(-x)
    if k == "beta_potential":
        b = reg.param
        return (x ** (b - 1.0) - 1.0) / (b - 1.0)
    p = reg.param
    return -p * x ** (p - 1.0)


def hess_diag(reg: Regularizer, pi) -> np.ndarray:
    """Diagonal of the Hessian of f at an interior point; strictly positive."""
    x = np.asarray(pi, dtype=float)
    _check_interior(reg, x)
    k = reg.kind
    if k == "entropy":
        return 1.0 / x
    if k == "burg":
        return 1.0 / x ** 2
    if k == "fermi_dirac":
        return 1.0 / (x * (1.0 - x))
    if k == "beta_potential":
        return x ** (reg.param - 2.0)
    p = reg.param
    return p * (1.0 - p) * x ** (p - 2.0)


def in_conjugate_domain(reg: Regularizer, y) -> bool:
    """Whether y lies entrywise in the interior of dom f*."""
    y = np.asarray(y, dtype=float)
    if not np.isfinite(y).all():
        return False
    k = reg.kind
    if k in ("entropy", "fermi_dirac"):
        return True
    if k == "burg":
        return bool((y < 1.0).all())
    if k == "beta_potential":
        return bool((y < 1.0 / (1.0 - reg.param)).all())
    return bool((y < 0.0).all())


def conjugate_grad(reg: Regularizer, y) -> np.ndarray:
    """Gradient of the conjugate f*, the entrywise inverse of ``grad``."""
    y = np.asarray(y, dtype=float)
    if not in_conjugate_domain(reg, y):
        raise DomainError(f"point outside the conjugate domain of {reg}")
    k = reg.kind
    if k == "entropy":
        return np.exp(y)
    if k == "burg":
        return 1.0 / (1.0 - y)
    if k == "fermi_dirac":
        return expit(y)
    if k == "beta_potential":
        b = reg.param
        return (1.0 + (b - 1.0) * y) ** (1.0 / (b - 1.0))
    p = reg.param
    return (-y / p) ** (1.0 / (p - 1.0))
