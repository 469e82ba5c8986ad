"""Equation data: component operators, potentials, factorized nonlinearities.

A nonlinearity factor is a scalar function of one complex variable with
closed-form derivatives of every order, so the tree calculus can take as
many formal derivatives as the scheme order requires.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .operators import (OperatorExpr, ZERO_OP, i_delta, i_sqrt_shift,
                        inv_sqrt_shift)


class ScalarFn:
    """Scalar complex function with registered derivatives."""

    def __call__(self, z):  # pragma: no cover - interface
        raise NotImplementedError

    def deriv(self) -> "ScalarFn":  # pragma: no cover - interface
        raise NotImplementedError

    @property
    def is_zero(self) -> bool:
        return False

    @property
    def is_linear(self) -> bool:
        """True when the function is c*z (commutators with operators that
        kill constants vanish on such factors)."""
        return False

    @property
    def is_constant(self) -> bool:
        return False


@dataclass(frozen=True)
class Monomial(ScalarFn):
    """c * z**p."""

    coeff: complex
    power: int

    def __call__(self, z):
        if self.power == 0:
            return self.coeff * np.ones_like(z)
        return self.coeff * z ** self.power

    def deriv(self) -> "Monomial":
        if self.power == 0:
            return Monomial(0.0, 0)
        return Monomial(self.coeff * self.power, self.power - 1)

    @property
    def is_zero(self) -> bool:
        return self.coeff == 0

    @property
    def is_linear(self) -> bool:
        return self.power == 1

    @property
    def is_constant(self) -> bool:
        return self.power == 0

    def label(self) -> str:
        c = _fmt_coeff(self.coeff)
        if self.power == 0:
            return c
        base = "z" if self.power == 1 else f"z^{self.power}"
        return base if c == "1" else f"-{base}" if c == "-1" else f"{c}*{base}"


@dataclass(frozen=True)
class Trig(ScalarFn):
    """c * sin(a z) or c * cos(a z)."""

    kind: str  # "sin" | "cos"
    coeff: complex
    scale: float

    def __call__(self, z):
        f = np.sin if self.kind == "sin" else np.cos
        return self.coeff * f(self.scale * z)

    def deriv(self) -> "Trig":
        if self.kind == "sin":
            return Trig("cos", self.coeff * self.scale, self.scale)
        return Trig("sin", -self.coeff * self.scale, self.scale)

    def label(self) -> str:
        c = _fmt_coeff(self.coeff)
        base = f"{self.kind}({_fmt_coeff(self.scale)}*z)"
        return base if c == "1" else f"{c}*{base}"


def _fmt_coeff(c) -> str:
    c = complex(c)
    if c.imag == 0:
        r = c.real
        return str(int(r)) if r == int(r) else f"{r:g}"
    if c.real == 0:
        if c.imag == 1:
            return "i"
        if c.imag == -1:
            return "-i"
        im = c.imag
        return (f"{int(im)}i" if im == int(im) else f"{im:g}i")
    return f"({c.real:g}{c.imag:+g}i)"


def nth_deriv(fn: ScalarFn, n: int) -> ScalarFn:
    for _ in range(n):
        fn = fn.deriv()
    return fn


@dataclass(frozen=True)
class Potential:
    """Driver V_l: either the constant one or a named real field."""

    var: Optional[str] = None  # None means V == 1
    conjugate: bool = False

    @property
    def is_unit(self) -> bool:
        return self.var is None


@dataclass
class EquationSpec:
    """All data of the evolution system: for each component label an
    unbounded operator, for each driver label a potential, and the
    tensorized nonlinearities with their outer multipliers."""

    name: str
    plus_ops: dict                      # component label -> OperatorExpr
    potentials: dict                    # driver label -> Potential
    interactions: dict                  # (component, driver) -> tuple of labels
    factors: dict                       # (driver, component, label) -> ScalarFn
    outer: dict = field(default_factory=dict)   # (component, driver) -> OperatorExpr
    conj_pairs: dict = field(default_factory=dict)  # label -> conjugate label
    # extra Sobolev margin subtracted in Taylor-admission tests; nonzero for
    # equations whose error is measured in a stronger norm (Sine-Gordon).
    admit_margin: float = 0.0
    mass: Optional[Fraction] = None

    def outer_op(self, o: str, driver: str) -> Optional[OperatorExpr]:
        return self.outer.get((o, driver))

    def factor_fn(self, driver: str, o: str, label: str) -> ScalarFn:
        return self.factors[(driver, o, label)]

    def field_vars(self) -> list:
        out = [f"v_{o}" for o in self.plus_ops]
        for lb, pot in self.potentials.items():
            if not pot.is_unit and pot.var not in out:
                out.append(pot.var)
        return out


def nls() -> EquationSpec:
    """Cubic Schrodinger: i u_t + Δu = |u|^2 u, components (o, ob)."""
    ld = i_delta()
    return EquationSpec(
        name="nls",
        plus_ops={"o": ld, "ob": -ld},
        potentials={"0": Potential()},
        interactions={("o", "0"): ("o", "ob"), ("ob", "0"): ("o", "ob")},
        factors={
            ("0", "o", "o"): Monomial(-1j, 2),
            ("0", "o", "ob"): Monomial(1.0, 1),
            ("0", "ob", "ob"): Monomial(1j, 2),
            ("0", "ob", "o"): Monomial(1.0, 1),
        },
        conj_pairs={"o": "ob"},
    )


def gross_pitaevskii() -> EquationSpec:
    """Gross-Pitaevskii: cubic Schrodinger plus a real potential V."""
    eq = nls()
    eq.name = "gp"
    eq.potentials["1"] = Potential(var="V_1")
    eq.interactions[("o", "1")] = ("o",)
    eq.interactions[("ob", "1")] = ("ob",)
    eq.factors[("1", "o", "o")] = Monomial(-1j, 1)
    eq.factors[("1", "ob", "ob")] = Monomial(1j, 1)
    return eq


def sine_gordon(m=1) -> EquationSpec:
    """First-order complex form of sine-Gordon with mass m != 0.

    The rewrite u = z - i<∇>_m^{-1} z_t turns z_tt - Δz + m^2 z = -sin z into
    i u_t = -<∇>_m u + <∇>_m^{-1} sin((u+conj(u))/2), whose tensorized
    nonlinearity is the sin/cos half-angle splitting below.
    """
    if m == 0:
        raise ValueError("sine-Gordon spec requires nonzero mass")
    lo = i_sqrt_shift(m)
    b = OperatorExpr.make({inv_sqrt_shift(m): 1j})
    labels = ("o", "ob")
    return EquationSpec(
        name="sg",
        plus_ops={"o": lo, "ob": -lo},
        potentials={"0": Potential(), "1": Potential()},
        interactions={(o, d): labels for o in labels for d in ("0", "1")},
        factors={
            ("0", "o", "o"): Trig("sin", 1.0, 0.5),
            ("0", "o", "ob"): Trig("cos", 1.0, 0.5),
            ("1", "o", "o"): Trig("cos", 1.0, 0.5),
            ("1", "o", "ob"): Trig("sin", 1.0, 0.5),
            ("0", "ob", "o"): Trig("cos", 1.0, 0.5),
            ("0", "ob", "ob"): Trig("sin", 1.0, 0.5),
            ("1", "ob", "o"): Trig("sin", 1.0, 0.5),
            ("1", "ob", "ob"): Trig("cos", 1.0, 0.5),
        },
        outer={("o", "0"): b, ("o", "1"): b,
               ("ob", "0"): -b, ("ob", "1"): -b},
        conj_pairs={"o": "ob"},
        admit_margin=0.5,
        mass=Fraction(m),
    )


EQUATIONS = {"nls": nls, "gp": gross_pitaevskii, "sg": sine_gordon}


def get_equation(name: str, m=1) -> EquationSpec:
    if name not in EQUATIONS:
        raise KeyError(f"unknown equation {name!r}")
    return sine_gordon(m) if name == "sg" else EQUATIONS[name]()
