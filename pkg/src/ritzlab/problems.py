"""Catalog of variational problems.

A problem packages the bilinear form, the load functional, the test
norm, the kind of trial-to-test operator, boundary cutoffs, and the
exact solution when known.  Form and norm data are derivative-term
descriptors so training losses can be assembled generically:

* ``b_terms``: tuples ``(du, dv, coeff)`` adding
  ``coeff * integral(D^du u * D^dv v)`` with one derivative order per axis;
* ``load_terms``: tuples ``(dv, density)`` adding
  ``integral(density(x) * D^dv v)``;
* ``point_loads``: tuples ``(coeff, point)`` adding ``coeff * v(point)``;
* norms: tuples of forms ``(combination, weight)``, each adding
  ``weight * integral((sum_j c_j * D^{d_j} w)^2)`` for pairs
  ``(d_j, c_j)`` in ``combination``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .network import CUTOFFS, Cutoff

__all__ = [
    "VariationalProblem",
    "poisson_weak",
    "poisson_strong",
    "poisson_ultraweak",
    "convection_ultraweak",
    "convection_2d",
    "dirac_diffusion_ch5",
    "catalog",
    "catalog_ids",
]


def _sq(deriv, weight=1.0):
    """One squared-term norm contribution: weight * int (D^deriv w)^2."""
    d = (deriv,) if isinstance(deriv, int) else tuple(deriv)
    return (((d, 1.0),), weight)


H1_SEMI_1D = (_sq(1),)
L2_1D = (_sq(0),)
GRAPH_CONVECTION = (_sq(1), _sq(0))
UW_SECOND = (_sq(2),)
L2_2D = (_sq((0, 0)),)
GRAPH_2D = (_sq((0, 0)), ((((1, 0), 1.0), ((0, 1), 1.0)), 1.0))


@dataclass(frozen=True)
class VariationalProblem:
    name: str
    dim: int
    form: str
    t_kind: str
    b_terms: tuple
    trial_norm: tuple
    test_norm: tuple
    load_terms: tuple = ()
    point_loads: tuple = ()
    trial_cutoff: Cutoff | None = None
    test_cutoff: Cutoff | None = None
    exact: object = None
    exact_grad: object = None
    t_exact: object = None
    t_exact_grad: object = None
    adjoint: tuple | None = None        # A' as (deriv, coeff) terms on v
    exact_trial_norm: float | None = None
    exact_test_norm: float | None = None
    params: dict = field(default_factory=dict)

    def pde_operator_terms(self) -> tuple:
        """A as (deriv, coeff) terms on u, valid when t_kind is pde-operator."""
        if self.t_kind != "pde-operator":
            raise ValueError(f"{self.name} has no computable PDE operator")
        return tuple((du, c) for du, dv, c in self.b_terms)


def _const(value):
    def f(x):
        x = np.asarray(x, dtype=float)
        n = x.shape[0] if x.ndim > 1 else x.size
        return np.full(n, value)
    return f


def _quadratic(x):
    x = np.asarray(x, dtype=float)
    return x * (x - 1.0)


def _quadratic_grad(x):
    x = np.asarray(x, dtype=float)
    return 2.0 * x - 1.0


def poisson_weak(source="f=-2") -> VariationalProblem:
    """-u'' = f on (0,1), u(0)=u(1)=0, integrated by parts once.

    b(u,v) = int u'v', the test inner product equals b, and the
    trial-to-test operator is the identity.

    Sources: ``"f=-2"`` (u* = x(x-1)); ``("xalpha", a)`` manufactured
    u* = x^a (x-1) whose load is written as int (u*)' v', which stays
    integrable through the singular range 1/2 < a < 1 and keeps the same
    minimizer; ``"dirac"`` for the point load 4*delta_{1/2} with the
    piecewise-linear corner solution.
    """
    cut = CUTOFFS["x(1-x)"]
    common = dict(
        dim=1,
        form="weak",
        t_kind="identity",
        b_terms=(((1,), (1,), 1.0),),
        trial_norm=H1_SEMI_1D,
        test_norm=H1_SEMI_1D,
        trial_cutoff=cut,
        test_cutoff=cut,
    )
    if source == "f=-2":
        return VariationalProblem(
            name="poisson-weak-quadratic",
            load_terms=(((0,), _const(-2.0)),),
            exact=_quadratic,
            exact_grad=_quadratic_grad,
            t_exact=_quadratic,
            t_exact_grad=_quadratic_grad,
            exact_trial_norm=np.sqrt(3.0) / 3.0,
            exact_test_norm=np.sqrt(3.0) / 3.0,
            params={"optimal_value": -1.0 / 6.0},
            **common,
        )
    if source == "dirac":
        def corner(x):
            x = np.asarray(x, dtype=float)
            return np.where(x < 0.5, 2.0 * x, 2.0 * (1.0 - x))

        def corner_grad(x):
            x = np.asarray(x, dtype=float)
            return np.where(x < 0.5, 2.0, -2.0)

        return VariationalProblem(
            name="poisson-weak-dirac",
            point_loads=((4.0, (0.5,)),),
            exact=corner,
            exact_grad=corner_grad,
            t_exact=corner,
            t_exact_grad=corner_grad,
            exact_trial_norm=2.0,
            exact_test_norm=2.0,
            params={"optimal_value": -2.0},
            **common,
        )
    if isinstance(source, tuple) and source[0] == "xalpha":
        alpha = float(source[1])
        if alpha <= 0.5:
            raise ValueError("x^alpha (x-1) leaves H1 for alpha <= 1/2")

        def exact(x):
            x = np.asarray(x, dtype=float)
            return x ** alpha * (x - 1.0)

        def exact_grad(x):
            x = np.asarray(x, dtype=float)
            return alpha * x ** (alpha - 1.0) * (x - 1.0) + x ** alpha

        return VariationalProblem(
            name=f"poisson-weak-xalpha:{alpha:g}",
            load_terms=(((1,), exact_grad),),
            exact=exact,
            exact_grad=exact_grad,
            t_exact=exact,
            t_exact_grad=exact_grad,
            params={"alpha": alpha},
            **common,
        )
    raise ValueError(f"unknown weak Poisson source {source!r}")


def poisson_strong() -> VariationalProblem:
    """-u'' = -2 without integration by parts: V = L2, Tu = -u''."""
    return VariationalProblem(
        name="poisson-strong",
        dim=1,
        form="strong",
        t_kind="pde-operator",
        b_terms=(((2,), (0,), -1.0),),
        trial_norm=H1_SEMI_1D,
        test_norm=L2_1D,
        load_terms=(((0,), _const(-2.0)),),
        trial_cutoff=CUTOFFS["x(1-x)"],
        exact=_quadratic,
        exact_grad=_quadratic_grad,
        t_exact=_const(-2.0),
        exact_trial_norm=np.sqrt(3.0) / 3.0,
        params={"optimal_value": -2.0},
    )


def poisson_ultraweak() -> VariationalProblem:
    """-u'' = -2 integrated by parts twice: trial L2, (v,v)_V = int (v'')^2."""
    return VariationalProblem(
        name="poisson-ultraweak",
        dim=1,
        form="ultraweak-diffusion",
        t_kind="implicit",
        b_terms=(((0,), (2,), -1.0),),
        trial_norm=L2_1D,
        test_norm=UW_SECOND,
        load_terms=(((0,), _const(-2.0)),),
        test_cutoff=CUTOFFS["x(1-x)"],
        exact=_quadratic,
        exact_grad=_quadratic_grad,
        exact_trial_norm=np.sqrt(1.0 / 30.0),  # ||x(x-1)||_L2
    )


def convection_ultraweak() -> VariationalProblem:
    """u' = delta_{1/2} on (0,1), u(0)=0, in ultraweak form.

    b(u,v) = -int u v', l(v) = v(1/2), trial L2, test {v : v(1)=0} with
    the graph norm of A' = -d/dx; (Tu)(x) = int_x^1 u.
    """
    def exact(x):
        x = np.asarray(x, dtype=float)
        return np.where(x < 0.5, 0.0, 1.0)

    def t_exact(x):
        x = np.asarray(x, dtype=float)
        return np.where(x < 0.5, 0.5, 1.0 - x)

    return VariationalProblem(
        name="convection-ultraweak",
        dim=1,
        form="ultraweak-convection",
        t_kind="integral-convection",
        b_terms=(((0,), (1,), -1.0),),
        trial_norm=L2_1D,
        test_norm=GRAPH_CONVECTION,
        point_loads=((1.0, (0.5,)),),
        test_cutoff=CUTOFFS["1-x"],
        exact=exact,
        t_exact=t_exact,
        t_exact_grad=lambda x: -exact(x),
        adjoint=(((1,), -1.0),),
        exact_trial_norm=np.sqrt(0.5),
        exact_test_norm=np.sqrt(2.0 / 3.0),
    )


def convection_2d(k: float = 1.5) -> VariationalProblem:
    """u_x + u_y = k*pi*sin(k*pi*(x+y)) on the unit square, zero inflow.

    Strong form: V = L2, the trial-to-test operator is the PDE operator,
    inflow condition imposed with the x*y cutoff.  The consistent exact
    solution is sin(k*pi*x)*sin(k*pi*y).
    """
    if k <= 0:
        raise ValueError("k must be positive")
    kp = k * np.pi

    def exact(p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        return np.sin(kp * p[:, 0]) * np.sin(kp * p[:, 1])

    def exact_grad(p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        gx = kp * np.cos(kp * p[:, 0]) * np.sin(kp * p[:, 1])
        gy = kp * np.sin(kp * p[:, 0]) * np.cos(kp * p[:, 1])
        return np.column_stack([gx, gy])

    def source(p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        return kp * np.sin(kp * (p[:, 0] + p[:, 1]))

    return VariationalProblem(
        name=f"convection-2d:{k:g}",
        dim=2,
        form="strong-2d",
        t_kind="pde-operator",
        b_terms=(((1, 0), (0, 0), 1.0), ((0, 1), (0, 0), 1.0)),
        trial_norm=GRAPH_2D,
        test_norm=L2_2D,
        load_terms=(((0, 0), source),),
        trial_cutoff=CUTOFFS["xy"],
        exact=exact,
        exact_grad=exact_grad,
        t_exact=source,  # Tu* = Au* equals the source density
        params={"k": k},
    )


def dirac_diffusion_ch5() -> VariationalProblem:
    """Weak-form Ritz problem for -u'' = 4*delta_{1/2} (single-parameter study)."""
    return replace(poisson_weak("dirac"), name="dirac-diffusion-ch5")


def catalog(problem_id: str) -> VariationalProblem:
    """Resolve a string id like ``poisson-weak-xalpha:0.7``."""
    if problem_id == "poisson-weak-quadratic":
        return poisson_weak("f=-2")
    if problem_id == "poisson-weak-dirac":
        return poisson_weak("dirac")
    if problem_id.startswith("poisson-weak-xalpha:"):
        return poisson_weak(("xalpha", float(problem_id.split(":", 1)[1])))
    if problem_id == "poisson-strong":
        return poisson_strong()
    if problem_id == "poisson-ultraweak":
        return poisson_ultraweak()
    if problem_id == "convection-ultraweak":
        return convection_ultraweak()
    if problem_id.startswith("convection-2d:"):
        return convection_2d(float(problem_id.split(":", 1)[1]))
    if problem_id == "dirac-diffusion-ch5":
        return dirac_diffusion_ch5()
    raise KeyError(f"unknown problem id {problem_id!r}")


def catalog_ids() -> list[str]:
    return [
        "poisson-weak-quadratic",
        "poisson-weak-xalpha:<alpha>",
        "poisson-weak-dirac",
        "poisson-strong",
        "poisson-ultraweak",
        "convection-ultraweak",
        "convection-2d:<k>",
        "dirac-diffusion-ch5",
    ]
