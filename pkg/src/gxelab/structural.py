"""Structural choice model of outcome production under genetic and
environmental heterogeneity.

An agent picks effort x to maximize F(x, G, E, e) - C(x, G, E, e). The
quadratic-cost linear specialization has production

    F = f_x*x + f_e*E + f_g*G + f_xe*x*E + f_xg*x*G + f_ge*G*E + e_f

and cost C = x^2 / (2*kappa) with inverse marginal cost
kappa = k_0 + k_e*E + k_g*G + e_k, which yields the closed form
x* = kappa * (f_x + f_xe*E + f_xg*G) and a cubic reduced-form polynomial in
(G, E). The generic interface takes user callables F(x, G, E, e) and
C(x, G, E, e) and works by safeguarded Newton on the first-order condition
plus central finite differences.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .util import SimulationError, child_rng

FOC_TOL = 1e-13
SOLVER_BOUNDS = (-1e3, 1e3)
MAX_ITER = 200


class ModelDomainError(ValueError):
    """Inputs outside the model's admissible region (e.g. 1/c <= 0)."""


class SolverError(RuntimeError):
    """The first-order condition has no root in the configured bounds."""


class ModelError(RuntimeError):
    """The second-order condition fails at the candidate optimum."""


@dataclass(frozen=True)
class StructuralParams:
    f_x: float
    f_e: float
    f_g: float
    f_xe: float
    f_xg: float
    f_ge: float
    k_0: float
    k_e: float
    k_g: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StructuralParams":
        data = json.loads(text)
        expected = set(cls.__dataclass_fields__)
        if set(data) != expected:
            raise ModelDomainError(f"expected exactly fields {sorted(expected)}, got {sorted(data)}")
        return cls(**{k: float(v) for k, v in data.items()})

    def inverse_cost(self, G, E, e_k=0.0):
        return self.k_0 + self.k_e * np.asarray(E) + self.k_g * np.asarray(G) + e_k

    def marginal_product(self, G, E):
        return self.f_x + self.f_xe * np.asarray(E) + self.f_xg * np.asarray(G)


@dataclass(frozen=True)
class AgentState:
    G: float
    E: float
    e_f: float = 0.0
    e_k: float = 0.0

    def __post_init__(self):
        if not all(np.isfinite([self.G, self.E, self.e_f, self.e_k])):
            raise ModelDomainError("agent state must be finite")

    @property
    def shocks(self) -> tuple[float, float]:
        return (self.e_f, self.e_k)


def optimal_effort(p: StructuralParams, s: AgentState) -> float:
    """Closed-form optimum of the quadratic-cost specialization."""
    inv_c = p.inverse_cost(s.G, s.E, s.e_k)
    if inv_c <= 0:
        raise ModelDomainError(f"inverse cost {inv_c} is not positive")
    return float(inv_c * p.marginal_product(s.G, s.E))


def produce(p: StructuralParams, s: AgentState) -> tuple[float, float, float]:
    """(x*, produced outcome Y, realized value V) at the optimum."""
    x = optimal_effort(p, s)
    Y = (p.f_x * x + p.f_e * s.E + p.f_g * s.G
         + p.f_xe * x * s.E + p.f_xg * x * s.G + p.f_ge * s.G * s.E + s.e_f)
    c = 1.0 / p.inverse_cost(s.G, s.E, s.e_k)
    V = Y - 0.5 * c * x * x
    return x, float(Y), float(V)


def quadratic_production(p: StructuralParams):
    """The specialization as a generic-production callable F(x, G, E, e)."""
    def F(x, G, E, e):
        e_f = e[0]
        return (p.f_x * x + p.f_e * E + p.f_g * G
                + p.f_xe * x * E + p.f_xg * x * G + p.f_ge * G * E + e_f)
    return F


def quadratic_cost(p: StructuralParams):
    """The specialization's cost callable C(x, G, E, e)."""
    def C(x, G, E, e):
        e_k = e[1]
        inv_c = p.inverse_cost(G, E, e_k)
        return 0.5 * x * x / inv_c
    return C


# ---------------------------------------------------------------------------
# Generic machinery: FOC solver and finite differences
# ---------------------------------------------------------------------------

def _step(h: float, value: float) -> float:
    return h * max(1.0, abs(value))


def solve_effort(production, cost, G: float, E: float, e, h: float = 1e-4,
                 bounds: tuple[float, float] = SOLVER_BOUNDS) -> float:
    """Root of F_x - C_x by safeguarded Newton with bisection fallback."""
    def foc(x):
        hx = _step(h, x)
        f_x = (production(x + hx, G, E, e) - production(x - hx, G, E, e)) / (2 * hx)
        c_x = (cost(x + hx, G, E, e) - cost(x - hx, G, E, e)) / (2 * hx)
        return f_x - c_x

    lo, hi = bounds
    flo, fhi = foc(lo), foc(hi)
    if flo * fhi > 0:
        raise SolverError(f"FOC not bracketed in {bounds}: foc({lo})={flo:.3g}, foc({hi})={fhi:.3g}")
    x = 0.0 if lo < 0.0 < hi else 0.5 * (lo + hi)
    # rounding floor of the FD first-order condition near the optimum
    scale = max(1.0, abs(production(x, G, E, e)), abs(cost(x, G, E, e)))
    floor = 64.0 * np.finfo(float).eps * scale / (2.0 * _step(h, x))
    best_x, best_f = x, np.inf
    for _ in range(MAX_ITER):
        fx = foc(x)
        if abs(fx) < best_f:
            best_x, best_f = x, abs(fx)
        if abs(fx) <= max(floor, FOC_TOL):
            break
        if fx * flo < 0:
            hi = x
        else:
            lo, flo = x, fx
        hx = _step(h, x)
        dfx = (foc(x + hx) - foc(x - hx)) / (2 * hx)
        x_new = x - fx / dfx if dfx != 0 and np.isfinite(dfx) else 0.5 * (lo + hi)
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-15 * max(1.0, abs(x)):
            break
        x = x_new
    x = best_x
    hx = _step(h, x)
    soc = (foc(x + hx) - foc(x - hx)) / (2 * hx)
    if soc >= 0:
        raise ModelError(f"second-order condition violated at x*={x:.6g} (F_xx - C_xx = {soc:.3g})")
    return float(x)


@dataclass(frozen=True)
class DecompositionReport:
    """The five channels of the outcome cross-partial d2Y*/dGdE."""
    tech_gxe: float
    g_choice_comp: float
    e_choice_comp: float
    choice_gxe: float
    tech_nonlinearities: float

    @property
    def total(self) -> float:
        return (self.tech_gxe + self.g_choice_comp + self.e_choice_comp
                + self.choice_gxe + self.tech_nonlinearities)


def _effort_surface(production, cost, s: AgentState, h: float):
    """x* at the center and the 8 (G, E) offsets used by the finite differences."""
    hg, he = _step(h, s.G), _step(h, s.E)
    grid = {}
    for dg in (-1, 0, 1):
        for de in (-1, 0, 1):
            grid[(dg, de)] = solve_effort(production, cost, s.G + dg * hg, s.E + de * he, s.shocks, h)
    return grid, hg, he


def gxe_decomposition(production, cost, s: AgentState, h: float = 1e-4) -> DecompositionReport:
    """Split d2Y*/dGdE into its five mechanism terms.

    Terms: interaction inside the production technology at fixed effort;
    gene-choice and environment-choice complementarities; the interaction of
    the optimal choice itself; and curvature (F_xx) times both effort slopes.
    """
    grid, hg, he = _effort_surface(production, cost, s, h)
    x0 = grid[(0, 0)]
    G, E, e = s.G, s.E, s.shocks
    hx = _step(h, x0)

    def F(x, g_, e_):
        return production(x, g_, e_, e)

    f_x = (F(x0 + hx, G, E) - F(x0 - hx, G, E)) / (2 * hx)
    f_xx = (F(x0 + hx, G, E) - 2 * F(x0, G, E) + F(x0 - hx, G, E)) / (hx * hx)
    f_ge = (F(x0, G + hg, E + he) - F(x0, G + hg, E - he)
            - F(x0, G - hg, E + he) + F(x0, G - hg, E - he)) / (4 * hg * he)
    f_gx = (F(x0 + hx, G + hg, E) - F(x0 + hx, G - hg, E)
            - F(x0 - hx, G + hg, E) + F(x0 - hx, G - hg, E)) / (4 * hg * hx)
    f_ex = (F(x0 + hx, G, E + he) - F(x0 + hx, G, E - he)
            - F(x0 - hx, G, E + he) + F(x0 - hx, G, E - he)) / (4 * he * hx)

    x_e = (grid[(0, 1)] - grid[(0, -1)]) / (2 * he)
    x_g = (grid[(1, 0)] - grid[(-1, 0)]) / (2 * hg)
    x_ge = (grid[(1, 1)] - grid[(1, -1)] - grid[(-1, 1)] + grid[(-1, -1)]) / (4 * hg * he)

    return DecompositionReport(
        tech_gxe=float(f_ge),
        g_choice_comp=float(f_gx * x_e),
        e_choice_comp=float(f_ex * x_g),
        choice_gxe=float(f_x * x_ge),
        tech_nonlinearities=float(f_xx * x_e * x_g),
    )


def outcome_cross_partial(production, cost, s: AgentState, h: float = 1e-4) -> float:
    """Direct central finite difference of Y*(G, E) = F(x*(G, E), G, E, e).

    Independent of the decomposition path; used as its oracle.
    """
    hg, he = _step(h, s.G), _step(h, s.E)

    def y_star(g_, e_):
        x = solve_effort(production, cost, g_, e_, s.shocks, h)
        return production(x, g_, e_, s.shocks)

    return (y_star(s.G + hg, s.E + he) - y_star(s.G + hg, s.E - he)
            - y_star(s.G - hg, s.E + he) + y_star(s.G - hg, s.E - he)) / (4 * hg * he)


def effort_slopes(production, cost, s: AgentState, h: float = 1e-4) -> tuple[float, float, float]:
    """(dx*/dE, dx*/dG, d2x*/dGdE).

    First-order slopes are central differences of the solved optimum; the
    cross slope goes through the implicit-FOC derivative, which is the only
    numerically clean way to second-differentiate the optimum.
    """
    grid, hg, he = _effort_surface(production, cost, s, h)
    x_e = (grid[(0, 1)] - grid[(0, -1)]) / (2 * he)
    x_g = (grid[(1, 0)] - grid[(-1, 0)]) / (2 * hg)
    x_ge = _implicit_cross_slope(production, cost, s.G, s.E, s.shocks, h)
    return float(x_e), float(x_g), float(x_ge)


@dataclass(frozen=True)
class MarginalEffects:
    dY_dE: float
    dY_dG: float
    direct_E: float
    direct_G: float
    behavioral_E: float
    behavioral_G: float


def marginal_effects(production, cost, s: AgentState, h: float = 1e-4) -> MarginalEffects:
    """dY*/dE and dY*/dG split into technology and behavioral-response parts."""
    grid, hg, he = _effort_surface(production, cost, s, h)
    x0 = grid[(0, 0)]
    G, E, e = s.G, s.E, s.shocks
    hx = _step(h, x0)
    f_x = (production(x0 + hx, G, E, e) - production(x0 - hx, G, E, e)) / (2 * hx)
    f_e = (production(x0, G, E + he, e) - production(x0, G, E - he, e)) / (2 * he)
    f_g = (production(x0, G + hg, E, e) - production(x0, G - hg, E, e)) / (2 * hg)
    x_e = (grid[(0, 1)] - grid[(0, -1)]) / (2 * he)
    x_g = (grid[(1, 0)] - grid[(-1, 0)]) / (2 * hg)
    return MarginalEffects(
        dY_dE=float(f_e + f_x * x_e),
        dY_dG=float(f_g + f_x * x_g),
        direct_E=float(f_e),
        direct_G=float(f_g),
        behavioral_E=float(f_x * x_e),
        behavioral_G=float(f_x * x_g),
    )


def value_function(production, cost, s: AgentState, h: float = 1e-4) -> tuple[float, float, float]:
    """(x*, Y*, V) for generic callables."""
    x = solve_effort(production, cost, s.G, s.E, s.shocks, h)
    y = production(x, s.G, s.E, s.shocks)
    v = y - cost(x, s.G, s.E, s.shocks)
    return float(x), float(y), float(v)


def _cross_partial(f, a: float, b: float, ha: float, hb: float) -> float:
    return (f(a + ha, b + hb) - f(a + ha, b - hb) - f(a - ha, b + hb) + f(a - ha, b - hb)) / (4 * ha * hb)


def _implicit_slope(production, cost, x: float, G: float, E: float, e, wrt: str) -> float:
    """dx*/dE or dx*/dG from the first-order condition's implicit derivative,
    (C_xv - F_xv) / (F_xx - C_xx), evaluated at the solved optimum.

    Uses a 1e-3-scaled step: second differences at 1e-4 sit at the eps/h^2
    rounding floor, whose jitter would dominate any outer derivative of the
    slope; the larger step trades that for a smooth O(h^2) bias.
    """
    hx = _step(1e-3, x)
    if wrt == "E":
        hv = _step(1e-3, E)
        f_xv = _cross_partial(lambda xx, v: production(xx, G, v, e), x, E, hx, hv)
        c_xv = _cross_partial(lambda xx, v: cost(xx, G, v, e), x, E, hx, hv)
    else:
        hv = _step(1e-3, G)
        f_xv = _cross_partial(lambda xx, v: production(xx, v, E, e), x, G, hx, hv)
        c_xv = _cross_partial(lambda xx, v: cost(xx, v, E, e), x, G, hx, hv)
    f_xx = (production(x + hx, G, E, e) - 2 * production(x, G, E, e) + production(x - hx, G, E, e)) / (hx * hx)
    c_xx = (cost(x + hx, G, E, e) - 2 * cost(x, G, E, e) + cost(x - hx, G, E, e)) / (hx * hx)
    return (c_xv - f_xv) / (f_xx - c_xx)


def _implicit_cross_slope(production, cost, G: float, E: float, e, h: float) -> float:
    """d2x*/dGdE: outer central difference (1e-3-scaled step) of the implicit
    environment slope, re-solving the optimum at each G offset."""
    hg = _step(1e-3, G)

    def x_e_at(g_: float) -> float:
        xg_ = solve_effort(production, cost, g_, E, e, h)
        return _implicit_slope(production, cost, xg_, g_, E, e, "E")

    return (x_e_at(G + hg) - x_e_at(G - hg)) / (2 * hg)


def welfare_gap(production, cost, s: AgentState, h: float = 1e-4) -> float:
    """d2V/dGdE - d2Y*/dGdE, which equals -d2C*/dGdE.

    Expanded as -(C_xx*x_G*x_E + C_xG*x_E + C_xE*x_G + C_x*x_GE + C_GE) with
    every ingredient a central finite difference at the solved optimum; the
    effort slopes use the implicit first-order-condition derivatives, which
    keeps solver noise out of the second differences.
    """
    G, E, e = s.G, s.E, s.shocks
    x0 = solve_effort(production, cost, G, E, e, h)
    hg, he = _step(h, G), _step(h, E)
    hx = _step(h, x0)

    x_e = _implicit_slope(production, cost, x0, G, E, e, "E")
    x_g = _implicit_slope(production, cost, x0, G, E, e, "G")
    x_ge = _implicit_cross_slope(production, cost, G, E, e, h)

    def C(xx, g_, e_):
        return cost(xx, g_, e_, e)

    c_x = (C(x0 + hx, G, E) - C(x0 - hx, G, E)) / (2 * hx)
    c_xx = (C(x0 + hx, G, E) - 2 * C(x0, G, E) + C(x0 - hx, G, E)) / (hx * hx)
    c_xg = _cross_partial(lambda xx, g_: C(xx, g_, E), x0, G, hx, hg)
    c_xe = _cross_partial(lambda xx, e_: C(xx, G, e_), x0, E, hx, he)
    c_ge = _cross_partial(lambda g_, e_: C(x0, g_, e_), G, E, hg, he)

    return float(-(c_xx * x_g * x_e + c_xg * x_e + c_xe * x_g + c_x * x_ge + c_ge))


# ---------------------------------------------------------------------------
# Exact reduced form of the quadratic-cost specialization
# ---------------------------------------------------------------------------

REDUCED_FORM_TERMS = ["intercept", "G", "E", "GxE", "G2", "E2", "G3", "E3", "G2E", "GE2"]


@dataclass(frozen=True)
class ReducedForm:
    """Coefficients of the mean outcome path on the 10-monomial basis."""
    intercept: float
    G: float
    E: float
    GxE: float
    G2: float
    E2: float
    G3: float
    E3: float
    G2E: float
    GE2: float

    def as_dict(self) -> dict[str, float]:
        return {t: getattr(self, t) for t in REDUCED_FORM_TERMS}

    def coefficients(self) -> np.ndarray:
        return np.array([getattr(self, t) for t in REDUCED_FORM_TERMS])


def reduced_form(p: StructuralParams) -> ReducedForm:
    """Collect Y = kappa*phi^2 + f_e*E + f_g*G + f_ge*G*E on the monomial basis.

    kappa = k_0 + k_e*E + k_g*G and phi = f_x + f_xe*E + f_xg*G on the
    e_k = e_f = 0 mean path; the expansion is exact in double precision.
    """
    fx, fxe, fxg = p.f_x, p.f_xe, p.f_xg
    k0, ke, kg = p.k_0, p.k_e, p.k_g
    return ReducedForm(
        intercept=k0 * fx * fx,
        G=p.f_g + 2 * k0 * fx * fxg + kg * fx * fx,
        E=p.f_e + 2 * k0 * fx * fxe + ke * fx * fx,
        GxE=p.f_ge + 2 * (k0 * fxe * fxg + ke * fx * fxg + kg * fx * fxe),
        G2=k0 * fxg * fxg + 2 * kg * fx * fxg,
        E2=k0 * fxe * fxe + 2 * ke * fx * fxe,
        G3=kg * fxg * fxg,
        E3=ke * fxe * fxe,
        G2E=ke * fxg * fxg + 2 * kg * fxe * fxg,
        GE2=kg * fxe * fxe + 2 * ke * fxe * fxg,
    )


def monomial_basis(G: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Design matrix over the 10 reduced-form terms, column order as REDUCED_FORM_TERMS."""
    G = np.asarray(G, dtype=float)
    E = np.asarray(E, dtype=float)
    return np.column_stack([
        np.ones_like(G), G, E, G * E, G * G, E * E, G**3, E**3, G * G * E, G * E * E,
    ])


# ---------------------------------------------------------------------------
# Vectorized simulation on the quadratic path
# ---------------------------------------------------------------------------

def simulate_outcomes(
    p: StructuralParams,
    G: np.ndarray,
    E: np.ndarray,
    e_f_sd: float = 0.0,
    e_k_sd: float = 0.0,
    seed: int = 0,
    max_reject_rate: float = 0.01,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Draw shocks, resolve optima and outcomes for many agents at once.

    e_k draws that push the inverse cost non-positive are redrawn; the final
    rejection rate is returned and rates above max_reject_rate abort.
    """
    G = np.asarray(G, dtype=float)
    E = np.asarray(E, dtype=float)
    rng = child_rng(seed, 3)
    e_f = rng.standard_normal(G.shape) * e_f_sd if e_f_sd > 0 else np.zeros(G.shape)
    e_k = rng.standard_normal(G.shape) * e_k_sd if e_k_sd > 0 else np.zeros(G.shape)
    base = p.inverse_cost(G, E, 0.0)
    if np.any(base + e_k <= 0) and e_k_sd == 0:
        raise ModelDomainError("inverse cost non-positive on the shock-free path")
    n_redraw = 0
    if e_k_sd > 0:
        for _ in range(100):
            bad = base + e_k <= 0
            if not bad.any():
                break
            n_redraw += int(bad.sum())
            e_k[bad] = rng.standard_normal(int(bad.sum())) * e_k_sd
        else:
            raise SimulationError("inverse-cost rejection did not terminate")
    reject_rate = n_redraw / G.size if G.size else 0.0
    if reject_rate > max_reject_rate:
        raise SimulationError(f"inverse-cost rejection rate {reject_rate:.3%} exceeds {max_reject_rate:.1%}")
    inv_c = base + e_k
    phi = p.marginal_product(G, E)
    x = inv_c * phi
    Y = x * phi + p.f_e * E + p.f_g * G + p.f_ge * G * E + e_f
    V = Y - 0.5 * x * x / inv_c
    return x, Y, V, reject_rate
