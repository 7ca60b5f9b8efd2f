"""Monte Carlo power analysis and randomization inference for interaction
effects.

The power simulator draws replicated datasets from
Y = beta_g*G + beta_e*E + beta_x*G*E + eps (G, eps standard normal, E
Bernoulli) and counts HC1 rejections of the interaction. Common random
numbers across beta_x evaluations make estimated power exactly monotone in
the effect size, which keeps the minimum-detectable-effect bisection clean.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .gxe import GxeModelSpec, fit_gxe
from .regress import batched_ols_hc1, pvalue_from_z
from .util import CalibrationError, ConfigError, child_rng, indexed_map

POWER_CHUNK = 256
PERM_CHUNK = 256


@dataclass(frozen=True)
class PowerSpec:
    beta_g: float
    beta_e: float
    beta_x: float
    n: int
    treated_share: float = 0.5
    alpha: float = 0.05
    reps: int = 1000

    def __post_init__(self):
        if self.reps < 100:
            raise ConfigError("reps must be >= 100")
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError("alpha must be in (0, 1)")
        if not (0.0 < self.treated_share < 1.0):
            raise ConfigError("treated share must be in (0, 1)")
        if self.n < 10:
            raise ConfigError("n too small to fit the interaction model")


@dataclass
class PowerCurve:
    beta_x: np.ndarray
    power: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    n: int
    reps: int


def _interaction_pvalues(spec: PowerSpec, seed: int, threads: int = 1) -> np.ndarray:
    """HC1 p-values of the interaction term, one per replicate."""
    chunks = [(c, min(POWER_CHUNK, spec.reps - c * POWER_CHUNK))
              for c in range((spec.reps + POWER_CHUNK - 1) // POWER_CHUNK)]
    out = np.empty(spec.reps)

    def work(ci: int):
        idx, size = chunks[ci]
        rng = child_rng(seed, 51, idx)
        G = rng.standard_normal((size, spec.n))
        E = (rng.random((size, spec.n)) < spec.treated_share).astype(float)
        eps = rng.standard_normal((size, spec.n))
        Y = spec.beta_g * G + spec.beta_e * E + spec.beta_x * G * E + eps
        X = np.stack([np.ones_like(G), G, E, G * E], axis=2)
        beta, se = batched_ols_hc1(Y, X)
        out[idx * POWER_CHUNK: idx * POWER_CHUNK + size] = pvalue_from_z(beta[:, 3] / se[:, 3])

    indexed_map(work, len(chunks), threads)
    return out


def power_simulate(spec: PowerSpec, seed: int, threads: int = 1) -> float:
    """Share of replicates whose interaction p-value falls below alpha."""
    p = _interaction_pvalues(spec, seed, threads)
    return float((p < spec.alpha).mean())


def power_curve(spec: PowerSpec, beta_x_grid: np.ndarray, seed: int, threads: int = 1) -> PowerCurve:
    grid = np.asarray(beta_x_grid, dtype=float)
    power = np.array([power_simulate(replace(spec, beta_x=b), seed, threads) for b in grid])
    half = 1.96 * np.sqrt(power * (1 - power) / spec.reps)
    return PowerCurve(beta_x=grid, power=power,
                      ci_lo=np.clip(power - half, 0, 1), ci_hi=np.clip(power + half, 0, 1),
                      n=spec.n, reps=spec.reps)


def mde(
    spec: PowerSpec,
    target_power: float = 0.8,
    seed: int = 0,
    threads: int = 1,
    power_tol: float = 0.01,
    width_tol: float = 0.005,
) -> float:
    """Smallest interaction coefficient reaching the target power, by
    bisection over [0, 1] with common random numbers across evaluations.

    Stops when the estimated power is within power_tol of the target or the
    bracket is narrower than width_tol; returns the bracket midpoint.
    """
    def power_at(b: float) -> float:
        return power_simulate(replace(spec, beta_x=b), seed, threads)

    lo, hi = 0.0, 1.0
    if power_at(hi) < target_power:
        raise CalibrationError(f"target power {target_power} unreachable with beta_x <= 1")
    while hi - lo > width_tol:
        mid = 0.5 * (lo + hi)
        p = power_at(mid)
        if abs(p - target_power) < power_tol:
            return mid
        if p < target_power:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Randomization inference
# ---------------------------------------------------------------------------

@dataclass
class PermutationResult:
    observed_coef: float
    observed_t: float
    coef_percentile: float
    t_percentile: float
    null_coefs: np.ndarray
    null_ts: np.ndarray
    envelopes: dict[int, tuple[float, float]]    # coefficient bounds
    t_envelopes: dict[int, tuple[float, float]]  # studentized bounds

    def outside_envelope(self, level: int = 95, stat: str = "t") -> bool:
        """Whether the observed statistic escapes the null envelope. The
        studentized statistic is the default: permuted outcomes keep the
        alternative's full variance, which widens the raw-coefficient null."""
        if stat == "t":
            lo, hi = self.t_envelopes[level]
            return not (lo <= self.observed_t <= hi)
        lo, hi = self.envelopes[level]
        return not (lo <= self.observed_coef <= hi)


def _percentile(null: np.ndarray, observed: float) -> float:
    return float((null <= observed).mean())


def permutation_test(
    data: dict[str, np.ndarray],
    fit_spec: GxeModelSpec,
    n_perm: int = 1000,
    seed: int = 0,
    joint: bool = True,
    threads: int = 1,
) -> PermutationResult:
    """Placebo distribution of the interaction estimate.

    Each draw re-assigns the (G, E) pair across individuals -- one shared row
    permutation by default, so G and E keep their mutual relation but lose
    any link to Y -- and refits the model. joint=False permutes G and E
    independently instead.
    """
    if n_perm < 100:
        raise ConfigError("n_perm must be >= 100")
    if fit_spec.se != "hc1":
        raise ConfigError("permutation inference supports HC1 fits")
    observed = fit_gxe(data, fit_spec)
    obs_coef = observed.coef("GxE")
    obs_t = obs_coef / observed.se("GxE")

    n = len(np.asarray(data["Y"]))
    stat_index, names, fixed_cols = _permutation_design(data, fit_spec)
    Y = np.asarray(data["Y"], dtype=float)
    G = np.asarray(data["G"], dtype=float)
    E = np.asarray(data["E"], dtype=float)

    chunks = [(c, min(PERM_CHUNK, n_perm - c * PERM_CHUNK))
              for c in range((n_perm + PERM_CHUNK - 1) // PERM_CHUNK)]
    null_coefs = np.empty(n_perm)
    null_ts = np.empty(n_perm)

    def work(ci: int):
        idx, size = chunks[ci]
        rng = child_rng(seed, 53, idx)
        Gp = np.empty((size, n))
        Ep = np.empty((size, n))
        for r in range(size):
            perm = rng.permutation(n)
            Gp[r] = G[perm]
            Ep[r] = E[perm] if joint else E[rng.permutation(n)]
        X = _assemble_designs(Gp, Ep, fixed_cols, fit_spec)
        beta, se = batched_ols_hc1(np.broadcast_to(Y, (size, n)), X)
        lo = idx * PERM_CHUNK
        null_coefs[lo: lo + size] = beta[:, stat_index]
        null_ts[lo: lo + size] = beta[:, stat_index] / se[:, stat_index]

    indexed_map(work, len(chunks), threads)

    envelopes, t_envelopes = {}, {}
    for level in (90, 95):
        tail = (100 - level) / 200.0
        envelopes[level] = (float(np.quantile(null_coefs, tail)), float(np.quantile(null_coefs, 1 - tail)))
        t_envelopes[level] = (float(np.quantile(null_ts, tail)), float(np.quantile(null_ts, 1 - tail)))
    return PermutationResult(
        observed_coef=float(obs_coef),
        observed_t=float(obs_t),
        coef_percentile=_percentile(null_coefs, obs_coef),
        t_percentile=_percentile(null_ts, obs_t),
        null_coefs=null_coefs,
        null_ts=null_ts,
        envelopes=envelopes,
        t_envelopes=t_envelopes,
    )


def _permutation_design(data, fit_spec: GxeModelSpec):
    """Term layout of the permuted refits, mirroring fit_gxe's column order."""
    from .gxe import TERM_MENU

    names = ["intercept"] + [t for t in TERM_MENU if t in fit_spec.terms]
    fixed = {}
    for c in fit_spec.controls:
        v = np.asarray(data[c], dtype=float)
        fixed[c] = v - v.mean() if fit_spec.demean_controls else v
        names.append(f"ctrl:{c}")
    if fit_spec.control_interactions:
        names += [f"ctrlxG:{c}" for c in fit_spec.controls]
        names += [f"ctrlxE:{c}" for c in fit_spec.controls]
    return names.index("GxE"), names, fixed


def _assemble_designs(Gp, Ep, fixed_cols, fit_spec: GxeModelSpec):
    from .gxe import TERM_MENU, _term_column

    size, n = Gp.shape
    cols = [np.ones((size, n))]
    for t in TERM_MENU:
        if t in fit_spec.terms:
            cols.append(_term_column(t, Gp, Ep))
    for c in fit_spec.controls:
        cols.append(np.broadcast_to(fixed_cols[c], (size, n)))
    if fit_spec.control_interactions:
        for c in fit_spec.controls:
            cols.append(fixed_cols[c] * Gp)
        for c in fit_spec.controls:
            cols.append(fixed_cols[c] * Ep)
    return np.stack(cols, axis=2)
