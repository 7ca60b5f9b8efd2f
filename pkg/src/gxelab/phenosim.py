"""Trait and scenario simulation on top of simulated genomes.

Genetic values live in theoretically standardized dosage space
((dosage - 2*maf) / sqrt(2*maf*(1-maf))), which keeps parent and child
values on one scale across generations. The genetic-nurture channel can load
on a weight vector partially distinct from the direct effects (alignment
knob): with identical weightings a population-GWAS index is proportional to
the direct index and several estimation biases cannot materialize at all.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from .genome import GenotypeMatrix, LdBlockModel, Pedigree, SnpSpec, build_panel, simulate_founders, transmit
from .util import ConfigError, child_rng, write_tsv

G_REGIMES = ("trio_pgi_family_controls", "regular_pgi_family_controls", "regular_pgi_no_family")
E_REGIMES = ("exogenous", "predetermined", "endogenous_active_rge",
             "endogenous_correlated", "endogenous_gwas_selection")


def theoretical_standardize(g: GenotypeMatrix) -> np.ndarray:
    """Dosages standardized by the panel's MAF-implied moments (not sample ones)."""
    p = np.array([s.maf for s in g.panel])
    return (g.dosages.astype(float) - 2 * p) / np.sqrt(2 * p * (1 - p))


def empirical_standardize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    sd = v.std()
    if sd == 0:
        raise ConfigError("cannot standardize a constant vector")
    return (v - v.mean()) / sd


@dataclass(frozen=True)
class TraitArchitecture:
    causal_snp_ids: tuple[str, ...]
    effects: np.ndarray  # aligned with causal_snp_ids
    target_h2: float

    def __post_init__(self):
        if not (0.0 <= self.target_h2 < 1.0):
            raise ConfigError(f"target_h2 {self.target_h2} outside [0, 1)")
        if len(self.causal_snp_ids) != len(self.effects):
            raise ConfigError("causal ids and effects differ in length")

    @classmethod
    def random(cls, panel: list[SnpSpec], n_causal: int, target_h2: float, seed: int) -> "TraitArchitecture":
        rng = child_rng(seed, 11)
        idx = np.sort(rng.choice(len(panel), size=n_causal, replace=False))
        effects = rng.standard_normal(n_causal)
        effects /= np.linalg.norm(effects)
        return cls(tuple(panel[j].id for j in idx), effects, target_h2)

    def effect_vector(self, panel: list[SnpSpec]) -> np.ndarray:
        """Effects expanded to panel order; unknown causal ids are an error."""
        pos = {s.id: j for j, s in enumerate(panel)}
        vec = np.zeros(len(panel))
        for snp_id, eff in zip(self.causal_snp_ids, self.effects):
            if snp_id not in pos:
                raise ConfigError(f"causal SNP {snp_id} not in panel")
            vec[pos[snp_id]] = eff
        return vec


def genetic_values(g: GenotypeMatrix, arch: TraitArchitecture) -> np.ndarray:
    """Raw genetic value: standardized dosages weighted by the true effects."""
    return theoretical_standardize(g) @ arch.effect_vector(g.panel)


def simulate_trait(g: GenotypeMatrix, arch: TraitArchitecture, seed: int) -> np.ndarray:
    """Additive trait with noise calibrated analytically to the target
    heritability; returned standardized (mean 0, variance 1)."""
    rng = child_rng(seed, 13)
    gv = genetic_values(g, arch)
    h2 = arch.target_h2
    if h2 == 0.0:
        y = rng.standard_normal(g.n_individuals)
    else:
        noise_var = gv.var() * (1.0 - h2) / h2
        y = gv + rng.standard_normal(g.n_individuals) * np.sqrt(noise_var)
    return empirical_standardize(y)


@dataclass(frozen=True)
class NurtureParams:
    delta: float
    eta_m: float = 0.0
    eta_f: float = 0.0
    w: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if not all(np.isfinite([self.delta, self.eta_m, self.eta_f, self.w, self.gamma])):
            raise ConfigError("nurture parameters must be finite")


def simulate_family_outcome(
    children: GenotypeMatrix,
    parents: GenotypeMatrix,
    pedigree: Pedigree,
    arch: TraitArchitecture,
    nurture: NurtureParams,
    seed: int,
    noise_sd: float = 1.0,
) -> np.ndarray:
    """Y_i = delta*GV_i + eta_m*GV_m + eta_f*GV_f + w*U_fam + gamma*GV_sib + noise.

    Genetic values are standardized per cohort; the sibling term requires a
    sibling-pairs pedigree. Y is returned in model units (not standardized).
    """
    if nurture.gamma != 0.0 and pedigree.design != "sibling-pairs":
        raise ConfigError("sibling spillover requested without a sibling-pairs design")
    gv_c = empirical_standardize(genetic_values(children, arch))
    gv_parents = genetic_values(parents, arch)
    scale_mean, scale_sd = gv_parents.mean(), gv_parents.std()
    mi = parents.index_of(pedigree.mother_ids)
    fi = parents.index_of(pedigree.father_ids)
    gv_m = (gv_parents[mi] - scale_mean) / scale_sd
    gv_f = (gv_parents[fi] - scale_mean) / scale_sd

    rng = child_rng(seed, 17)
    fam_labels, fam_inv = np.unique(pedigree.family_ids, return_inverse=True)
    u_fam = rng.standard_normal(len(fam_labels))[fam_inv]

    y = (nurture.delta * gv_c + nurture.eta_m * gv_m + nurture.eta_f * gv_f
         + nurture.w * u_fam)
    if nurture.gamma != 0.0:
        sib_of = np.empty(len(pedigree.child_ids), dtype=np.intp)
        by_family: dict[str, list[int]] = {}
        for i, fam in enumerate(pedigree.family_ids):
            by_family.setdefault(fam, []).append(i)
        for rows in by_family.values():
            sib_of[rows[0]], sib_of[rows[1]] = rows[1], rows[0]
        y = y + nurture.gamma * gv_c[sib_of]
    return y + rng.standard_normal(len(y)) * noise_sd


# ---------------------------------------------------------------------------
# Table-1 scenario datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioSpec:
    g_regime: str
    e_regime: str
    beta_g: float = 0.259
    beta_e: float = 0.6
    beta_x: float = 0.15
    eta_m: float = 0.0
    eta_f: float = 0.0
    w: float = 0.0
    nurture_alignment: float = 0.6   # corr between nurture and direct SNP weightings
    corr_e_estar: float = 0.5        # predetermined / endogenous_correlated
    beta_estar: float = 0.3          # effect of the unobserved correlated environment
    a_parent: float = 0.3            # predetermined: loading of E on midparent GV
    rho_active: float = 0.4          # active rGE: loading of E on child GV
    arm_share: float = 0.3           # gwas-selection: arm-specific effect size share
    treated_share: float = 0.5
    noise_sd: float = 1.0

    def __post_init__(self):
        if self.g_regime not in G_REGIMES:
            raise ConfigError(f"unknown g_regime {self.g_regime!r}; expected one of {G_REGIMES}")
        if self.e_regime not in E_REGIMES:
            raise ConfigError(f"unknown e_regime {self.e_regime!r}; expected one of {E_REGIMES}")
        if not (0.0 <= self.nurture_alignment <= 1.0):
            raise ConfigError("nurture_alignment must be in [0, 1]")

    def with_(self, **kw) -> "ScenarioSpec":
        return replace(self, **kw)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        data = json.loads(text)
        expected = set(cls.__dataclass_fields__)
        if set(data) != expected:
            raise ConfigError(f"scenario spec must have exactly fields {sorted(expected)}")
        return cls(**data)


@dataclass(frozen=True)
class CohortSizes:
    n_discovery: int
    n_analysis: int
    n_snps: int = 300
    maf_range: tuple[float, float] = (0.2, 0.5)


@dataclass
class Cohort:
    children: GenotypeMatrix
    mothers: GenotypeMatrix
    fathers: GenotypeMatrix
    pedigree: Pedigree
    y: np.ndarray
    e: np.ndarray | None = None
    estar: np.ndarray | None = None

    @property
    def ids(self) -> list[str]:
        return self.children.ids


@dataclass
class ScenarioDataset:
    spec: ScenarioSpec
    panel: list[SnpSpec]
    direct_weights: np.ndarray    # unit vector, per-SNP direct effects
    nurture_weights: np.ndarray   # unit vector the nurture channel loads on
    arm_weights: np.ndarray | None
    discovery: Cohort
    analysis: Cohort

    def check_disjoint(self) -> None:
        overlap = set(self.discovery.ids) & set(self.analysis.ids)
        if overlap:
            raise ConfigError(f"discovery and analysis cohorts overlap: {sorted(overlap)[:5]}")


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _make_cohort(panel, n, prefix, seed_base, seed_off) -> tuple[GenotypeMatrix, GenotypeMatrix, GenotypeMatrix, Pedigree]:
    ld = LdBlockModel([1] * len(panel), 0.0)
    founders = simulate_founders(panel, ld, 2 * n, seed_base + seed_off)
    founders = founders.with_ids([f"{prefix}p{i}" for i in range(2 * n)])
    mother_ids = founders.ids[:n]
    father_ids = founders.ids[n:]
    ped = Pedigree(
        child_ids=[f"{prefix}c{i}" for i in range(n)],
        mother_ids=mother_ids,
        father_ids=father_ids,
        family_ids=[f"{prefix}fam{i}" for i in range(n)],
        design="trios",
    )
    children = transmit(founders, ped, seed_base + seed_off + 1)
    return children, founders.subset(mother_ids), founders.subset(father_ids), ped


def _family_values(children, mothers, fathers, weights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    vc = theoretical_standardize(children) @ weights
    vm = theoretical_standardize(mothers) @ weights
    vf = theoretical_standardize(fathers) @ weights
    return vc, vm, vf


def simulate_scenario(spec: ScenarioSpec, sizes: CohortSizes, seed: int) -> ScenarioDataset:
    """One Table-1 cell's data: a discovery cohort (for GWAS weights) and a
    disjoint analysis cohort with outcome, environment and confounds."""
    rng = child_rng(seed, 23)
    panel_rng = child_rng(seed, 29)
    mafs = panel_rng.uniform(*sizes.maf_range, size=sizes.n_snps)
    panel = build_panel([1] * sizes.n_snps, mafs)

    d = _unit(panel_rng.standard_normal(sizes.n_snps))
    a_orth = panel_rng.standard_normal(sizes.n_snps)
    a_orth = _unit(a_orth - (a_orth @ d) * d)
    align = spec.nurture_alignment
    m = align * d + np.sqrt(1.0 - align**2) * a_orth
    s_arm = None
    if spec.e_regime == "endogenous_gwas_selection":
        s_raw = panel_rng.standard_normal(sizes.n_snps)
        s_arm = _unit(s_raw - (s_raw @ d) * d)

    disc = _build_cohort_outcome(spec, panel, sizes.n_discovery, "d", seed, 0, d, m, s_arm, rng, discovery=True)
    ana = _build_cohort_outcome(spec, panel, sizes.n_analysis, "a", seed, 100, d, m, s_arm, rng, discovery=False)

    ds = ScenarioDataset(spec=spec, panel=panel, direct_weights=d, nurture_weights=m,
                         arm_weights=s_arm, discovery=disc, analysis=ana)
    ds.check_disjoint()
    return ds


def _build_cohort_outcome(spec, panel, n, prefix, seed, seed_off, d, m, s_arm, rng, discovery):
    children, mothers, fathers, ped = _make_cohort(panel, n, prefix, seed, seed_off)
    dv_c, dv_m, dv_f = _family_values(children, mothers, fathers, d)
    nv_m = theoretical_standardize(mothers) @ m
    nv_f = theoretical_standardize(fathers) @ m

    fam_u = rng.standard_normal(n)
    noise = rng.standard_normal(n) * spec.noise_sd
    estar = rng.standard_normal(n)

    e = None
    e_causal = 0.0
    if spec.e_regime == "exogenous":
        e = (rng.random(n) < spec.treated_share).astype(float)
    elif spec.e_regime == "predetermined":
        a, b = spec.a_parent, spec.corr_e_estar
        if a * a + b * b > 1.0:
            raise ConfigError("a_parent^2 + corr_e_estar^2 must be <= 1")
        midparent = (dv_m + dv_f) / np.sqrt(2.0)
        e = a * midparent + b * estar + np.sqrt(1.0 - a * a - b * b) * rng.standard_normal(n)
    elif spec.e_regime == "endogenous_active_rge":
        rho = spec.rho_active
        e = rho * dv_c + np.sqrt(1.0 - rho * rho) * rng.standard_normal(n)
    elif spec.e_regime == "endogenous_correlated":
        r = spec.corr_e_estar
        e = r * estar + np.sqrt(1.0 - r * r) * rng.standard_normal(n)
    elif spec.e_regime == "endogenous_gwas_selection":
        e = (rng.random(n) < spec.treated_share).astype(float)

    y = (spec.beta_g * dv_c + spec.beta_e * e + spec.beta_x * dv_c * e
         + spec.eta_m * nv_m + spec.eta_f * nv_f + spec.w * fam_u + noise)
    if spec.e_regime in ("predetermined", "endogenous_correlated"):
        y = y + spec.beta_estar * estar
    if spec.e_regime == "endogenous_gwas_selection" and s_arm is not None:
        sv_c = theoretical_standardize(children) @ s_arm
        y = y + spec.beta_g * spec.arm_share * sv_c * e

    cohort = Cohort(children=children, mothers=mothers, fathers=fathers,
                    pedigree=ped, y=y, e=e, estar=estar)
    if discovery and spec.e_regime == "endogenous_gwas_selection":
        keep = np.nonzero(e == 1.0)[0]
        cohort = _subset_cohort(cohort, keep)
    return cohort


def _subset_cohort(c: Cohort, idx: np.ndarray) -> Cohort:
    ids = [c.children.ids[i] for i in idx]
    ped = Pedigree(
        child_ids=ids,
        mother_ids=[c.pedigree.mother_ids[i] for i in idx],
        father_ids=[c.pedigree.father_ids[i] for i in idx],
        family_ids=[c.pedigree.family_ids[i] for i in idx],
        design=c.pedigree.design,
    )
    return Cohort(
        children=c.children.subset(ids),
        mothers=c.mothers.subset(ped.mother_ids),
        fathers=c.fathers.subset(ped.father_ids),
        pedigree=ped,
        y=c.y[idx],
        e=None if c.e is None else c.e[idx],
        estar=None if c.estar is None else c.estar[idx],
    )


def treated_indicator(e: np.ndarray) -> np.ndarray:
    """Binary arm marker: the environment itself when already 0/1, else e >= 0."""
    vals = np.unique(e)
    if np.all(np.isin(vals, (0.0, 1.0))):
        return e.astype(int)
    return (e >= 0.0).astype(int)


def write_cohort_tsv(path: str, cohort: Cohort) -> None:
    """Cohort export: iid family Y E Estar treated. Dosages are written
    separately (genotype TSV) and referenced by the run manifest."""
    n = len(cohort.ids)
    e = cohort.e if cohort.e is not None else np.full(n, np.nan)
    estar = cohort.estar if cohort.estar is not None else np.full(n, np.nan)
    treated = treated_indicator(np.nan_to_num(e))
    rows = (
        [cohort.ids[i], cohort.pedigree.family_ids[i], float(cohort.y[i]), float(e[i]), float(estar[i]), int(treated[i])]
        for i in range(n)
    )
    write_tsv(path, ["iid", "family", "Y", "E", "Estar", "treated"], rows)
