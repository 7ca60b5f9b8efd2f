"""Genome simulation: founder haplotypes with block LD, Mendelian transmission,
mating, allele frequencies and principal components.

LD model: within each block the two haplotypes of an individual are independent
thresholded latent Gaussian AR(1) processes; the latent correlation between
SNPs at distance d within a block is rho**d, and blocks are independent
(free recombination between blocks, none within).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .util import CalibrationError, ConfigError, PedigreeError, child_rng, fmt_float, indexed_map, read_tsv, write_tsv


@dataclass(frozen=True)
class SnpSpec:
    id: str
    chromosome: int
    position: int
    maf: float
    block_id: int

    def __post_init__(self):
        if not (1 <= self.chromosome <= 22):
            raise ConfigError(f"SNP {self.id}: chromosome {self.chromosome} outside 1-22")
        if not (0.0 < self.maf <= 0.5):
            raise ConfigError(f"SNP {self.id}: maf {self.maf} outside (0, 0.5]")


def validate_panel(panel: list[SnpSpec]) -> None:
    seen_pos = set()
    last_pos_by_chrom: dict[int, int] = {}
    block_chrom: dict[int, int] = {}
    block_order: list[int] = []
    for s in panel:
        key = (s.chromosome, s.position)
        if key in seen_pos:
            raise ConfigError(f"duplicate (chromosome, position) {key}")
        seen_pos.add(key)
        if s.chromosome in last_pos_by_chrom and s.position <= last_pos_by_chrom[s.chromosome]:
            raise ConfigError(f"positions not strictly increasing on chromosome {s.chromosome} at {s.id}")
        last_pos_by_chrom[s.chromosome] = s.position
        if s.block_id in block_chrom:
            if block_chrom[s.block_id] != s.chromosome:
                raise ConfigError(f"block {s.block_id} spans chromosomes")
            if block_order[-1] != s.block_id:
                raise ConfigError(f"block {s.block_id} is not contiguous in panel order")
        else:
            block_chrom[s.block_id] = s.chromosome
            block_order.append(s.block_id)


def panel_blocks(panel: list[SnpSpec]) -> list[tuple[int, int]]:
    """Contiguous (start, stop) index ranges of the panel's LD blocks."""
    blocks = []
    start = 0
    for j in range(1, len(panel) + 1):
        if j == len(panel) or panel[j].block_id != panel[start].block_id:
            blocks.append((start, j))
            start = j
    return blocks


@dataclass(frozen=True)
class LdBlockModel:
    block_sizes: list[int]
    within_block_rho: float

    def __post_init__(self):
        if not (0.0 <= self.within_block_rho < 1.0):
            raise ConfigError(f"within_block_rho {self.within_block_rho} outside [0, 1)")
        if any(b < 1 for b in self.block_sizes):
            raise ConfigError("block sizes must be >= 1")

    def check_against(self, panel: list[SnpSpec]) -> None:
        sizes = [stop - start for start, stop in panel_blocks(panel)]
        if sizes != list(self.block_sizes):
            raise ConfigError(f"LD block sizes {self.block_sizes} do not partition the panel (found {sizes})")


class GenotypeMatrix:
    """Individuals x SNPs dosages with per-haplotype backing.

    haplotypes: (n, n_snps, 2) uint8 array of allele counts per strand.
    """

    def __init__(self, ids: list[str], panel: list[SnpSpec], haplotypes: np.ndarray):
        haplotypes = np.asarray(haplotypes, dtype=np.uint8)
        if haplotypes.ndim != 3 or haplotypes.shape[2] != 2:
            raise ConfigError("haplotypes must have shape (n, n_snps, 2)")
        if haplotypes.shape[0] != len(ids) or haplotypes.shape[1] != len(panel):
            raise ConfigError("haplotype shape inconsistent with ids/panel")
        if haplotypes.max(initial=0) > 1:
            raise ConfigError("haplotype entries must be 0/1")
        self.ids = list(ids)
        self.panel = list(panel)
        self.haplotypes = haplotypes
        self._dosages: np.ndarray | None = None
        self._index = {iid: i for i, iid in enumerate(self.ids)}

    @property
    def n_individuals(self) -> int:
        return self.haplotypes.shape[0]

    @property
    def n_snps(self) -> int:
        return self.haplotypes.shape[1]

    @property
    def dosages(self) -> np.ndarray:
        if self._dosages is None:
            self._dosages = self.haplotypes.sum(axis=2, dtype=np.int8)
        return self._dosages

    def index_of(self, ids: list[str]) -> np.ndarray:
        try:
            return np.array([self._index[i] for i in ids], dtype=np.intp)
        except KeyError as e:
            raise PedigreeError(f"unknown individual id {e.args[0]!r}") from None

    def subset(self, ids: list[str]) -> "GenotypeMatrix":
        idx = self.index_of(ids)
        return GenotypeMatrix(ids, self.panel, self.haplotypes[idx])

    def with_ids(self, ids: list[str]) -> "GenotypeMatrix":
        if len(ids) != self.n_individuals:
            raise ConfigError("id count does not match individuals")
        return GenotypeMatrix(ids, self.panel, self.haplotypes)


@dataclass
class Pedigree:
    child_ids: list[str]
    mother_ids: list[str]
    father_ids: list[str]
    family_ids: list[str]
    design: str = "trios"  # founders | trios | sibling-pairs

    def __post_init__(self):
        n = len(self.child_ids)
        if not (len(self.mother_ids) == len(self.father_ids) == len(self.family_ids) == n):
            raise PedigreeError("pedigree column lengths differ")
        for c, m, f in zip(self.child_ids, self.mother_ids, self.father_ids):
            if m == f:
                raise PedigreeError(f"child {c}: mother equals father ({m})")
        self._check_acyclic()
        if self.design == "sibling-pairs":
            fams: dict[str, list[int]] = {}
            for i, fam in enumerate(self.family_ids):
                fams.setdefault(fam, []).append(i)
            for fam, rows in fams.items():
                if len(rows) != 2:
                    raise PedigreeError(f"family {fam}: sibling-pairs design needs exactly two children")
                a, b = rows
                if (self.mother_ids[a], self.father_ids[a]) != (self.mother_ids[b], self.father_ids[b]):
                    raise PedigreeError(f"family {fam}: siblings have different parents")

    def _check_acyclic(self) -> None:
        parents = {c: (m, f) for c, m, f in zip(self.child_ids, self.mother_ids, self.father_ids)}
        for start in self.child_ids:
            seen = {start}
            frontier = list(parents[start])
            while frontier:
                cur = frontier.pop()
                if cur in seen:
                    raise PedigreeError(f"individual {cur} is its own ancestor")
                if cur in parents:
                    seen.add(cur)
                    frontier.extend(parents[cur])


def simulate_founders(
    panel: list[SnpSpec],
    ld: LdBlockModel,
    n: int,
    seed: int,
    threads: int = 1,
) -> GenotypeMatrix:
    """Founder haplotypes: Bernoulli(maf) marginals, AR(1)-threshold LD in blocks.

    Each block draws from its own seed-derived stream, so results do not
    depend on scheduling.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    validate_panel(panel)
    ld.check_against(panel)
    blocks = panel_blocks(panel)
    rho = ld.within_block_rho
    thresholds = stats.norm.ppf(np.array([s.maf for s in panel]))

    if rho == 0.0:
        # SNPs are independent: one vectorized draw instead of a per-block loop
        rng = child_rng(seed, 0, 1)
        alleles = (rng.standard_normal((2 * n, len(panel))) < thresholds).astype(np.uint8)
        haplotypes = alleles.reshape(n, 2, len(panel)).transpose(0, 2, 1)
        return GenotypeMatrix([f"f{i}" for i in range(n)], panel, haplotypes)

    def sim_block(b: int) -> np.ndarray:
        start, stop = blocks[b]
        length = stop - start
        rng = child_rng(seed, b)
        z = rng.standard_normal((2 * n, length))
        if rho > 0.0:
            scale = np.sqrt(1.0 - rho * rho)
            for j in range(1, length):
                z[:, j] = rho * z[:, j - 1] + scale * z[:, j]
        alleles = (z < thresholds[start:stop]).astype(np.uint8)
        return alleles.reshape(n, 2, length).transpose(0, 2, 1)

    parts = indexed_map(sim_block, len(blocks), threads)
    haplotypes = np.concatenate(parts, axis=1)
    ids = [f"f{i}" for i in range(n)]
    return GenotypeMatrix(ids, panel, haplotypes)


def transmit(parents: GenotypeMatrix, pedigree: Pedigree, seed: int) -> GenotypeMatrix:
    """Mendelian transmission: one gamete per parent, whole haplotypes per LD
    block (free recombination between blocks, none within)."""
    mi = parents.index_of(pedigree.mother_ids)
    fi = parents.index_of(pedigree.father_ids)
    n_children = len(pedigree.child_ids)
    blocks = panel_blocks(parents.panel)
    block_of_snp = np.empty(parents.n_snps, dtype=np.intp)
    for b, (start, stop) in enumerate(blocks):
        block_of_snp[start:stop] = b
    rng = child_rng(seed, 0)
    choice = rng.integers(0, 2, size=(n_children, len(blocks), 2), dtype=np.uint8)
    out = np.empty((n_children, parents.n_snps, 2), dtype=np.uint8)
    for parent_slot, idx in ((0, mi), (1, fi)):
        per_snp = choice[:, block_of_snp, parent_slot]
        hap = parents.haplotypes[idx]
        out[:, :, parent_slot] = np.take_along_axis(hap, per_snp[:, :, None], axis=2)[:, :, 0]
    return GenotypeMatrix(pedigree.child_ids, parents.panel, out)


def assortative_pairs(
    phenotype: np.ndarray,
    target_corr: float,
    seed: int,
    max_iter: int = 60,
) -> list[tuple[int, int]]:
    """Pair the first half of candidates with the second half by noisy rank
    matching on phenotype, calibrated to the target cross-partner correlation.

    Returns (mother_index, father_index) pairs into the input vector.
    """
    phenotype = np.asarray(phenotype, dtype=float)
    n = phenotype.shape[0]
    if n % 2 != 0 or n < 4:
        raise ConfigError("need an even number (>= 4) of candidates")
    if not (0.0 <= target_corr <= 1.0):
        raise ConfigError("target_corr must be in [0, 1]")
    half = n // 2
    a_idx = np.arange(half)
    b_idx = np.arange(half, n)
    pa, pb = phenotype[a_idx], phenotype[b_idx]
    if pa.std() == 0.0 or pb.std() == 0.0:
        if target_corr == 0.0:
            rng = child_rng(seed, 1)
            return list(zip(a_idx, b_idx[rng.permutation(half)]))
        raise CalibrationError("degenerate phenotype variance; target correlation unreachable")
    za = (pa - pa.mean()) / pa.std()
    zb = (pb - pb.mean()) / pb.std()
    rng = child_rng(seed, 1)
    ea = rng.standard_normal(half)
    eb = rng.standard_normal(half)

    def realized(s: float) -> tuple[float, np.ndarray, np.ndarray]:
        oa = np.argsort(za + s * ea, kind="stable")
        ob = np.argsort(zb + s * eb, kind="stable")
        r = np.corrcoef(pa[oa], pb[ob])[0, 1]
        return r, oa, ob

    if target_corr >= 1.0:
        s = 0.0
    elif target_corr <= 0.0:
        ob = rng.permutation(half)
        return list(zip(a_idx, b_idx[ob]))
    else:
        lo, hi = 0.0, 1.0
        while realized(hi)[0] > target_corr:
            hi *= 2.0
            if hi > 1e6:
                raise CalibrationError("noisy rank matching cannot reach the target correlation")
        for _ in range(max_iter):
            s = 0.5 * (lo + hi)
            r, _, _ = realized(s)
            if abs(r - target_corr) < 1e-3:
                break
            if r > target_corr:
                lo = s
            else:
                hi = s
    r, oa, ob = realized(s)
    if abs(r - target_corr) > 0.05:
        raise CalibrationError(f"calibrated correlation {r:.3f} misses target {target_corr:.3f}")
    return list(zip(a_idx[oa], b_idx[ob]))


def allele_frequencies(g: GenotypeMatrix) -> np.ndarray:
    """Mean dosage / 2 per SNP, in [0, 1]."""
    return g.dosages.mean(axis=0) / 2.0


def standardized_dosages(g: GenotypeMatrix, warn_zero_variance: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Column-standardized dosages and the boolean mask of SNPs kept.

    Zero-variance SNPs are excluded (with a warning), never an error.
    """
    d = g.dosages.astype(float)
    mu = d.mean(axis=0)
    sd = d.std(axis=0)
    keep = sd > 0.0
    if warn_zero_variance and not keep.all():
        dropped = [g.panel[j].id for j in np.nonzero(~keep)[0]]
        warnings.warn(f"excluding {len(dropped)} zero-variance SNPs: {dropped[:10]}")
    x = (d[:, keep] - mu[keep]) / sd[keep]
    return x, keep


@dataclass
class PcaResult:
    components: np.ndarray       # (n, k), unit-norm columns
    explained_share: np.ndarray  # (k,)


def pca(g: GenotypeMatrix, k: int) -> PcaResult:
    x, _ = standardized_dosages(g)
    n, j = x.shape
    if k > min(n, j):
        raise ConfigError(f"k={k} exceeds min(n_individuals, n_snps)={min(n, j)}")
    if min(n, j) <= 20000:
        u, s, _ = np.linalg.svd(x, full_matrices=False)
    else:
        from scipy.sparse.linalg import svds

        u, s, _ = svds(x, k=k, tol=1e-8)
        order = np.argsort(s)[::-1]
        u, s = u[:, order], s[order]
    u = u[:, :k].copy()
    for c in range(k):
        if u[np.argmax(np.abs(u[:, c])), c] < 0:
            u[:, c] = -u[:, c]
    total_var = float(np.sum(x * x))
    share = (s[:k] ** 2) / total_var if total_var > 0 else np.zeros(k)
    return PcaResult(components=u, explained_share=share)


def principal_components(g: GenotypeMatrix, k: int) -> np.ndarray:
    """Top-k eigenvectors of the Gram matrix of column-standardized dosages,
    ordered by descending eigenvalue, sign fixed so the largest-magnitude
    entry of each component is positive."""
    return pca(g, k).components


# ---------------------------------------------------------------------------
# Panel construction and file formats
# ---------------------------------------------------------------------------

def build_panel(block_sizes: list[int], mafs: np.ndarray, chromosome: int = 1, spacing: int = 1000) -> list[SnpSpec]:
    """A single-chromosome panel with the given block structure and MAFs."""
    total = sum(block_sizes)
    mafs = np.broadcast_to(np.asarray(mafs, dtype=float), (total,))
    panel = []
    j = 0
    for b, size in enumerate(block_sizes):
        for _ in range(size):
            panel.append(SnpSpec(id=f"rs{j}", chromosome=chromosome, position=(j + 1) * spacing, maf=float(mafs[j]), block_id=b))
            j += 1
    validate_panel(panel)
    return panel


def random_panel(n_snps: int, block_size: int, seed: int, maf_range: tuple[float, float] = (0.05, 0.5)) -> list[SnpSpec]:
    rng = child_rng(seed, 99)
    mafs = rng.uniform(maf_range[0], maf_range[1], size=n_snps)
    sizes = [block_size] * (n_snps // block_size)
    rem = n_snps - block_size * len(sizes)
    if rem:
        sizes.append(rem)
    return build_panel(sizes, mafs)


def write_genotypes_tsv(path: str, g: GenotypeMatrix) -> None:
    header = ["iid"] + [s.id for s in g.panel]
    d = g.dosages
    rows = ([g.ids[i]] + [str(int(v)) for v in d[i]] for i in range(g.n_individuals))
    write_tsv(path, header, rows)


def read_genotypes_tsv(path: str, panel: list[SnpSpec]) -> GenotypeMatrix:
    header, rows = read_tsv(path)
    if header[0] != "iid" or header[1:] != [s.id for s in panel]:
        raise ConfigError("genotype file header does not match the panel")
    ids = [r[0] for r in rows]
    d = np.array([[int(v) for v in r[1:]] for r in rows], dtype=np.int8)
    if d.size and (d.min() < 0 or d.max() > 2):
        raise ConfigError("dosages must be 0/1/2")
    # Phase is not stored; rebuild haplotypes deterministically from dosages.
    hap = np.zeros(d.shape + (2,), dtype=np.uint8)
    hap[:, :, 0] = (d >= 1).astype(np.uint8)
    hap[:, :, 1] = (d == 2).astype(np.uint8)
    return GenotypeMatrix(ids, panel, hap)


def write_panel_tsv(path: str, panel: list[SnpSpec]) -> None:
    write_tsv(path, ["id", "chrom", "pos", "maf", "block"],
              ([s.id, s.chromosome, s.position, fmt_float(s.maf), s.block_id] for s in panel))


def read_panel_tsv(path: str) -> list[SnpSpec]:
    header, rows = read_tsv(path)
    if header != ["id", "chrom", "pos", "maf", "block"]:
        raise ConfigError("panel file header must be: id chrom pos maf block")
    panel = [SnpSpec(id=r[0], chromosome=int(r[1]), position=int(r[2]), maf=float(r[3]), block_id=int(r[4])) for r in rows]
    validate_panel(panel)
    return panel


def write_pedigree_tsv(path: str, ped: Pedigree) -> None:
    write_tsv(path, ["child", "mother", "father", "family"],
              zip(ped.child_ids, ped.mother_ids, ped.father_ids, ped.family_ids))


def read_pedigree_tsv(path: str, design: str = "trios") -> Pedigree:
    header, rows = read_tsv(path)
    if header != ["child", "mother", "father", "family"]:
        raise ConfigError("pedigree file header must be: child mother father family")
    return Pedigree(
        child_ids=[r[0] for r in rows],
        mother_ids=[r[1] for r in rows],
        father_ids=[r[2] for r in rows],
        family_ids=[r[3] for r in rows],
        design=design,
    )
