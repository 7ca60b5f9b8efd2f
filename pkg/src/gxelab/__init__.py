"""gxelab: simulation and estimation toolkit for gene-environment interplay.

Forward-simulates genomes, families, environments and outcomes under a
structural choice model; runs GWAS in population, trio and sibling designs;
builds polygenic indices; fits interaction regressions including a
month-of-birth discontinuity design; and stress-tests the estimation-bias
taxonomy by Monte Carlo.
"""

__version__ = "0.1.0"
