"""OLS and IV engines used by every estimation module.

All fits go through QR with explicit rank detection; covariances are
heteroskedasticity-consistent (HC1) by default, with CR1 cluster-robust and
classical alternatives. p-values use the two-sided normal approximation and
are floored at 1e-320 before taking logs downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .util import EstimationError

P_FLOOR = 1e-320
RANK_RTOL = 1e-10


def pvalue_from_z(z: np.ndarray | float) -> np.ndarray | float:
    """Two-sided normal p-value, floored to avoid underflow to 0."""
    p = 2.0 * stats.norm.sf(np.abs(z))
    return np.maximum(p, P_FLOOR)


@dataclass
class OlsFit:
    beta: np.ndarray
    cov: np.ndarray
    residuals: np.ndarray
    r2: float
    n: int
    k: int
    names: list[str] = field(default_factory=list)
    se_mode: str = "hc1"
    n_clusters: int | None = None

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.cov), 0.0))

    @property
    def z(self) -> np.ndarray:
        return self.beta / self.se

    @property
    def p(self) -> np.ndarray:
        return np.asarray(pvalue_from_z(self.z))


def _check_rank(X: np.ndarray, names: list[str] | None) -> None:
    r = np.linalg.qr(X, mode="r")
    diag = np.abs(np.diag(r))
    tol = RANK_RTOL * diag.max() if diag.size else 0.0
    bad = np.nonzero(diag <= tol)[0]
    if bad.size:
        labels = [names[i] if names else f"col{i}" for i in bad]
        raise EstimationError(f"design matrix is rank deficient; dependent columns: {labels}")


def hc1_cov(X: np.ndarray, resid: np.ndarray, xtx_inv: np.ndarray) -> np.ndarray:
    n, k = X.shape
    meat = (X * resid[:, None] ** 2).T @ X
    return xtx_inv @ meat @ xtx_inv * (n / (n - k))


def cluster_cov(X: np.ndarray, resid: np.ndarray, xtx_inv: np.ndarray, clusters: np.ndarray) -> tuple[np.ndarray, int]:
    """CR1 cluster-robust covariance: G/(G-1) * (n-1)/(n-k) small-sample factor."""
    n, k = X.shape
    _, inv = np.unique(clusters, return_inverse=True)
    n_g = inv.max() + 1
    scores = np.zeros((n_g, k))
    np.add.at(scores, inv, X * resid[:, None])
    meat = scores.T @ scores
    factor = (n_g / (n_g - 1)) * ((n - 1) / (n - k))
    return xtx_inv @ meat @ xtx_inv * factor, int(n_g)


def ols(
    y: np.ndarray,
    X: np.ndarray,
    names: list[str] | None = None,
    se: str = "hc1",
    clusters: np.ndarray | None = None,
) -> OlsFit:
    """OLS via QR. se is one of 'hc1', 'classical', 'cluster' (needs clusters)."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    _check_rank(X, names)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    xtx_inv = np.linalg.inv(X.T @ X)
    n_clusters = None
    if se == "cluster":
        if clusters is None:
            raise EstimationError("cluster SEs requested without a cluster variable")
        cov, n_clusters = cluster_cov(X, resid, xtx_inv, np.asarray(clusters))
    elif se == "classical":
        cov = xtx_inv * (resid @ resid) / (n - k)
    elif se == "hc1":
        cov = hc1_cov(X, resid, xtx_inv)
    else:
        raise EstimationError(f"unknown se mode {se!r}")
    tss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - (resid @ resid) / tss if tss > 0 else 0.0
    return OlsFit(beta=beta, cov=cov, residuals=resid, r2=float(r2), n=n, k=k,
                  names=list(names) if names else [f"x{i}" for i in range(k)],
                  se_mode=se, n_clusters=n_clusters)


def batched_ols_hc1(Y: np.ndarray, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Many small OLS fits at once.

    Y: (R, n) outcomes, X: (R, n, k) or (n, k) designs shared across runs.
    Returns (beta (R, k), se_hc1 (R, k)). Normal equations are fine here:
    the designs are tiny (k <= ~6) and well-conditioned by construction.
    """
    Y = np.asarray(Y, dtype=float)
    if X.ndim == 2:
        X = np.broadcast_to(X, (Y.shape[0],) + X.shape)
    R, n, k = X.shape
    xtx = np.einsum("rnk,rnl->rkl", X, X)
    xty = np.einsum("rnk,rn->rk", X, Y)
    beta = np.linalg.solve(xtx, xty[:, :, None])[:, :, 0]
    resid = Y - np.einsum("rnk,rk->rn", X, beta)
    xtx_inv = np.linalg.inv(xtx)
    meat = np.einsum("rnk,rn,rnl->rkl", X, resid**2, X)
    cov = np.einsum("rkl,rlm,rmo->rko", xtx_inv, meat, xtx_inv) * (n / (n - k))
    se = np.sqrt(np.einsum("rkk->rk", cov))
    return beta, se


def breusch_pagan(resid: np.ndarray, Z: np.ndarray) -> tuple[float, float]:
    """Auxiliary regression of squared residuals on Z: LM stat n*R2 ~ chi2(k)."""
    resid = np.asarray(resid, dtype=float)
    Z = np.asarray(Z, dtype=float)
    n = resid.shape[0]
    X = np.column_stack([np.ones(n), Z])
    fit = ols(resid**2, X, se="classical")
    stat = n * fit.r2
    p = float(stats.chi2.sf(stat, Z.shape[1]))
    return float(stat), p


@dataclass
class TslsFit:
    beta: np.ndarray
    cov: np.ndarray
    names: list[str]
    first_stage_f: float
    n: int

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.cov), 0.0))


def tsls(
    y: np.ndarray,
    endog: np.ndarray,
    instrument: np.ndarray,
    exog: np.ndarray | None = None,
    clusters: np.ndarray | None = None,
) -> TslsFit:
    """Just-identified 2SLS of y on [endog, exog] with one instrument.

    Covariance is the IV sandwich, cluster-robust when clusters are given
    (CR1 factor), HC1 otherwise. Also reports the first-stage F of the
    instrument (HC1 Wald on the partialled instrument).
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    ones = np.ones((n, 1))
    W = ones if exog is None else np.column_stack([ones, exog])
    X = np.column_stack([endog, W])
    Z = np.column_stack([instrument, W])
    _check_rank(Z, None)
    zx = Z.T @ X
    zy = Z.T @ y
    beta = np.linalg.solve(zx, zy)
    resid = y - X @ beta
    zx_inv = np.linalg.inv(zx)
    k = X.shape[1]
    if clusters is not None:
        _, inv = np.unique(np.asarray(clusters), return_inverse=True)
        n_g = inv.max() + 1
        scores = np.zeros((n_g, k))
        np.add.at(scores, inv, Z * resid[:, None])
        meat = scores.T @ scores
        factor = (n_g / (n_g - 1)) * ((n - 1) / (n - k))
    else:
        meat = (Z * resid[:, None] ** 2).T @ Z
        factor = n / (n - k)
    cov = zx_inv @ meat @ zx_inv.T * factor

    fs = ols(np.asarray(endog, dtype=float), Z, se="hc1")
    f_stat = float((fs.beta[0] / fs.se[0]) ** 2)
    names = ["endog"] + [f"w{i}" for i in range(W.shape[1])]
    return TslsFit(beta=beta, cov=cov, names=names, first_stage_f=f_stat, n=n)
