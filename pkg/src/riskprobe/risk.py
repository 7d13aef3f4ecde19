"""Bures-Wasserstein distance between Gaussians and the mixture risk metric."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .predictor import PredictionSet

ALPHA_RISK = 0.1  # 1/m


class DomainError(ValueError):
    """Raised for covariance inputs that are not symmetric positive definite."""


def _check_spd(c: np.ndarray, name: str) -> None:
    c = np.asarray(c, dtype=float)
    if c.shape[-2:] != (2, 2):
        raise DomainError(f"{name} must be 2x2, got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise DomainError(f"{name} has non-finite entries")
    if not np.allclose(c, np.swapaxes(c, -1, -2), rtol=1e-9, atol=1e-12):
        raise DomainError(f"{name} is not symmetric")
    tr = c[..., 0, 0] + c[..., 1, 1]
    det = c[..., 0, 0] * c[..., 1, 1] - c[..., 0, 1] * c[..., 1, 0]
    if np.any(det <= 0) or np.any(tr <= 0):
        raise DomainError(f"{name} is not positive definite")


def sqrtm_spd2(m: np.ndarray) -> np.ndarray:
    """Principal square root of (a batch of) 2x2 SPD matrices.

    Uses ``sqrt(M) = (M + s I) / sqrt(tr M + 2 s)`` with ``s = sqrt(det M)``
    and falls back to an eigendecomposition when that denominator is tiny.
    """
    m = np.asarray(m, dtype=float)
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    s = np.sqrt(np.maximum(det, 0.0))
    denom = np.sqrt(np.maximum(m[..., 0, 0] + m[..., 1, 1] + 2 * s, 0.0))
    eye = np.eye(2)
    ok = denom > 1e-12
    out = np.empty_like(m)
    if np.all(ok):
        return (m + s[..., None, None] * eye) / denom[..., None, None]
    out[ok] = (m[ok] + s[ok][..., None, None] * eye) / denom[ok][..., None, None]
    w, v = np.linalg.eigh(m[~ok])
    out[~ok] = (v * np.sqrt(np.maximum(w, 0.0))[..., None, :]) @ np.swapaxes(v, -1, -2)
    return out


def bures_squared(cov1, cov2) -> np.ndarray:
    """Squared Bures distance ``tr C1 + tr C2 - 2 tr (C1^{1/2} C2 C1^{1/2})^{1/2}``.

    Uses ``tr sqrt(A) = sqrt(tr A + 2 sqrt(det A))`` for the 2x2 matrix
    ``A = C1^{1/2} C2 C1^{1/2}``, whose trace and determinant equal those of
    ``C1 C2``, so no explicit matrix root is formed. The difference is
    rewritten as ``((tr1 - tr2)^2 + 4 (x - 2 sqrt(det1 det2))) / (tr1 + tr2 + 2 tr sqrt(A))``
    with ``x = tr(adj(C1) C2)``, which avoids cancellation and is exactly zero
    for identical covariances.
    """
    cov1, cov2 = np.asarray(cov1, dtype=float), np.asarray(cov2, dtype=float)
    a1, b1, c1 = cov1[..., 0, 0], cov1[..., 0, 1], cov1[..., 1, 1]
    a2, b2, c2 = cov2[..., 0, 0], cov2[..., 0, 1], cov2[..., 1, 1]
    tr1, tr2 = a1 + c1, a2 + c2
    det1, det2 = a1 * c1 - b1 * b1, a2 * c2 - b2 * b2
    g = 2.0 * np.sqrt(np.maximum(det1 * det2, 0.0))
    tr12 = a1 * a2 + 2.0 * b1 * b2 + c1 * c2
    tr_root = np.sqrt(np.maximum(tr12 + g, 0.0))
    x = a1 * c2 + a2 * c1 - 2.0 * b1 * b2
    num = (tr1 - tr2) ** 2 + 4.0 * (x - g)
    return np.maximum(num / (tr1 + tr2 + 2.0 * tr_root), 0.0)


def wasserstein2_gaussian(mean1, cov1, mean2, cov2) -> float:
    """2-Wasserstein distance between two 2-D Gaussians (Bures form)."""
    mean1, mean2 = np.asarray(mean1, dtype=float), np.asarray(mean2, dtype=float)
    cov1, cov2 = np.asarray(cov1, dtype=float), np.asarray(cov2, dtype=float)
    _check_spd(cov1, "cov1")
    _check_spd(cov2, "cov2")
    if mean1.shape != (2,) or mean2.shape != (2,):
        raise DomainError("means must be 2-vectors")
    return float(np.sqrt(np.sum((mean1 - mean2) ** 2) + bures_squared(cov1, cov2)))


def wasserstein2_gaussian_batch(mean1, cov1, mean2, cov2) -> np.ndarray:
    """Broadcasting variant of :func:`wasserstein2_gaussian`; skips validation."""
    mean1, mean2 = np.asarray(mean1, dtype=float), np.asarray(mean2, dtype=float)
    return np.sqrt(np.sum((mean1 - mean2) ** 2, axis=-1) + bures_squared(cov1, cov2))


def mode_risk(p, w, alpha_risk: float = ALPHA_RISK, squared: bool = False):
    """Risk ``p * (1 + exp(-alpha * W))``; ``squared`` puts W^2 in the exponent."""
    w = np.asarray(w, dtype=float)
    expo = w * w if squared else w
    out = np.asarray(p, dtype=float) * (1.0 + np.exp(-alpha_risk * expo))
    return float(out) if out.ndim == 0 else out


@dataclass
class RiskProfile:
    agent_ids: list[str]
    values: np.ndarray  # (N, K, T)
    likelihoods: np.ndarray = field(repr=False, default=None)  # (N, K)

    def __getitem__(self, key: tuple[str, int]) -> np.ndarray:
        aid, k = key
        return self.values[self.agent_ids.index(aid), k]

    def as_dict(self) -> dict[tuple[str, int], np.ndarray]:
        return {(aid, k): self.values[i, k] for i, aid in enumerate(self.agent_ids)
                for k in range(self.values.shape[1])}

    def max_over_time(self) -> np.ndarray:
        if self.values.size == 0:
            return np.zeros(self.values.shape[:2])
        return self.values.max(axis=-1)


def build_risk_profile(ego_dist, predictions: PredictionSet, alpha_risk: float = ALPHA_RISK,
                       squared: bool = False) -> RiskProfile:
    """Risk of every agent mode against the ego distribution, steps 1..T.

    ``ego_dist`` is ``(means, covs)`` covering either steps 1..T or 0..T; in
    the latter case the initial entry is dropped.
    """
    ego_means, ego_covs = (np.asarray(a, dtype=float) for a in ego_dist)
    means, covs, probs = predictions.arrays()
    ids = predictions.agent_ids
    if not ids:
        return RiskProfile([], np.zeros((0, 0, 0)), np.zeros((0, 0)))
    T = means.shape[2]
    if len(ego_means) == T + 1:
        ego_means, ego_covs = ego_means[1:], ego_covs[1:]
    if len(ego_means) != T:
        raise ValueError(f"horizon mismatch: ego has {len(ego_means)} steps, predictions {T}")
    w = wasserstein2_gaussian_batch(ego_means, ego_covs, means, covs)
    values = mode_risk(probs[..., None], w, alpha_risk, squared)
    return RiskProfile(ids, np.asarray(values), probs)
