"""Adaptive pair weights and the weighted NT-Xent loss with analytic gradients.

Batches hold 2N samples; sample ``i`` and sample ``(i + N) mod 2N`` form a
positive pair, every other sample is a negative for both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mine import squared_distance

DENOMINATORS = ("simclr", "literal")


def partners(n2: int) -> np.ndarray:
    if n2 % 2:
        raise ValueError("batch must hold an even number of samples")
    n = n2 // 2
    return (np.arange(n2) + n) % n2


def _minmax_weights(d: np.ndarray) -> np.ndarray:
    dmin, dmax = d.min(), d.max()
    if dmax == dmin:
        return np.ones_like(d)
    return (dmax - d) / (dmax - dmin)


def adaptive_weights(embeddings, include_partner: bool = False):
    """Linear min-max weights from keypoint-embedding distances.

    Parameters
    ----------
    embeddings : array_like, shape (2N, D)
        Keypoint embeddings of the batch, anchors first then positives.
    include_partner : bool
        Put the positive partner into the negative pool too (needed by the
        literal denominator, where the partner is summed with ``w_neg``).

    Returns
    -------
    w_pos : ndarray, shape (N,)
        Normalized over the N anchor/positive distances.
    w_neg : ndarray, shape (2N, 2N)
        Normalized over all anchor/negative distances. Entries outside the
        pool (the diagonal, and partners unless ``include_partner``) are 0.

    Closest pair in a pool gets 1, farthest 0; a pool of equal distances gets 1.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] < 4 or e.shape[0] % 2:
        raise ValueError("need an even batch of at least 4 embeddings")
    if not np.all(np.isfinite(e)):
        raise ValueError("non-finite keypoint embeddings")
    n2 = e.shape[0]
    n = n2 // 2
    d = np.sqrt(squared_distance(e[:, None, :], e[None, :, :]))
    w_pos = _minmax_weights(d[np.arange(n), np.arange(n) + n])

    pool = ~np.eye(n2, dtype=bool)
    if not include_partner:
        pool[np.arange(n2), partners(n2)] = False
    w_neg = np.zeros((n2, n2))
    w_neg[pool] = _minmax_weights(d[pool])
    return w_pos, w_neg


def unit_weights(n2: int):
    n = n2 // 2
    w_neg = np.ones((n2, n2))
    np.fill_diagonal(w_neg, 0.0)
    return np.ones(n), w_neg


@dataclass
class LossReport:
    loss: float
    per_anchor: np.ndarray     # (2N,)
    grad: np.ndarray           # (2N, P) d loss / d features
    mean_pos_sim: float
    mean_neg_sim: float

    @property
    def margin(self) -> float:
        return self.mean_pos_sim - self.mean_neg_sim


def weighted_ntxent(features, w_pos, w_neg, tau: float = 0.5, denominator: str = "simclr") -> LossReport:
    """Mean over all 2N anchors of the weighted NT-Xent loss.

    With ``denominator="simclr"`` the partner term in the denominator carries
    ``w_pos`` (so each loss is >= 0); with ``"literal"`` every k != i in the
    denominator carries ``w_neg[i, k]``, partner included.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if denominator not in DENOMINATORS:
        raise ValueError(f"denominator must be one of {DENOMINATORS}")
    z = np.asarray(features, dtype=np.float64)
    n2 = z.shape[0]
    p = partners(n2)
    n = n2 // 2
    rows = np.arange(n2)
    norms = np.sqrt(np.einsum("ij,ij->i", z, z))
    if np.any(norms == 0):
        raise ValueError("zero-norm feature vector")
    u = z / norms[:, None]
    sim = u @ u.T

    wp = np.asarray(w_pos, dtype=np.float64)[rows % n]
    wd = np.array(w_neg, dtype=np.float64)
    if denominator == "simclr":
        wd[rows, p] = wp
    logits = wd * sim / tau
    logits[rows, rows] = -np.inf
    if denominator == "simclr":
        numer = logits[rows, p]
    else:
        numer = wp * sim[rows, p] / tau

    m = logits.max(axis=1)
    ex = np.exp(logits - m[:, None])
    tot = ex.sum(axis=1)
    lse = m + np.log(tot)
    per_anchor = lse - numer
    loss = float(per_anchor.mean())

    soft = ex / tot[:, None]
    g = soft * wd / tau
    g[rows, p] -= wp / tau
    g[rows, rows] = 0.0
    g /= n2
    du = (g + g.T) @ u
    radial = np.einsum("ij,ij->i", du, u)
    grad = (du - radial[:, None] * u) / norms[:, None]

    neg_mask = ~np.eye(n2, dtype=bool)
    neg_mask[rows, p] = False
    mean_pos = float(sim[rows, p].mean())
    mean_neg = float(sim[neg_mask].mean()) if neg_mask.any() else 0.0
    return LossReport(loss, per_anchor, grad, mean_pos, mean_neg)
