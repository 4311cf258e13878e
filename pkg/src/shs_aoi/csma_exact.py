"""Semi-analytic mean ages for age-aware CSMA with one or two links.

Between two channel captures the process is: an exponential service of the
capturing link ``k`` followed by an idle period whose capture hazards are
``a_i x_i``. Embedded at capture epochs, the only state the future depends on
is ``(k, w)`` with ``w`` the monitor age of the other link, and the age of
``k`` itself at capture is a deterministic function of the previous cycle.
Mean ages then follow from renewal-reward over the stationary law of that
chain, discretized on a grid in ``w`` with linear (hat-function) splitting.

Expectations over the service time use Gauss-Laguerre nodes in ``S``; those
over the idle time are taken in the integrated-hazard variable
``y = Lambda(t)``, which turns the survival factor into ``exp(-y)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_LAG_S = np.polynomial.laguerre.laggauss(40)
_LAG_Y = np.polynomial.laguerre.laggauss(48)


@dataclass(frozen=True)
class ExactGrid:
    """Grid for the other link's age at capture: ``size`` nodes on ``[0, extent]``, quadratic spacing."""

    size: int = 160
    extent: float | None = None

    def nodes(self, H) -> np.ndarray:
        extent = self.extent if self.extent is not None else 40.0 * (1.0 + max(1.0 / h for h in H))
        return extent * np.linspace(0.0, 1.0, self.size) ** 2


def _split(values: np.ndarray, nodes: np.ndarray):
    """Left node index and right-node weight of each value under hat-function interpolation."""
    v = np.clip(values, nodes[0], nodes[-1])
    idx = np.clip(np.searchsorted(nodes, v, side="right") - 1, 0, len(nodes) - 2)
    frac = (v - nodes[idx]) / (nodes[idx + 1] - nodes[idx])
    return idx, frac


def _idle_quadrature(S, w, ak, aj):
    """Idle durations ``t`` and weights such that sum(weight * g(t) * h_l(t)/h(t)) = E[g(T); capture by l]."""
    y, wy = _LAG_Y
    beta = ak * S + aj * (w + S)
    A = ak + aj
    t = 2.0 * y / (beta + np.sqrt(beta * beta + 2.0 * A * y))
    hk = ak * (S + t)
    hj = aj * (w + S + t)
    tot = hk + hj
    return t, wy * hk / tot, wy * hj / tot


def aware_mean_ages(a, H, grid: ExactGrid = ExactGrid()) -> np.ndarray:
    """Per-link time-average monitor ages of the age-aware CSMA model."""
    a = np.asarray(a, dtype=float)
    H = np.asarray(H, dtype=float)
    if a.shape != H.shape or a.ndim != 1 or np.any(a <= 0) or np.any(H <= 0):
        raise ValueError("a and H must be positive vectors of equal length")
    if len(a) == 1:
        return np.array([_single_link(a[0], H[0])])
    if len(a) != 2:
        raise ValueError("the semi-analytic evaluator covers one or two links")
    return _two_links(a, H, grid)


def _single_link(a: float, H: float) -> float:
    xs, ws = _LAG_S
    e_len = e_r = 0.0
    for s, ws_ in zip(xs / H, ws):
        t, pk, _ = _idle_quadrature(s, 0.0, a, 0.0)
        e_len += ws_ * np.sum(pk * (s + t))
        e_r += ws_ * np.sum(pk * (s * s / 2 + s * t + t * t / 2))
    # the age at capture is the previous cycle's S + T, independent of the next service
    return float((e_r + e_len / H) / e_len)


def _two_links(a, H, grid: ExactGrid) -> np.ndarray:
    nodes = grid.nodes(H)
    G = len(nodes)
    N = 2 * G
    xs, ws = _LAG_S
    K = np.zeros(N * N)  # flattened K[dst, src]
    Kv = np.zeros(N * N)  # same, weighted by the new capturer's own age at capture
    e_len = np.zeros(N)
    e_rk = np.zeros(N)  # capturer's reward without the (own age) * S term
    e_rj = np.zeros(N)
    w = nodes[:, None, None]
    for k in range(2):
        j = 1 - k
        s = (xs / H[k])[None, :, None]
        t, pk, pj = _idle_quadrature(s, w, a[k], a[j])
        pk = pk * ws[None, :, None]
        pj = pj * ws[None, :, None]
        p = pk + pj
        blk = slice(k * G, (k + 1) * G)
        st = s + t
        e_len[blk] = np.sum(p * st, axis=(1, 2))
        e_rk[blk] = np.sum(p * (s * s / 2 + s * t + t * t / 2), axis=(1, 2))
        e_rj[blk] = np.sum(p * (w * st + st * st / 2), axis=(1, 2))
        src = np.broadcast_to((k * G + np.arange(G))[:, None, None], t.shape)
        # same link captures again: other age w + S + T, own age S + T
        # other link captures: own age w + S + T, other age S + T
        for dst_blk, prob, other, own in ((k, pk, w + st, st), (j, pj, st, w + st)):
            idx, fr = _split(other, nodes)
            for shift, part in ((0, 1 - fr), (1, fr)):
                flat = ((dst_blk * G + idx + shift) * N + src).ravel()
                K += np.bincount(flat, (prob * part).ravel(), N * N)
                Kv += np.bincount(flat, (prob * part * own).ravel(), N * N)
    K = K.reshape(N, N)
    Kv = Kv.reshape(N, N)
    # stationary law of the embedded chain: (K - I) pi = 0 with sum pi = 1
    M = K - np.eye(N)
    M[0, :] = 1.0
    rhs = np.zeros(N)
    rhs[0] = 1.0
    pi = np.linalg.solve(M, rhs)
    psi = Kv @ pi  # pi(k, w) * E[own age at capture | k, w]
    total = pi @ e_len
    ages = np.zeros(2)
    for k in range(2):
        blk = slice(k * G, (k + 1) * G)
        ages[k] += pi[blk] @ e_rk[blk] + psi[blk].sum() / H[k]
        ages[1 - k] += pi[blk] @ e_rj[blk]
    return ages / total
