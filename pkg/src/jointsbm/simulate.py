"""Synthetic collections drawn from the joint block models, plus fit metrics.

``simulate`` samples block labels from per-network proportions and then edges
from the emission at rate delta_m * alpha[q, r].  The metrics quantify how
well a fit recovers a known truth: ARI on memberships (per network, averaged,
or on the concatenated labels), RMSE on connectivity minimized over block
relabelings, and exact support recovery up to a column permutation.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from sklearn.metrics import adjusted_rand_score

from .model import (
    EMISSIONS,
    ColSbmParams,
    Network,
    NetworkCollection,
    validate_params,
)

# Relabeling searches are exhaustive; beyond this block count they error out.
MAX_PERMUTATION_Q = 8


@dataclass(frozen=True, eq=False)
class SimTruth:
    """Ground truth behind a simulated collection.

    ``memberships`` holds one integer label vector per network, ``params``
    the generating parameters and ``permutations`` the per-network block
    relabeling applied when the proportions were built (identity if none).
    """

    memberships: tuple[np.ndarray, ...]
    params: ColSbmParams
    permutations: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        zs = tuple(np.asarray(z, dtype=int) for z in self.memberships)
        if len(zs) != self.params.M:
            raise ValueError("memberships must cover every network")
        for m, z in enumerate(zs):
            if z.size and (z.min() < 0 or z.max() >= self.params.Q):
                raise ValueError("membership labels outside the block range")
            if np.any(self.params.pi[m, z] <= 0):
                raise ValueError("memberships use blocks that pi rules out")
        perms = tuple(tuple(int(i) for i in p) for p in self.permutations)
        if len(perms) != self.params.M:
            raise ValueError("permutations must cover every network")
        object.__setattr__(self, "memberships", zs)
        object.__setattr__(self, "permutations", perms)


def simulate(variant, sizes, Q, pi, alpha, delta=None, seed=0, *,
             emission="bernoulli", directed=True, permutations=None):
    """Draw a collection of networks and return it with its generating truth.

    ``pi`` is one shared length-Q vector or an M x Q matrix of per-network
    rows (zeros mark unused blocks); ``delta`` defaults to ones.  Labels are
    sampled from pi, then each dyad independently from the emission at rate
    delta_m * alpha[z_i, z_j]; no self-loops, and undirected networks draw
    each unordered pair once.
    """
    sizes = tuple(int(n) for n in sizes)
    if not sizes or min(sizes) < 1:
        raise ValueError("sizes must list at least one positive network size")
    M = len(sizes)
    if emission not in EMISSIONS:
        raise ValueError(f"unknown emission kind: {emission!r}")
    alpha = np.array(alpha, dtype=float)
    if alpha.shape != (Q, Q):
        raise ValueError("alpha must be Q x Q")
    if not directed and not np.allclose(alpha, alpha.T):
        raise ValueError("undirected generation needs a symmetric alpha")
    pi = np.array(pi, dtype=float)
    if pi.ndim == 1:
        pi = np.tile(pi, (M, 1))
    if pi.shape != (M, Q):
        raise ValueError("pi must be a length-Q vector or an M x Q matrix")
    delta = np.ones(M) if delta is None else np.array(delta, dtype=float)
    params = ColSbmParams(variant=variant, pi=pi, alpha=alpha, delta=delta,
                          support=pi > 0)
    validate_params(params, emission)

    rng = np.random.default_rng(seed)
    nets, zs = [], []
    for m, n in enumerate(sizes):
        p = params.pi[m] / params.pi[m].sum()
        z = rng.choice(Q, size=n, p=p)
        rates = delta[m] * alpha[np.ix_(z, z)]
        if emission == "bernoulli":
            a = (rng.random((n, n)) < rates).astype(float)
        else:
            a = rng.poisson(rates).astype(float)
        if not directed:
            a = np.triu(a, 1)
            a = a + a.T
        np.fill_diagonal(a, 0.0)
        nets.append(Network(a, directed=directed))
        zs.append(z)

    if permutations is None:
        permutations = tuple(tuple(range(Q)) for _ in range(M))
    truth = SimTruth(memberships=tuple(zs), params=params,
                     permutations=permutations)
    return NetworkCollection(tuple(nets), emission), truth


# ---------------------------------------------------------------------------
# recovery metrics


def ari(z1, z2) -> float:
    """Adjusted Rand Index between two label vectors of equal length."""
    z1, z2 = np.asarray(z1), np.asarray(z2)
    if z1.shape != z2.shape or z1.ndim != 1:
        raise ValueError("label vectors must share one length")
    return float(adjusted_rand_score(z1, z2))


def ari_mean(zs1, zs2) -> float:
    """Per-network ARI averaged over a collection."""
    if len(zs1) != len(zs2):
        raise ValueError("collections differ in network count")
    return float(np.mean([ari(a, b) for a, b in zip(zs1, zs2)]))


def ari_joint(zs1, zs2) -> float:
    """ARI over the concatenated labels of the whole collection."""
    if len(zs1) != len(zs2):
        raise ValueError("collections differ in network count")
    return ari(np.concatenate([np.asarray(z) for z in zs1]),
               np.concatenate([np.asarray(z) for z in zs2]))


def rmse_alpha(alpha_hat, alpha, mask=None) -> float:
    """Root mean squared connectivity error, minimized over relabelings.

    ``mask`` restricts the mean to selected entries of the reference matrix.
    A collection only carries information about a block pair when both blocks
    appear together in at least one network, so callers can pass the
    co-occurrence pattern of the true support to score just the entries the
    data can determine.
    """
    ah = np.asarray(alpha_hat, dtype=float)
    a = np.asarray(alpha, dtype=float)
    if ah.shape != a.shape or ah.ndim != 2 or ah.shape[0] != ah.shape[1]:
        raise ValueError("connectivity matrices must share a square shape")
    Q = a.shape[0]
    if Q > MAX_PERMUTATION_Q:
        raise ValueError(f"exhaustive relabeling handles Q <= {MAX_PERMUTATION_Q}")
    if mask is None:
        keep = np.ones_like(a, dtype=bool)
    else:
        keep = np.asarray(mask, dtype=bool)
        if keep.shape != a.shape:
            raise ValueError("mask must share the connectivity shape")
        if not keep.any():
            raise ValueError("mask must select at least one entry")
    k = int(keep.sum())
    best = math.inf
    for perm in itertools.permutations(range(Q)):
        p = list(perm)
        err = float(((ah[np.ix_(p, p)] - a)[keep] ** 2).sum()) / k
        best = min(best, err)
    return math.sqrt(best)


def rec_support(S_hat, S) -> int:
    """1 iff the estimated support matches the truth up to a column relabeling."""
    Sh = np.asarray(S_hat, dtype=bool)
    St = np.asarray(S, dtype=bool)
    if Sh.shape != St.shape:
        raise ValueError("support matrices must share a shape")
    Q = St.shape[1]
    if Q > MAX_PERMUTATION_Q:
        raise ValueError(f"exhaustive relabeling handles Q <= {MAX_PERMUTATION_Q}")
    for perm in itertools.permutations(range(Q)):
        if np.array_equal(Sh[:, list(perm)], St):
            return 1
    return 0
