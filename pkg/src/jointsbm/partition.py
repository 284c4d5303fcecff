"""Partitioning a collection into homogeneous sub-collections.

Recursive bisection: fit the group jointly, derive per-network separated
estimates, build a weighted squared-distance matrix, split it with a
2-medoids (PAM) pass, and keep the split only when the summed scores of the
halves strictly beat the parent score.

Group seeds are derived from content digests of the member networks, so the
result does not depend on the order networks appear in the collection.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .model import Network, NetworkCollection
from .selection import ScoredFit, SearchConfig, model_search
from .vem import Fit

_TINY = 1e-12


@dataclass(eq=False)
class SeparatedEstimates:
    pi_tilde: np.ndarray      # (M, Q)
    alpha_tilde: np.ndarray   # (M, Q, Q)


@dataclass(eq=False)
class Partition:
    groups: list[tuple[int, ...]]
    group_fits: list[ScoredFit]
    score: float
    trace: dict


def separated_estimates(fit: Fit, collection: NetworkCollection) -> SeparatedEstimates:
    """Per-network plug-in estimates from a joint fit; 0/0 ratios become 0."""
    M = collection.M
    Q = fit.params.Q
    if len(fit.state.tau) != M:
        raise ValueError("fit does not cover the collection")
    pi_tilde = np.zeros((M, Q))
    alpha_tilde = np.zeros((M, Q, Q))
    for m, net in enumerate(collection.networks):
        tau = fit.state.tau[m]
        O = net.observed_mask.astype(float)
        X = net.adjacency * O
        num = tau.T @ X @ tau
        den = tau.T @ O @ tau
        alpha_tilde[m] = np.where(den > _TINY, num / np.maximum(den, _TINY), 0.0)
        pi_tilde[m] = tau.sum(axis=0) / net.n
    return SeparatedEstimates(pi_tilde=pi_tilde, alpha_tilde=alpha_tilde)


def dissimilarity(m: int, m_prime: int, est: SeparatedEstimates,
                  delta_hat: np.ndarray) -> float:
    """Squared connectivity gap weighted by the larger block proportions."""
    w = np.maximum(est.pi_tilde[m], est.pi_tilde[m_prime])
    diff = est.alpha_tilde[m] / delta_hat[m] - est.alpha_tilde[m_prime] / delta_hat[m_prime]
    return float((np.outer(w, w) * diff**2).sum())


def dissimilarity_matrix(est: SeparatedEstimates, delta_hat: np.ndarray) -> np.ndarray:
    M = est.pi_tilde.shape[0]
    D = np.zeros((M, M))
    for a in range(M):
        for b in range(a + 1, M):
            D[a, b] = D[b, a] = dissimilarity(a, b, est, delta_hat)
    return D


def partition_score(fits: list[ScoredFit]) -> float:
    return float(sum(sf.bic_l for sf in fits))


def two_medoids(D: np.ndarray) -> np.ndarray:
    """PAM split of a dissimilarity matrix; returns 0/1 labels.

    Medoids start at the most dissimilar pair; assignment and swap ties
    resolve toward lower indices.
    """
    M = D.shape[0]
    if M < 2:
        raise ValueError("need at least two items to split")
    iu, ju = np.triu_indices(M, 1)
    best = np.argmax(D[iu, ju])
    medoids = [int(iu[best]), int(ju[best])]

    def assign(meds):
        d = D[:, meds]
        labels = np.where(d[:, 0] <= d[:, 1], 0, 1)
        return labels, float(d[np.arange(M), labels].sum())

    labels, cost = assign(medoids)
    improved = True
    while improved:
        improved = False
        for k in range(2):
            for h in range(M):
                if h in medoids:
                    continue
                trial = list(medoids)
                trial[k] = h
                _, trial_cost = assign(trial)
                if trial_cost < cost - _TINY:
                    medoids, cost = trial, trial_cost
                    labels, cost = assign(medoids)
                    improved = True
    # canonical orientation: the group containing the lower medoid is 0
    if medoids[0] > medoids[1]:
        labels = 1 - labels
    return labels


def _digest(net: Network) -> str:
    h = hashlib.sha256()
    h.update(net.adjacency.tobytes())
    h.update(net.observed_mask.tobytes())
    h.update(b"d" if net.directed else b"u")
    return h.hexdigest()


def _group_seed(base_seed: int, digests: list[str]) -> int:
    h = hashlib.sha256(repr(base_seed).encode())
    for d in digests:
        h.update(d.encode())
    return int.from_bytes(h.digest()[:4], "big")


def clust2coll(collection: NetworkCollection, variant: str,
               cfg: SearchConfig) -> Partition:
    """Recursive 2-medoids bisection; splits must strictly improve the score."""
    digests = [_digest(net) for net in collection.networks]
    order = sorted(range(collection.M), key=lambda m: digests[m])

    def fit_group(members: list[int]) -> ScoredFit:
        sub = collection.subcollection(members)
        seed = _group_seed(cfg.seed, [digests[m] for m in members])
        res = model_search(sub, variant, replace(cfg, seed=seed))
        return res.best

    groups: list[tuple[int, ...]] = []
    fits: list[ScoredFit] = []

    def recurse(members: list[int], fitted: ScoredFit) -> dict:
        node = {"members": list(members), "score": fitted.bic_l,
                "q": fitted.fit.params.Q, "children": None, "gain": None}
        if len(members) == 1:
            groups.append(tuple(members))
            fits.append(fitted)
            return node
        sub = collection.subcollection(members)
        est = separated_estimates(fitted.fit, sub)
        D = dissimilarity_matrix(est, fitted.fit.params.delta)
        labels = two_medoids(D)
        left = [m for m, lab in zip(members, labels) if lab == 0]
        right = [m for m, lab in zip(members, labels) if lab == 1]
        fit_left, fit_right = fit_group(left), fit_group(right)
        gain = fit_left.bic_l + fit_right.bic_l - fitted.bic_l
        node["gain"] = gain
        if gain > 0:
            node["children"] = [recurse(left, fit_left), recurse(right, fit_right)]
        else:
            groups.append(tuple(members))
            fits.append(fitted)
        return node

    members0 = [order[i] for i in range(collection.M)]
    trace = recurse(members0, fit_group(members0))
    return Partition(groups=groups, group_fits=fits,
                     score=partition_score(fits), trace=trace)
