"""Emission densities, entropy, variational bound and a brute-force oracle.

All dyad sums range over observed off-diagonal entries only; undirected
networks count each unordered pair once.  Rates are clamped away from the
domain boundary before logs so boundary estimates stay finite.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy

from .model import (
    PROB_EPS,
    ColSbmParams,
    Network,
    NetworkCollection,
    SufficientStats,
    VariationalState,
    validate_params,
)


def clip_rates(rates: np.ndarray, emission: str) -> np.ndarray:
    """Clamp rates into the emission domain interior before taking logs."""
    if emission == "bernoulli":
        return np.clip(rates, PROB_EPS, 1.0 - PROB_EPS)
    return np.maximum(rates, PROB_EPS)


def log_emission(x: float, rate: float, kind: str) -> float:
    """log f(x; rate) for one edge value under the given emission kind."""
    if kind == "bernoulli":
        if not 0.0 < rate < 1.0:
            raise ValueError("bernoulli rate must lie in the open interval (0, 1)")
        if x not in (0, 1):
            raise ValueError("bernoulli edge values must be 0 or 1")
        return float(x * np.log(rate) + (1 - x) * np.log(1.0 - rate))
    if kind == "poisson":
        if rate <= 0.0:
            raise ValueError("poisson rate must be positive")
        if x < 0 or x != int(x):
            raise ValueError("poisson edge values must be nonnegative integers")
        return float(-rate + x * np.log(rate) - gammaln(x + 1.0))
    raise ValueError(f"unknown emission kind: {kind!r}")


def entropy(state: VariationalState) -> float:
    """-sum tau log tau over all networks, with 0 log 0 := 0."""
    return float(-sum(xlogy(t, t).sum() for t in state.tau))


def _observed_float(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """(masked adjacency, observed indicator) as float matrices."""
    O = net.observed_mask.astype(float)
    X = net.adjacency * O
    return X, O


def poisson_logfact(net: Network) -> float:
    """sum of log(x!) over counted observed dyads (pairs counted once if undirected)."""
    X, O = _observed_float(net)
    total = float((gammaln(X + 1.0) * O).sum())
    return total / 2.0 if not net.directed else total


def network_stats(net: Network, tau: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(e, n, nq) for one network; undirected sums are halved (pairs once)."""
    X, O = _observed_float(net)
    e = tau.T @ X @ tau
    n = tau.T @ O @ tau
    if not net.directed:
        e = e / 2.0
        n = n / 2.0
    return e, n, tau.sum(axis=0)


def sufficient_stats(collection: NetworkCollection, state: VariationalState) -> SufficientStats:
    M, Q = state.M, state.Q
    e = np.zeros((M, Q, Q))
    n = np.zeros((M, Q, Q))
    nq = np.zeros((M, Q))
    for m, net in enumerate(collection.networks):
        e[m], n[m], nq[m] = network_stats(net, state.tau[m])
    return SufficientStats(e=e, n=n, nq=nq)


def emission_term(e: np.ndarray, n: np.ndarray, rates: np.ndarray, emission: str) -> float:
    """sum over block pairs of the expected emission log-density, from stats.

    ``rates`` must already be clipped into the domain; entries where both e
    and n vanish contribute exactly 0.
    """
    if emission == "bernoulli":
        return float((e * np.log(rates) + (n - e) * np.log1p(-rates)).sum())
    return float((e * np.log(rates) - n * rates).sum())


def elbo_parts_from_stats(stats: SufficientStats, params: ColSbmParams, emission: str) -> float:
    """Expected complete log-likelihood (without the Poisson log x! constant)."""
    total = 0.0
    for m in range(params.M):
        rates = clip_rates(params.delta[m] * params.alpha, emission)
        total += emission_term(stats.e[m], stats.n[m], rates, emission)
        total += float(xlogy(stats.nq[m], params.pi[m]).sum())
    return total


def elbo(collection: NetworkCollection, state: VariationalState, params: ColSbmParams) -> float:
    """Variational bound J(tau, theta) on the collection log-likelihood."""
    if state.M != collection.M or state.M != params.M or state.Q != params.Q:
        raise ValueError("collection, state and params dimensions disagree")
    for m, net in enumerate(collection.networks):
        if state.tau[m].shape[0] != net.n:
            raise ValueError("tau row count differs from network size")
    stats = sufficient_stats(collection, state)
    value = elbo_parts_from_stats(stats, params, collection.emission)
    if collection.emission == "poisson":
        value -= sum(poisson_logfact(net) for net in collection.networks)
    return value + entropy(state)


def _pair_list(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """Observed off-diagonal index pairs; unordered pairs once if undirected."""
    mask = net.observed_mask.copy()
    if not net.directed:
        mask &= np.triu(np.ones_like(mask), k=1).astype(bool)
    return np.nonzero(mask)


def _network_exact_loglik(net: Network, emission: str, pi_row: np.ndarray,
                          rates_full: np.ndarray, sup: np.ndarray) -> float:
    k = len(sup)
    n = net.n
    rates = clip_rates(rates_full[np.ix_(sup, sup)], emission)
    log_pi = np.log(pi_row[sup])
    ii, jj = _pair_list(net)
    x = net.adjacency[ii, jj]
    # log f(x_p; rate_ab) table, shape (k, k, n_pairs)
    r = rates[:, :, None]
    if emission == "bernoulli":
        lf = x[None, None, :] * np.log(r) + (1.0 - x[None, None, :]) * np.log1p(-r)
    else:
        lf = -r + x[None, None, :] * np.log(r) - gammaln(x + 1.0)[None, None, :]
    assignments = np.array(list(itertools.product(range(k), repeat=n)), dtype=np.intp)
    ll = log_pi[assignments].sum(axis=1)
    for p in range(len(ii)):
        ll += lf[assignments[:, ii[p]], assignments[:, jj[p]], p]
    return float(logsumexp(ll))


def exact_loglik_oracle(collection: NetworkCollection, params: ColSbmParams) -> float:
    """Exact log-likelihood by exhaustive enumeration (tiny instances only)."""
    validate_params(params, collection.emission)
    if params.Q > 3 or any(net.n > 10 for net in collection.networks):
        raise ValueError("instance too large to enumerate (need n_m <= 10, Q <= 3)")
    total = 0.0
    for m, net in enumerate(collection.networks):
        sup = np.where(params.support[m])[0]
        total += _network_exact_loglik(
            net, collection.emission, params.pi[m], params.delta[m] * params.alpha, sup
        )
    return total
