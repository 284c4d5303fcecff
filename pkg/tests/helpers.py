"""Shared generators for random-but-valid instances used across test modules."""
from __future__ import annotations

import numpy as np

from jointsbm.model import (
    ColSbmParams,
    Network,
    NetworkCollection,
    VariationalState,
    full_support,
)


def rand_support(rng, M, Q):
    """A random valid support matrix (every row/column nonempty)."""
    while True:
        S = rng.random((M, Q)) < 0.7
        for m in range(M):
            if not S[m].any():
                S[m, rng.integers(Q)] = True
        if S.any(axis=0).all():
            return S


def rand_params(rng, M, Q, emission, variant="pi", S=None):
    if variant in ("iid", "delta"):
        S = full_support(M, Q)
    elif S is None:
        S = rand_support(rng, M, Q)
    pi = np.zeros((M, Q))
    for m in range(M):
        w = rng.uniform(0.2, 1.0, size=int(S[m].sum()))
        pi[m, S[m]] = w / w.sum()
    if variant in ("iid", "delta"):
        pi[:] = pi[0]
    alpha = rng.uniform(0.05, 0.9, size=(Q, Q))
    alpha[~(S.T @ S > 0)] = 0.0
    delta = np.ones(M)
    if variant in ("delta", "deltapi"):
        hi = 0.99 / max(alpha.max(), 1e-9) if emission == "bernoulli" else 2.0
        delta = rng.uniform(0.5, min(hi, 2.0), size=M)
        delta[0] = 1.0
    return ColSbmParams(variant=variant, pi=pi, alpha=alpha, delta=delta, support=S)


def rand_network(rng, n, params, m, emission, directed):
    """Sample one network from the given params (no mask)."""
    sup = np.where(params.support[m])[0]
    z = rng.choice(sup, size=n, p=params.pi[m, sup])
    rates = params.delta[m] * params.alpha[np.ix_(z, z)]
    if emission == "bernoulli":
        X = (rng.random((n, n)) < rates).astype(float)
    else:
        X = rng.poisson(rates).astype(float)
    np.fill_diagonal(X, 0.0)
    if not directed:
        X = np.triu(X, 1)
        X = X + X.T
    return Network(adjacency=X, directed=directed)


def rand_instance(rng, M=None, n_max=8, q_max=2, emission=None, directed=None,
                  variant=None):
    """(collection, state, params) drawn at random, always mutually valid."""
    M = M or int(rng.integers(1, 3))
    Q = int(rng.integers(1, q_max + 1))
    emission = emission or ("bernoulli" if rng.random() < 0.5 else "poisson")
    directed = bool(rng.random() < 0.5) if directed is None else directed
    variant = variant or str(rng.choice(["iid", "pi", "delta", "deltapi"]))
    params = rand_params(rng, M, Q, emission, variant=variant)
    sizes = [int(rng.integers(2, n_max + 1)) for _ in range(M)]
    nets = tuple(rand_network(rng, n, params, m, emission, directed)
                 for m, n in enumerate(sizes))
    collection = NetworkCollection(networks=nets, emission=emission)
    state = rand_state(rng, sizes, params.support)
    return collection, state, params


def rand_state(rng, sizes, S):
    taus = []
    for m, n in enumerate(sizes):
        t = np.zeros((n, S.shape[1]))
        k = int(S[m].sum())
        w = rng.uniform(0.05, 1.0, size=(n, k))
        t[:, np.asarray(S, bool)[m]] = w / w.sum(axis=1, keepdims=True)
        taus.append(t)
    return VariationalState(tau=tuple(taus))


def permute_labels(params, state, perm):
    """Apply one global block-label permutation to (params, state)."""
    perm = np.asarray(perm)
    p = ColSbmParams(
        variant=params.variant,
        pi=params.pi[:, perm],
        alpha=params.alpha[np.ix_(perm, perm)],
        delta=params.delta,
        support=params.support[:, perm],
    )
    s = VariationalState(tau=tuple(t[:, perm] for t in state.tau))
    return p, s
