"""Domain types for block models over collections of networks.

A collection bundles M networks sharing directedness and emission kind
(bernoulli for binary edges, poisson for counts).  Model parameters couple a
shared Q x Q connectivity matrix ``alpha`` with per-network block proportions
``pi``, per-network density scales ``delta`` and an M x Q boolean support
matrix saying which blocks each network may use.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VARIANTS = ("iid", "pi", "delta", "deltapi", "sep")
EMISSIONS = ("bernoulli", "poisson")

# numerical floor for probabilities/rates before logs (estimates at the
# boundary would otherwise give -inf)
PROB_EPS = 1e-9


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Network:
    """One network: adjacency values, missing-dyad mask, directedness.

    The diagonal is ignored by every computation (no self-interaction); the
    observed mask is forced to False on the diagonal at construction.
    """

    adjacency: np.ndarray
    directed: bool = True
    observed_mask: np.ndarray | None = None
    node_labels: tuple[str, ...] | None = None
    name: str = ""

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("adjacency must be a square matrix")
        n = a.shape[0]
        if self.observed_mask is None:
            mask = np.ones((n, n), dtype=bool)
        else:
            mask = np.array(self.observed_mask, dtype=bool)
            if mask.shape != a.shape:
                raise ValueError("observed_mask shape differs from adjacency")
        np.fill_diagonal(mask, False)
        a[~mask] = 0.0  # unobserved cells carry no value
        if not self.directed:
            if not np.array_equal(mask, mask.T):
                raise ValueError("undirected network has an asymmetric observed_mask")
            if not np.array_equal(a, a.T):
                raise ValueError("undirected network has an asymmetric adjacency")
        if not np.all(np.isfinite(a)):
            raise ValueError("adjacency contains non-finite observed values")
        labels = self.node_labels
        if labels is not None:
            labels = tuple(str(x) for x in labels)
            if len(labels) != n:
                raise ValueError("node_labels length differs from matrix size")
        object.__setattr__(self, "adjacency", _freeze(a))
        object.__setattr__(self, "observed_mask", _freeze(mask))
        object.__setattr__(self, "node_labels", labels)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def n_dyads(self) -> int:
        """Number of possible dyads, n(n-1), halved for undirected."""
        n = self.n
        d = n * (n - 1)
        return d if self.directed else d // 2


@dataclass(frozen=True, eq=False)
class NetworkCollection:
    """M >= 1 networks sharing directedness and emission kind."""

    networks: tuple[Network, ...]
    emission: str

    def __post_init__(self):
        nets = tuple(self.networks)
        if not nets:
            raise ValueError("a collection needs at least one network")
        if self.emission not in EMISSIONS:
            raise ValueError(f"unknown emission kind: {self.emission!r}")
        directed = nets[0].directed
        for net in nets:
            if net.directed != directed:
                raise ValueError("all networks must share directedness")
            vals = net.adjacency[net.observed_mask]
            if self.emission == "bernoulli":
                if not np.all((vals == 0) | (vals == 1)):
                    raise ValueError("bernoulli collection has non-binary edge values")
            else:
                if np.any(vals < 0) or not np.all(vals == np.round(vals)):
                    raise ValueError("poisson collection needs nonnegative integer values")
        object.__setattr__(self, "networks", nets)

    @property
    def M(self) -> int:
        return len(self.networks)

    @property
    def directed(self) -> bool:
        return self.networks[0].directed

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(net.n for net in self.networks)

    def n_dyads_total(self) -> int:
        """N_M: total possible dyads over the collection (halved undirected)."""
        return sum(net.n_dyads() for net in self.networks)

    def subcollection(self, members) -> "NetworkCollection":
        return NetworkCollection(tuple(self.networks[m] for m in members), self.emission)


def validate_support(S: np.ndarray) -> bool:
    """True iff every row and every column of S has at least one True."""
    S = np.asarray(S)
    if S.ndim != 2 or S.size == 0:
        return False
    B = S.astype(bool)
    return bool(B.any(axis=1).all() and B.any(axis=0).all())


def support_block_counts(S: np.ndarray) -> np.ndarray:
    """Q_m: number of supported blocks per network (row sums)."""
    return np.asarray(S, dtype=bool).sum(axis=1)


def full_support(M: int, Q: int) -> np.ndarray:
    return np.ones((M, Q), dtype=bool)


@dataclass(frozen=True, eq=False)
class ColSbmParams:
    """theta_S = (pi, alpha, delta) together with variant and support."""

    variant: str
    pi: np.ndarray
    alpha: np.ndarray
    delta: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant: {self.variant!r}")
        pi = np.array(self.pi, dtype=float)
        alpha = np.array(self.alpha, dtype=float)
        delta = np.array(self.delta, dtype=float)
        S = np.array(self.support, dtype=bool)
        if pi.ndim != 2:
            raise ValueError("pi must be an M x Q matrix")
        M, Q = pi.shape
        if alpha.shape != (Q, Q):
            raise ValueError("alpha must be Q x Q")
        if delta.shape != (M,):
            raise ValueError("delta must have one entry per network")
        if S.shape != (M, Q):
            raise ValueError("support must be M x Q")
        object.__setattr__(self, "pi", _freeze(pi))
        object.__setattr__(self, "alpha", _freeze(alpha))
        object.__setattr__(self, "delta", _freeze(delta))
        object.__setattr__(self, "support", _freeze(S))

    @property
    def M(self) -> int:
        return self.pi.shape[0]

    @property
    def Q(self) -> int:
        return self.pi.shape[1]


def validate_params(params: ColSbmParams, emission: str) -> None:
    """Raise ValueError when params break a model invariant.

    Checks: support validity, pi rows summing to 1 with zeros exactly off
    support, the variant's sharing constraints, the delta normalization and
    the emission domain of every supported delta*alpha product.
    """
    S = params.support
    if not validate_support(S):
        raise ValueError("invalid support matrix")
    pi, alpha, delta = params.pi, params.alpha, params.delta
    if np.any(pi < 0):
        raise ValueError("pi has negative entries")
    if not np.allclose(pi.sum(axis=1), 1.0, atol=1e-8):
        raise ValueError("pi rows must sum to 1")
    if np.any(pi[~S] != 0):
        raise ValueError("pi must be exactly 0 off support")
    if np.any(pi[S] <= 0):
        raise ValueError("pi must be positive on support")
    if params.variant in ("iid", "delta"):
        if not S.all():
            raise ValueError(f"{params.variant} variant requires an all-true support")
        if not np.allclose(pi, pi[0]):
            raise ValueError(f"{params.variant} variant requires identical pi rows")
    if params.variant in ("iid", "pi", "sep"):
        if not np.allclose(delta, 1.0):
            raise ValueError(f"{params.variant} variant requires delta = 1")
    else:
        if not np.isclose(delta[0], 1.0):
            raise ValueError("delta[0] must be 1 (normalization)")
        if np.any(delta <= 0):
            raise ValueError("delta must be positive")
    co = S.astype(float)
    for m in range(params.M):
        sup = np.where(S[m])[0]
        rates = delta[m] * alpha[np.ix_(sup, sup)]
        if emission == "bernoulli":
            ok = (rates > 0) & (rates < 1)
        else:
            ok = rates > 0
        if not ok.all():
            raise ValueError("delta*alpha leaves the emission domain on the support")


def count_params(variant: str, Q: int, S: np.ndarray | None, M: int) -> int:
    """Number of free parameters of a variant (support-aware for pi/deltapi)."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant: {variant!r}")
    if Q < 1 or M < 1:
        raise ValueError("Q and M must be positive")
    if variant == "iid":
        return (Q - 1) + Q * Q
    if variant == "delta":
        return (Q - 1) + Q * Q + (M - 1)
    if variant in ("pi", "deltapi"):
        S = np.asarray(S, dtype=bool)
        if S.shape != (M, Q) or not validate_support(S):
            raise ValueError("pi/deltapi parameter count needs a valid M x Q support")
        q_m = S.sum(axis=1)
        n_alpha = int(((S.T.astype(int) @ S.astype(int)) > 0).sum())
        base = int((q_m - 1).sum()) + n_alpha
        return base + (M - 1 if variant == "deltapi" else 0)
    # sep: per-network independent SBMs; Q_m from the support rows when given
    if S is None:
        q_m = np.full(M, Q)
    else:
        S = np.asarray(S, dtype=bool)
        if S.shape != (M, Q) or not validate_support(S):
            raise ValueError("sep parameter count needs a valid M x Q support")
        q_m = S.sum(axis=1)
    return int(((q_m - 1) + q_m * q_m).sum())


@dataclass(frozen=True, eq=False)
class VariationalState:
    """Per-network tau matrices (node-by-block membership probabilities)."""

    tau: tuple[np.ndarray, ...]

    def __post_init__(self):
        taus = tuple(np.array(t, dtype=float) for t in self.tau)
        for t in taus:
            if t.ndim != 2:
                raise ValueError("each tau must be a matrix")
        if len({t.shape[1] for t in taus}) > 1:
            raise ValueError("all tau matrices must share the block count")
        object.__setattr__(self, "tau", tuple(_freeze(t) for t in taus))

    @property
    def M(self) -> int:
        return len(self.tau)

    @property
    def Q(self) -> int:
        return self.tau[0].shape[1]


def validate_state(state: VariationalState, S: np.ndarray | None = None) -> None:
    for m, t in enumerate(state.tau):
        if np.any(t < -1e-12):
            raise ValueError("tau has negative entries")
        if not np.allclose(t.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("tau rows must sum to 1")
        if S is not None and np.any(np.abs(t[:, ~np.asarray(S, bool)[m]]) > 0):
            raise ValueError("tau puts mass on unsupported blocks")


@dataclass(eq=False)
class SufficientStats:
    """tau-weighted edge sums e, dyad counts n and block sizes n_q.

    Arrays are (M, Q, Q), (M, Q, Q) and (M, Q).  For undirected networks each
    unordered pair is counted once (both e and n are halved full sums).
    """

    e: np.ndarray
    n: np.ndarray
    nq: np.ndarray
