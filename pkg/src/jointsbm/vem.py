"""Variational EM engine.

The VE step iterates a damped fixed point per network in log space; the M
step applies the per-variant closed forms (with an alternating scale/density
update for the delta variants).  The outer loop sweeps networks one at a time
in a seeded random order, updating parameters after each network, and stops
on relative ELBO change.

Every run audits its own ELBO trace; decreases beyond 1e-8 are appended to
``MONOTONICITY_VIOLATIONS`` so the test suite can assert there were none.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .likelihood import clip_rates, emission_term, network_stats, poisson_logfact, sufficient_stats
from .model import (
    PROB_EPS,
    ColSbmParams,
    Network,
    NetworkCollection,
    SufficientStats,
    VariationalState,
    validate_support,
)

MONOTONICITY_VIOLATIONS: list[str] = []

# tolerance slack when comparing candidate ELBO values inside guards
_GUARD_TOL = 1e-10
_TINY = 1e-12
_PI_FLOOR = 1e-3  # D-rule: vanishing supported blocks keep pi >= floor/n


@dataclass(frozen=True)
class VemConfig:
    tol: float = 1e-6
    max_iter: int = 500
    fixed_point_tol: float = 1e-6
    fixed_point_max_iter: int = 50
    seed: int = 0
    strict_density_ascent: bool = False

    def __post_init__(self):
        if min(self.tol, self.fixed_point_tol) <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(eq=False)
class Fit:
    params: ColSbmParams
    state: VariationalState
    elbo: float
    n_iterations: int
    converged: bool
    elbo_trace: tuple[float, ...] = ()


class _NetData:
    """Dense per-network views reused across sweeps."""

    __slots__ = ("X", "O", "Xt", "Ot", "n", "directed", "logfact", "degree")

    def __init__(self, net: Network):
        O = net.observed_mask.astype(float)
        X = net.adjacency * O
        self.X, self.O = X, O
        self.directed = net.directed
        self.Xt = np.ascontiguousarray(X.T) if net.directed else X
        self.Ot = np.ascontiguousarray(O.T) if net.directed else O
        self.n = net.n
        self.logfact = poisson_logfact(net)
        self.degree = X.sum(axis=1)


def _prepare(collection: NetworkCollection) -> list[_NetData]:
    return [_NetData(net) for net in collection.networks]


def _softmax_rows(L: np.ndarray) -> np.ndarray:
    L = L - L.max(axis=1, keepdims=True)
    np.exp(L, out=L)
    L /= L.sum(axis=1, keepdims=True)
    return L


class _VeWorkspace:
    """Fixed-point machinery for one network under fixed parameters.

    Operates on tau restricted to the network's supported columns.  Score and
    objective evaluations share the X@T / O@T products.
    """

    def __init__(self, nd: _NetData, log_pi: np.ndarray, rates: np.ndarray, emission: str):
        self.nd = nd
        self.log_pi = log_pi
        self.P = rates
        self.LA = np.log(rates)
        self.LB = np.log1p(-rates) if emission == "bernoulli" else None
        self.emission = emission

    def products(self, T):
        nd = self.nd
        out = (nd.X @ T, nd.O @ T)
        if nd.directed:
            return out + (nd.Xt @ T, nd.Ot @ T)
        return out + (None, None)

    def score(self, prods):
        XT, OT, XtT, OtT = prods
        if self.emission == "bernoulli":
            sc = XT @ self.LA.T + (OT - XT) @ self.LB.T
            if self.nd.directed:
                sc += XtT @ self.LA + (OtT - XtT) @ self.LB
        else:
            sc = XT @ self.LA.T - OT @ self.P.T
            if self.nd.directed:
                sc += XtT @ self.LA - OtT @ self.P
        return sc

    def objective(self, T, prods):
        """This network's ELBO share (up to the Poisson log x! constant)."""
        XT, OT = prods[0], prods[1]
        e = T.T @ XT
        n = T.T @ OT
        if not self.nd.directed:
            e = e / 2.0
            n = n / 2.0
        if self.emission == "bernoulli":
            em = float((e * self.LA + (n - e) * self.LB).sum())
        else:
            em = float((e * self.LA - n * self.P).sum())
        return em + float(T.sum(axis=0) @ self.log_pi) - float(xlogy(T, T).sum())

    def solve(self, T, cfg: VemConfig):
        prods = self.products(T)
        obj = self.objective(T, prods)
        for _ in range(cfg.fixed_point_max_iter):
            cand = _softmax_rows(self.log_pi + self.score(prods))
            cand_prods = self.products(cand)
            cand_obj = self.objective(cand, cand_prods)
            if cand_obj < obj - _GUARD_TOL:
                # oscillation: damp halfway, keep current iterate if still worse
                cand = 0.5 * (T + cand)
                cand_prods = self.products(cand)
                cand_obj = self.objective(cand, cand_prods)
                if cand_obj < obj - _GUARD_TOL:
                    break
            step = float(np.max(np.abs(cand - T)))
            T, prods, obj = cand, cand_prods, cand_obj
            if step < cfg.fixed_point_tol:
                break
        return T, obj


def _workspace(nd, params: ColSbmParams, m: int, emission: str, sup: np.ndarray) -> _VeWorkspace:
    rates = clip_rates(params.delta[m] * params.alpha[np.ix_(sup, sup)], emission)
    log_pi = np.log(np.maximum(params.pi[m, sup], _TINY))
    return _VeWorkspace(nd, log_pi, rates, emission)


def ve_step(network: Network, params: ColSbmParams, tau_init: np.ndarray,
            cfg: VemConfig, emission: str = "bernoulli", m: int = 0) -> np.ndarray:
    """One VE solve for a single network; returns a full n x Q tau matrix."""
    sup = np.where(params.support[m])[0]
    nd = _NetData(network)
    ws = _workspace(nd, params, m, emission, sup)
    T = np.array(tau_init, dtype=float)[:, sup]
    rows = T.sum(axis=1, keepdims=True)
    T = np.where(rows > _TINY, T / np.maximum(rows, _TINY), 1.0 / len(sup))
    T, _ = ws.solve(T, cfg)
    out = np.zeros((network.n, params.Q))
    out[:, sup] = T
    return out


def _pi_part(nq: np.ndarray, pi: np.ndarray) -> float:
    return float(xlogy(nq, pi).sum())


def _estimate_pi(stats: SufficientStats, variant: str, S: np.ndarray,
                 sizes: np.ndarray) -> np.ndarray:
    M, Q = S.shape
    pi = np.zeros((M, Q))
    if variant in ("pi", "deltapi"):
        for m in range(M):
            sup = S[m]
            w = np.maximum(stats.nq[m, sup] / sizes[m], _PI_FLOOR / sizes[m])
            pi[m, sup] = w / w.sum()
    else:
        total = float(sizes.sum())
        w = np.maximum(stats.nq.sum(axis=0) / total, _PI_FLOOR / total)
        pi[:] = w / w.sum()
    return pi


def _emission_part(stats: SufficientStats, alpha: np.ndarray, delta: np.ndarray,
                   emission: str) -> float:
    total = 0.0
    for m in range(stats.e.shape[0]):
        rates = clip_rates(delta[m] * alpha, emission)
        total += emission_term(stats.e[m], stats.n[m], rates, emission)
    return total


def _alternating_scale_update(stats: SufficientStats, S: np.ndarray,
                              previous: ColSbmParams, emission: str):
    """delta-variant (alpha, delta) update: alternate the moment formulas."""
    co = (S.T.astype(int) @ S.astype(int)) > 0
    E = stats.e.sum(axis=0)
    alpha = np.where(co & (previous.alpha > 0), previous.alpha, np.where(co, 0.25, 0.0))
    delta = np.maximum(previous.delta.copy(), _TINY)
    for _ in range(100):
        denom_a = np.tensordot(delta, stats.n, axes=(0, 0))
        new_alpha = np.where((denom_a > _TINY) & co, E / np.maximum(denom_a, _TINY), alpha)
        num_d = stats.e.sum(axis=(1, 2))
        denom_d = (stats.n * new_alpha[None, :, :]).sum(axis=(1, 2))
        new_delta = np.where(denom_d > _TINY, num_d / np.maximum(denom_d, _TINY), 1.0)
        new_delta = np.maximum(new_delta, 1e-8)
        rel = max(
            float(np.max(np.abs(new_alpha - alpha)) / max(float(np.max(np.abs(alpha))), _TINY)),
            float(np.max(np.abs(new_delta - delta)) / max(float(np.max(np.abs(delta))), _TINY)),
        )
        alpha, delta = new_alpha, new_delta
        if rel < 1e-8:
            break
    # renormalize so the first network carries no scale
    s = delta[0]
    delta = delta / s
    alpha = alpha * s
    alpha[~co] = 0.0
    return _project_scale(alpha, delta, S, co, emission)


def _project_scale(alpha, delta, S, co, emission):
    """Clip (alpha, delta) so every supported product stays in the domain."""
    if emission == "bernoulli":
        alpha = np.where(co, np.clip(alpha, PROB_EPS, 1.0 - PROB_EPS), 0.0)
    else:
        alpha = np.where(co, np.maximum(alpha, PROB_EPS), 0.0)
    delta = np.maximum(delta, PROB_EPS)
    if emission == "bernoulli":
        for m in range(len(delta)):
            sup = np.where(S[m])[0]
            amax = alpha[np.ix_(sup, sup)].max()
            if amax > 0:
                delta[m] = min(delta[m], (1.0 - PROB_EPS) / amax)
    delta[0] = 1.0
    return alpha, delta


def _golden_max(f, lo, hi, iters=60):
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def _refine_scale_bernoulli(stats, S, alpha, delta, max_sweeps=20):
    """Coordinate golden-section ascent on (delta_m, alpha_qr), strict mode."""
    co = (S.T.astype(int) @ S.astype(int)) > 0
    alpha = alpha.copy()
    delta = delta.copy()

    def total():
        return _emission_part(stats, alpha, delta, "bernoulli")

    best = total()
    for _ in range(max_sweeps):
        for m in range(1, len(delta)):
            sup = np.where(S[m])[0]
            amax = alpha[np.ix_(sup, sup)].max()
            hi = (1.0 - PROB_EPS) / amax if amax > 0 else 1.0
            e_m, n_m = stats.e[m], stats.n[m]

            def f(d, e_m=e_m, n_m=n_m):
                rates = np.clip(d * alpha, PROB_EPS, 1.0 - PROB_EPS)
                return emission_term(e_m, n_m, rates, "bernoulli")

            delta[m] = _golden_max(f, PROB_EPS, hi)
        for q, r in zip(*np.where(co)):
            hi = (1.0 - PROB_EPS) / max(delta.max(), 1.0)

            def f(a, q=q, r=r):
                trial = alpha.copy()
                trial[q, r] = a
                return _emission_part(stats, trial, delta, "bernoulli")

            alpha[q, r] = _golden_max(f, PROB_EPS, hi, iters=40)
        new = total()
        if new - best < 1e-10:
            break
        best = new
    return alpha, delta


def m_step(collection: NetworkCollection, state: VariationalState, variant: str,
           S: np.ndarray, previous: ColSbmParams, cfg: VemConfig | None = None) -> ColSbmParams:
    stats = sufficient_stats(collection, state)
    sizes = np.array(collection.sizes, dtype=float)
    strict = bool(cfg and cfg.strict_density_ascent)
    return _m_step_from_stats(stats, sizes, collection.emission, variant, S, previous, strict)


def _m_step_from_stats(stats: SufficientStats, sizes: np.ndarray, emission: str,
                       variant: str, S: np.ndarray, previous: ColSbmParams,
                       strict: bool = False) -> ColSbmParams:
    S = np.asarray(S, dtype=bool)
    pi = _estimate_pi(stats, variant, S, sizes)
    # closed form is exact up to the floor; fall back if the floor hurt
    if _pi_part(stats.nq, pi) < _pi_part(stats.nq, previous.pi) - _GUARD_TOL:
        pi = previous.pi

    co = (S.T.astype(int) @ S.astype(int)) > 0
    if variant in ("iid", "pi"):
        E, N = stats.e.sum(axis=0), stats.n.sum(axis=0)
        raw = np.where(N > _TINY, E / np.maximum(N, _TINY), previous.alpha)
        alpha = np.where(co, clip_rates(raw, emission), 0.0)
        delta = np.ones(S.shape[0])
    else:
        alpha, delta = _alternating_scale_update(stats, S, previous, emission)
        if emission == "bernoulli" and strict:
            alpha, delta = _refine_scale_bernoulli(stats, S, alpha, delta)
        # the moment update is a heuristic for bernoulli: never move downhill
        if _emission_part(stats, alpha, delta, emission) < _emission_part(
            stats, previous.alpha, previous.delta, emission
        ) - _GUARD_TOL:
            alpha, delta = previous.alpha, previous.delta
    return ColSbmParams(variant=variant, pi=pi, alpha=alpha, delta=delta, support=S)


def _bootstrap_params(stats: SufficientStats, sizes: np.ndarray, emission: str,
                      variant: str, S: np.ndarray) -> ColSbmParams:
    """A valid starting point for `previous` (pooled alpha, unit delta)."""
    S = np.asarray(S, dtype=bool)
    pi = _estimate_pi(stats, variant, S, sizes)
    co = (S.T.astype(int) @ S.astype(int)) > 0
    E, N = stats.e.sum(axis=0), stats.n.sum(axis=0)
    raw = np.where(N > _TINY, E / np.maximum(N, _TINY), 0.25)
    alpha = np.where(co, clip_rates(raw, emission), 0.0)
    return ColSbmParams(variant=variant, pi=pi, alpha=alpha,
                        delta=np.ones(S.shape[0]), support=S)


def run_vem(collection: NetworkCollection, variant: str, Q: int, S: np.ndarray,
            tau_init: VariationalState, cfg: VemConfig) -> Fit:
    """Alternate VE sweeps and M steps until the ELBO stabilizes."""
    if variant == "sep":
        raise ValueError("sep is fitted per network, not by the joint engine")
    S = np.asarray(S, dtype=bool)
    if S.shape != (collection.M, Q) or not validate_support(S):
        raise ValueError("invalid support for this collection and Q")
    if variant in ("iid", "delta") and not S.all():
        raise ValueError(f"{variant} variant requires an all-true support")

    nds = _prepare(collection)
    sizes = np.array(collection.sizes, dtype=float)
    emission = collection.emission
    sups = [np.where(S[m])[0] for m in range(collection.M)]
    taus = []
    for m, t in enumerate(tau_init.tau):
        t = np.array(t, dtype=float)
        t[:, ~S[m]] = 0.0
        rows = t.sum(axis=1)
        dead = rows <= _TINY  # rows with no supported mass restart uniform
        if dead.any():
            t[dead, :] = 0.0
            t[np.ix_(np.where(dead)[0], sups[m])] = 1.0 / len(sups[m])
        t /= t.sum(axis=1, keepdims=True)
        taus.append(t)

    M = collection.M
    e = np.zeros((M, Q, Q))
    n = np.zeros((M, Q, Q))
    nq = np.zeros((M, Q))
    ents = np.zeros(M)
    for m, net in enumerate(collection.networks):
        e[m], n[m], nq[m] = network_stats(net, taus[m])
        ents[m] = -float(xlogy(taus[m], taus[m]).sum())
    stats = SufficientStats(e=e, n=n, nq=nq)
    logfact = sum(nd.logfact for nd in nds)

    params = _bootstrap_params(stats, sizes, emission, variant, S)
    params = _m_step_from_stats(stats, sizes, emission, variant, S, params,
                                cfg.strict_density_ascent)

    def current_elbo():
        return (_emission_part(stats, params.alpha, params.delta, emission)
                + _pi_part(stats.nq, params.pi) + float(ents.sum()) - logfact)

    value = current_elbo()
    trace = [value]
    rng = np.random.default_rng(cfg.seed)
    converged = False
    iteration = 0
    for iteration in range(1, cfg.max_iter + 1):
        for m in rng.permutation(M):
            ws = _workspace(nds[m], params, m, emission, sups[m])
            T, _ = ws.solve(taus[m][:, sups[m]], cfg)
            full = np.zeros((nds[m].n, Q))
            full[:, sups[m]] = T
            taus[m] = full
            e[m], n[m], nq[m] = network_stats(collection.networks[m], full)
            ents[m] = -float(xlogy(T, T).sum())
            params = _m_step_from_stats(stats, sizes, emission, variant, S, params,
                                        cfg.strict_density_ascent)
        new_value = current_elbo()
        trace.append(new_value)
        if abs(new_value - value) <= cfg.tol * max(1.0, abs(new_value)):
            value = new_value
            converged = True
            break
        value = new_value

    for a, b in zip(trace, trace[1:]):
        if b < a - 1e-8:
            MONOTONICITY_VIOLATIONS.append(
                f"variant={variant} Q={Q} seed={cfg.seed}: {a!r} -> {b!r}"
            )
    state = VariationalState(tau=tuple(taus))
    return Fit(params=params, state=state, elbo=trace[-1], n_iterations=iteration,
               converged=converged, elbo_trace=tuple(trace))


# ---------------------------------------------------------------------------
# initialization machinery


def random_tau(n: int, Q: int, rng) -> np.ndarray:
    """Softened one-hot random assignment."""
    labels = rng.integers(Q, size=n)
    T = np.full((n, Q), 0.05 / Q)
    T[np.arange(n), labels] += 0.95
    return T


def spectral_tau(network: Network, Q: int, seed: int) -> np.ndarray:
    """Spectral embedding of the symmetrized adjacency plus k-means."""
    if Q == 1:
        return np.ones((network.n, 1))
    n = network.n
    if n <= Q:
        labels = np.arange(n) % Q
    else:
        A = (network.adjacency + network.adjacency.T) / 2.0
        vals, vecs = np.linalg.eigh(A)
        top = np.argsort(np.abs(vals))[-Q:]
        emb = vecs[:, top]
        from sklearn.cluster import KMeans

        km = KMeans(n_clusters=Q, n_init=4, random_state=seed % (2**32))
        labels = km.fit_predict(emb)
    T = np.full((n, Q), 0.05 / Q)
    T[np.arange(n), labels] += 0.95
    return T


def init_candidates(collection: NetworkCollection, variant: str, Q: int,
                    sep_fits: list[Fit], n_perm: int, seed: int) -> list[VariationalState]:
    """Concatenate per-network fits under random block-label permutations."""
    base = [np.array(f.state.tau[0], dtype=float) for f in sep_fits]
    if any(t.shape[1] != Q for t in base):
        raise ValueError("sep fits must have exactly Q blocks")
    states = [VariationalState(tau=tuple(base))]
    rng = np.random.default_rng(seed)
    for _ in range(max(0, n_perm - 1)):
        states.append(VariationalState(
            tau=tuple(t[:, rng.permutation(Q)] for t in base)
        ))
    return states


def _split_candidates_with_support(fit: Fit, nds: list[_NetData]):
    """One candidate per block: bisect its nodes by out-degree residual."""
    Q = fit.params.Q
    S = fit.params.support
    out = []
    for q in range(Q):
        taus = []
        for m, t in enumerate(fit.state.tau):
            col = t[:, q]
            new = np.zeros((t.shape[0], Q + 1))
            new[:, :Q] = t
            new[:, q] = 0.0
            holders = np.where(col > _TINY)[0]
            if holders.size:
                deg = nds[m].degree[holders]
                mean = float(col[holders] @ deg) / float(col[holders].sum())
                resid = deg - mean
                # high-residual half stays in q, the rest moves to the new block
                order = holders[np.lexsort((holders, -resid))]
                keep = order[: (order.size + 1) // 2]
                move = order[(order.size + 1) // 2:]
                new[keep, q] = col[keep]
                new[move, Q] = col[move]
            taus.append(new)
        S_new = np.column_stack([S, S[:, q]])
        out.append((VariationalState(tau=tuple(taus)), S_new))
    return out


def _merge_candidates_with_support(fit: Fit):
    Q = fit.params.Q
    S = fit.params.support
    out = []
    for q in range(Q):
        for r in range(q + 1, Q):
            taus = []
            for t in fit.state.tau:
                merged = t.copy()
                merged[:, q] = merged[:, q] + merged[:, r]
                taus.append(np.delete(merged, r, axis=1))
            S_new = S.copy()
            S_new[:, q] = S[:, q] | S[:, r]
            out.append((VariationalState(tau=tuple(taus)),
                        np.delete(S_new, r, axis=1)))
    return out


def split_merge_candidates(fit: Fit, direction: str, seed: int = 0,
                           collection: NetworkCollection | None = None) -> list[VariationalState]:
    """Refinement proposals around a fit: one state per split block / merged pair."""
    pairs = _split_merge_with_support(fit, direction, collection)
    return [state for state, _ in pairs]


def _split_merge_with_support(fit: Fit, direction: str,
                              collection: NetworkCollection | None = None):
    if direction == "merge":
        if fit.params.Q <= 1:
            raise ValueError("merge requires Q > 1")
        return _merge_candidates_with_support(fit)
    if direction != "split":
        raise ValueError("direction must be 'split' or 'merge'")
    if collection is None:
        raise ValueError("split candidates need the collection (degree ranking)")
    return _split_candidates_with_support(fit, _prepare(collection))
