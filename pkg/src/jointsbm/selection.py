"""Model scoring and stepwise search.

Scores are ELBO minus half a parameter-count penalty (plus a support prior
for the partial-support variants).  The search seeds every block count from
independently fitted per-network models, then walks up with block splits and
down with block merges, thresholding mixture weights into sparser supports
for the variants that allow them.  All candidate fits use a cheap coarse
tolerance first; only the leaders get polished.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .model import (
    ColSbmParams,
    NetworkCollection,
    VariationalState,
    full_support,
    support_block_counts,
    validate_support,
)
from .vem import (
    Fit,
    VemConfig,
    _split_merge_with_support,
    init_candidates,
    random_tau,
    run_vem,
    spectral_tau,
)

JOINT_VARIANTS = ("iid", "pi", "delta", "deltapi")

_N_RANDOM_STARTS = 5  # D9: spectral start plus this many random draws per Q


@dataclass(frozen=True)
class SearchConfig:
    q_min: int = 1
    q_max: int = 8
    best_k: int = 3
    thresholds: tuple[float, ...] = (0.0, 1e-3, 1e-2, 5e-2, 1e-1)
    n_perm: int = 25
    seed: int = 0
    vem: VemConfig = field(default_factory=VemConfig)

    def __post_init__(self):
        if self.q_min < 1 or self.q_max < self.q_min:
            raise ValueError("need 1 <= q_min <= q_max")
        if any(not (0.0 <= t < 1.0) for t in self.thresholds):
            raise ValueError("thresholds must lie in [0, 1)")

    def to_metadata(self) -> dict:
        return {
            "q_min": self.q_min,
            "q_max": self.q_max,
            "best_k": self.best_k,
            "thresholds": list(self.thresholds),
            "n_perm": self.n_perm,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class ScoredFit:
    fit: Fit
    bic_l: float
    N_M: int


@dataclass(eq=False)
class SearchResult:
    """Unpacks as (best, per_q); metadata records config echo and coverage."""

    best: ScoredFit
    per_q: dict[int, ScoredFit]
    metadata: dict

    def __iter__(self):
        return iter((self.best, self.per_q))


def log_prior_support(S: np.ndarray, Q: int) -> float:
    """Log prior of a support: uniform block count, uniform subset given it."""
    S = np.asarray(S, dtype=bool)
    if not validate_support(S) or S.shape[1] != Q:
        raise ValueError("invalid support matrix")
    q_m = support_block_counts(S).astype(float)
    log_binom = gammaln(Q + 1) - gammaln(q_m + 1) - gammaln(Q - q_m + 1)
    return float(-S.shape[0] * np.log(Q) - log_binom.sum())


def bic_l(fit: Fit, collection: NetworkCollection) -> float:
    """Penalized score: ELBO minus half the variant's parameter-count penalty."""
    p = fit.params
    S = p.support
    Q, M = p.Q, p.M
    sizes = np.array(collection.sizes, dtype=float)
    if M != collection.M:
        raise ValueError("fit and collection disagree on the number of networks")
    N_M = collection.n_dyads_total()
    variant = p.variant
    extra = 0.0
    if variant in ("iid", "delta"):
        pen = (Q - 1) * np.log(sizes.sum()) + Q * Q * np.log(N_M)
        if variant == "delta":
            pen += (M - 1) * np.log(N_M)
    elif variant in ("pi", "deltapi"):
        q_m = support_block_counts(S)
        pen = float(((q_m - 1) * np.log(sizes)).sum())
        co = (S.T.astype(int) @ S.astype(int)) > 0
        pen += int(co.sum()) * np.log(N_M)
        if variant == "deltapi":
            pen += (M - 1) * np.log(N_M)
        extra = log_prior_support(S, Q)
    elif variant == "sep":
        q_m = support_block_counts(S).astype(float)
        n_dyads = np.array([net.n_dyads() for net in collection.networks], float)
        pen = float(((q_m - 1) * np.log(sizes) + q_m**2 * np.log(n_dyads)).sum())
    else:
        raise ValueError(f"unknown variant: {variant!r}")
    return float(fit.elbo - pen / 2.0 + extra)


def score_fit(fit: Fit, collection: NetworkCollection) -> ScoredFit:
    return ScoredFit(fit=fit, bic_l=bic_l(fit, collection),
                     N_M=collection.n_dyads_total())


# ---------------------------------------------------------------------------
# per-network baseline


def _coarse_cfg(cfg: SearchConfig, seed: int) -> VemConfig:
    return VemConfig(tol=1e-3, max_iter=60,
                     fixed_point_tol=1e-4, fixed_point_max_iter=20, seed=seed,
                     strict_density_ascent=cfg.vem.strict_density_ascent)


def _polish_cfg(cfg: SearchConfig, seed: int) -> VemConfig:
    v = cfg.vem
    return VemConfig(tol=v.tol, max_iter=v.max_iter, fixed_point_tol=v.fixed_point_tol,
                     fixed_point_max_iter=v.fixed_point_max_iter, seed=seed,
                     strict_density_ascent=v.strict_density_ascent)


def fit_sbm_grid(collection: NetworkCollection, cfg: SearchConfig) -> list[dict[int, Fit]]:
    """Best single-network fit for every network and every block count.

    Multi-start per (network, Q): one spectral start plus random draws,
    coarse-fitted, with only the leader polished.
    """
    grid: list[dict[int, Fit]] = []
    seeds = itertools.count(cfg.seed * 7919 + 1)
    for m, net in enumerate(collection.networks):
        sub = collection.subcollection([m])
        per_q: dict[int, Fit] = {}
        for Q in range(cfg.q_min, cfg.q_max + 1):
            rng = np.random.default_rng((cfg.seed, m, Q))
            starts = [spectral_tau(net, Q, seed=next(seeds))]
            starts += [random_tau(net.n, Q, rng) for _ in range(_N_RANDOM_STARTS)]
            S1 = full_support(1, Q)
            coarse = [
                run_vem(sub, "iid", Q, S1, VariationalState(tau=(t,)),
                        _coarse_cfg(cfg, next(seeds)))
                for t in starts
            ]
            leader = max(coarse, key=lambda f: f.elbo)
            per_q[Q] = run_vem(sub, "iid", Q, S1, leader.state,
                               _polish_cfg(cfg, next(seeds)))
        grid.append(per_q)
    return grid


def fit_sep_sbm(collection: NetworkCollection, emission: str, cfg: SearchConfig,
                grid: list[dict[int, Fit]] | None = None) -> list[tuple[Fit, int, float]]:
    """Independent per-network model choice: argmax of the single-network score."""
    if emission != collection.emission:
        raise ValueError("emission does not match the collection")
    if grid is None:
        grid = fit_sbm_grid(collection, cfg)
    out = []
    for m, per_q in enumerate(grid):
        sub = collection.subcollection([m])
        scored = [(bic_l(fit, sub), Q, fit) for Q, fit in sorted(per_q.items())]
        best_score, best_q, best_fit = max(scored, key=lambda t: t[0])
        out.append((best_fit, best_q, best_score))
    return out


def sep_baseline_score(collection: NetworkCollection, cfg: SearchConfig,
                       grid: list[dict[int, Fit]] | None = None) -> float:
    return float(sum(s for _, _, s in
                     fit_sep_sbm(collection, collection.emission, cfg, grid=grid)))


# ---------------------------------------------------------------------------
# stepwise search


def support_candidates(fit: Fit, thresholds) -> list[np.ndarray]:
    """Threshold mixture weights into supports; repair empty rows/columns."""
    pi = fit.params.pi
    out: list[np.ndarray] = []
    seen: set[bytes] = set()
    for t in thresholds:
        S = pi > t
        # repair: any emptied row/column re-enables its largest-pi entry
        for m in np.where(~S.any(axis=1))[0]:
            S[m, int(pi[m].argmax())] = True
        for q in np.where(~S.any(axis=0))[0]:
            S[int(pi[:, q].argmax()), q] = True
        key = S.tobytes()
        if key not in seen and validate_support(S):
            seen.add(key)
            out.append(S)
    return out


def _aligned_seed(fits: list[Fit]) -> VariationalState:
    """Concatenate per-network fits with block labels greedily aligned.

    Random permutation inits only align labels across networks by luck; this
    candidate matches each network's connectivity matrix to a running
    reference, which is what the misaligned local optima need to be escaped.
    """
    Q = fits[0].params.Q
    ref_alpha = np.array(fits[0].params.alpha)
    ref_pi = np.array(fits[0].params.pi[0])
    w = np.outer(ref_pi, ref_pi)
    taus = [np.array(fits[0].state.tau[0])]
    for count, f in enumerate(fits[1:], start=1):
        A = f.params.alpha
        if Q <= 6:
            sigma = min(
                itertools.permutations(range(Q)),
                key=lambda s: float(((A[np.ix_(s, s)] - ref_alpha) ** 2 * w).sum()),
            )
        else:
            from scipy.optimize import linear_sum_assignment

            cost = (np.subtract.outer(np.diag(ref_alpha), np.diag(A)) ** 2
                    + np.subtract.outer(ref_pi, f.params.pi[0]) ** 2)
            sigma = tuple(linear_sum_assignment(cost)[1])
        taus.append(np.array(f.state.tau[0])[:, sigma])
        ref_alpha = (count * ref_alpha + A[np.ix_(sigma, sigma)]) / (count + 1)
    return VariationalState(tau=tuple(taus))


def _canonical_key(taus, S: np.ndarray) -> bytes:
    """Relabeling-invariant digest of a candidate (state, support) pair."""
    stacked = np.vstack([np.asarray(t, float) for t in taus])
    rounded = np.round(stacked, 6) + 0.0
    order = np.lexsort(rounded[::-1])
    return rounded[:, order].tobytes() + np.asarray(S, bool)[:, order].tobytes()


class _Search:
    def __init__(self, collection: NetworkCollection, variant: str, cfg: SearchConfig,
                 grid: list[dict[int, Fit]]):
        self.collection = collection
        self.variant = variant
        self.cfg = cfg
        self.grid = grid
        self.levels: dict[int, list[ScoredFit]] = {}
        self.tried: dict[int, set[bytes]] = {}
        self._seeds = itertools.count(cfg.seed * 104729 + 13)

    def _full_S(self, Q: int) -> np.ndarray:
        return full_support(self.collection.M, Q)

    def evaluate(self, Q: int, candidates: list[tuple[VariationalState, np.ndarray]]):
        """Coarse-fit fresh candidates, polish the leaders, update the level."""
        cfg = self.cfg
        tried = self.tried.setdefault(Q, set())
        fresh = []
        for state, S in candidates:
            if self.variant in ("iid", "delta"):
                S = self._full_S(Q)
            key = _canonical_key(state.tau, S)
            if key in tried:
                continue
            tried.add(key)
            fresh.append((state, S))
        if not fresh:
            return
        coarse = []
        for state, S in fresh:
            f = run_vem(self.collection, self.variant, Q, S, state,
                        _coarse_cfg(cfg, next(self._seeds)))
            coarse.append((f, S))
        coarse.sort(key=lambda pair: bic_l(pair[0], self.collection), reverse=True)
        level = self.levels.setdefault(Q, [])
        for f, S in coarse[: cfg.best_k]:
            polished = run_vem(self.collection, self.variant, Q, S, f.state,
                               _polish_cfg(cfg, next(self._seeds)))
            level.append(score_fit(polished, self.collection))
        level.sort(key=lambda sf: sf.bic_l, reverse=True)
        del level[cfg.best_k:]

    def seed_level(self, Q: int):
        fits = [self.grid[m][Q] for m in range(self.collection.M)]
        states = init_candidates(self.collection, self.variant, Q, fits,
                                 n_perm=self.cfg.n_perm, seed=next(self._seeds))
        states.append(_aligned_seed(fits))
        self.evaluate(Q, [(st, self._full_S(Q)) for st in states])

    def refine_supports(self, Q: int):
        if self.variant not in ("pi", "deltapi") or Q not in self.levels:
            return
        best = self.levels[Q][0].fit
        cands = [(best.state, S) for S in
                 support_candidates(best, self.cfg.thresholds)]
        self.evaluate(Q, cands)

    def split_into(self, Q: int):
        if Q - 1 not in self.levels:
            return
        cands = []
        for sf in self.levels[Q - 1]:
            cands.extend(_split_merge_with_support(sf.fit, "split", self.collection))
        self.evaluate(Q, cands)

    def merge_into(self, Q: int):
        if Q + 1 not in self.levels:
            return
        best = self.levels[Q + 1][0]
        self.evaluate(Q, _split_merge_with_support(best.fit, "merge"))

    def global_best(self) -> ScoredFit:
        return max((lv[0] for lv in self.levels.values()), key=lambda sf: sf.bic_l)

    def run(self) -> SearchResult:
        cfg = self.cfg
        for pass_idx in range(5):  # D11 cap on forward+backward passes
            for Q in range(cfg.q_min, cfg.q_max + 1):
                if pass_idx == 0:
                    self.seed_level(Q)
                self.split_into(Q)
                self.refine_supports(Q)
            for Q in range(cfg.q_max - 1, cfg.q_min - 1, -1):
                self.merge_into(Q)
                self.refine_supports(Q)
            best = self.global_best().bic_l
            if pass_idx > 0 and best - previous < 1e-4:
                break
            previous = best
        best = self.global_best()
        per_q = {Q: lv[0] for Q, lv in sorted(self.levels.items())}
        meta = self.cfg.to_metadata()
        meta["variant"] = self.variant
        meta["q_max_reached"] = best.fit.params.Q == cfg.q_max
        return SearchResult(best=best, per_q=per_q, metadata=meta)


def model_search(collection: NetworkCollection, variant: str, cfg: SearchConfig,
                 grid: list[dict[int, Fit]] | None = None) -> SearchResult:
    """Stepwise block-count and support search; returns (best, per-Q bests)."""
    if variant not in JOINT_VARIANTS:
        raise ValueError("model_search handles the joint variants only")
    if grid is None:
        grid = fit_sbm_grid(collection, cfg)
    return _Search(collection, variant, cfg, grid).run()


@dataclass(eq=False)
class VariantComparison:
    scores: dict[str, float]
    sep_score: float
    best_variant: str
    verdict: str
    results: dict[str, SearchResult]
    sep_fits: list[tuple[Fit, int, float]]
    metadata: dict


def compare_variants(collection: NetworkCollection, cfg: SearchConfig,
                     variants=JOINT_VARIANTS) -> VariantComparison:
    """Scores every joint variant against independent per-network models."""
    grid = fit_sbm_grid(collection, cfg)
    sep_fits = fit_sep_sbm(collection, collection.emission, cfg, grid=grid)
    sep_score = float(sum(s for _, _, s in sep_fits))
    results = {v: model_search(collection, v, cfg, grid=grid) for v in variants}
    scores = {v: r.best.bic_l for v, r in results.items()}
    best_variant = max(scores, key=scores.get)
    verdict = ("common structure" if scores[best_variant] > sep_score
               else "independent structures")
    meta = cfg.to_metadata()
    meta["emission"] = collection.emission
    return VariantComparison(scores=scores, sep_score=sep_score,
                             best_variant=best_variant, verdict=verdict,
                             results=results, sep_fits=sep_fits, metadata=meta)
