"""Benchmark scenarios: seeded generators, model fits and tidy result tables.

Each runner sweeps a parameter grid, draws ``replicates`` collections per grid
value, fits the models the scenario prescribes and emits one row per
(grid value, replicate).  ``summarize_scenario`` averages those rows back into
one line per grid value.  Everything is deterministic given the config seed;
per-replicate seeds derive from (seed, grid index, replicate index).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .model import NetworkCollection
from .partition import clust2coll
from .selection import (
    JOINT_VARIANTS,
    SearchConfig,
    fit_sbm_grid,
    fit_sep_sbm,
    model_search,
)
from .simulate import ari, ari_joint, ari_mean, rec_support, rmse_alpha, simulate
from .vem import VemConfig

SCENARIOS = ("table_s1", "table_s2", "partition_fig", "finer_blocks",
             "size_study")

_DEFAULT_GRIDS = {
    "table_s1": tuple(round(0.04 * i, 2) for i in range(7)),
    "table_s2": tuple(round(0.04 * i, 2) for i in range(8)),
    "partition_fig": (0.1, 0.2, 0.3, 0.4),
    "finer_blocks": (0.4,),
    "size_study": (10.0, 20.0, 40.0, 80.0, 160.0, 320.0, 640.0),
}

# admissible grid ranges; size_study's grid holds the second network's sizes
_GRID_BOUNDS = {
    "table_s1": (0.0, 0.24),
    "table_s2": (0.0, 0.28),
    "partition_fig": (0.0, 0.4),
    "finer_blocks": (0.0, 0.4),
    "size_study": (4, 640),
}

_DEFAULT_VARIANTS = {
    "table_s1": ("iid", "pi"),
    "table_s2": ("iid", "pi"),
    "partition_fig": JOINT_VARIANTS,
    "finer_blocks": JOINT_VARIANTS,
    "size_study": JOINT_VARIANTS,
}

_SCN_VEM = VemConfig(tol=1e-5, max_iter=200, fixed_point_tol=1e-5,
                     fixed_point_max_iter=30)

_SEARCH_CFGS = {
    "table_s1": SearchConfig(q_max=6, best_k=2, thresholds=(0.0, 1e-2, 5e-2),
                             n_perm=8, vem=_SCN_VEM),
    "table_s2": SearchConfig(q_max=5, best_k=2, thresholds=(0.0, 1e-2, 5e-2),
                             n_perm=8, vem=_SCN_VEM),
    "partition_fig": SearchConfig(q_max=4, best_k=1, thresholds=(0.0, 1e-2),
                                  n_perm=4, vem=_SCN_VEM),
    "finer_blocks": SearchConfig(q_max=4, best_k=2, thresholds=(0.0, 1e-2),
                                 n_perm=6, vem=_SCN_VEM),
    "size_study": SearchConfig(q_max=5, best_k=2, thresholds=(0.0, 1e-2),
                               n_perm=6, vem=_SCN_VEM),
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Which scenario to run, on what grid, with how many replicates.

    ``variants`` selects the joint models fitted by the partition,
    finer-blocks and size-study scenarios; the two table scenarios have a
    fixed protocol (iid and pi against the separate baseline).
    """

    scenario: str
    epsilon: tuple[float, ...] | None = None
    replicates: int = 30
    seed: int = 0
    variants: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario: {self.scenario!r}")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        grid = self.epsilon
        if grid is None:
            grid = _DEFAULT_GRIDS[self.scenario]
        grid = tuple(float(e) for e in grid)
        lo, hi = _GRID_BOUNDS[self.scenario]
        if not grid or any(not lo <= e <= hi for e in grid):
            raise ValueError(f"grid values must lie in [{lo}, {hi}]")
        variants = self.variants
        if variants is None:
            variants = _DEFAULT_VARIANTS[self.scenario]
        variants = tuple(variants)
        if not variants or any(v not in JOINT_VARIANTS for v in variants):
            raise ValueError("variants must name joint models")
        object.__setattr__(self, "epsilon", grid)
        object.__setattr__(self, "variants", variants)


def _rep_seeds(seed: int, i_eps: int, rep: int, k: int = 3) -> list[int]:
    ss = np.random.SeedSequence((seed, i_eps, rep))
    return [int(s) for s in ss.generate_state(k)]


# ---------------------------------------------------------------------------
# inference accuracy across a connectivity-strength grid

_B4 = np.array([[3.0, 2.0, 1.0, -1.0],
                [2.0, 2.0, -1.0, 1.0],
                [1.0, -1.0, 1.0, 2.0],
                [-1.0, 1.0, 2.0, 0.0]])

_S1_BASES = (np.array([0.2, 0.4, 0.4, 0.0]),
             np.array([0.0, 1 / 3, 1 / 3, 1 / 3]))


def table_s1_proportions(rng):
    """Relabeled proportion pairs whose empty blocks never coincide.

    Returns (pi1, pi2) and the two relabelings; each network keeps a
    non-empty block that is empty in the other one.
    """
    base1, base2 = _S1_BASES
    while True:
        q1, q2 = rng.permutation(4), rng.permutation(4)
        if q1[3] != q2[0]:
            break
    pi1, pi2 = np.empty(4), np.empty(4)
    pi1[q1] = base1
    pi2[q2] = base2
    return (pi1, pi2), (tuple(int(i) for i in q1), tuple(int(i) for i in q2))


def _run_table_s1(cfg: ScenarioConfig) -> pd.DataFrame:
    base_cfg = _SEARCH_CFGS["table_s1"]
    rows = []
    for i_eps, eps in enumerate(cfg.epsilon):
        alpha = 0.25 + eps * _B4
        for rep in range(cfg.replicates):
            s_gen, s_sim, s_fit = _rep_seeds(cfg.seed, i_eps, rep)
            (pi1, pi2), perms = table_s1_proportions(np.random.default_rng(s_gen))
            coll, truth = simulate("pi", (120, 120), 4, np.stack([pi1, pi2]),
                                   alpha, seed=s_sim, permutations=perms)
            sc = replace(base_cfg, seed=s_fit)
            grid = fit_sbm_grid(coll, sc)
            res_pi = model_search(coll, "pi", sc, grid=grid)
            res_iid = model_search(coll, "iid", sc, grid=grid)
            sep_fits = fit_sep_sbm(coll, coll.emission, sc, grid=grid)
            bic_sep = float(sum(s for _, _, s in sep_fits))
            bic_pi, bic_iid = res_pi.best.bic_l, res_iid.best.bic_l
            q_hat = res_pi.best.fit.params.Q
            at4 = res_pi.per_q.get(4)
            rec = rmse = float("nan")
            if at4 is not None:
                rec = rec_support(at4.fit.params.support, truth.params.support)
                # Each network misses one block and the two missing blocks
                # differ, so one block pair never shares a network; its
                # connectivity entries are not determined by the data and are
                # left out of the error.
                S_true = truth.params.support
                observable = (S_true.T.astype(int) @ S_true.astype(int)) > 0
                rmse = rmse_alpha(at4.fit.params.alpha, truth.params.alpha,
                                  mask=observable)
            zh = [np.argmax(t, axis=1) for t in res_pi.best.fit.state.tau]
            rows.append({
                "scenario": cfg.scenario, "epsilon": eps, "replicate": rep,
                "pi_over_sep": int(bic_pi > bic_sep),
                "pi_over_iid": int(bic_pi > bic_iid),
                "q_hat": q_hat, "q_under": int(q_hat < 4),
                "q_exact": int(q_hat == 4), "q_over": int(q_hat > 4),
                "rec": rec, "rmse": rmse,
                "ari_mean": ari_mean(zh, truth.memberships),
                "ari_joint": ari_joint(zh, truth.memberships),
                "bic_pi": bic_pi, "bic_iid": bic_iid, "bic_sep": bic_sep,
            })
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# model choice across a proportion-imbalance grid

_B3 = np.array([[3.0, 2.0, 1.0],
                [2.0, 2.0, -1.0],
                [1.0, -1.0, 1.0]])


def _run_table_s2(cfg: ScenarioConfig) -> pd.DataFrame:
    base_cfg = _SEARCH_CFGS["table_s2"]
    alpha = 0.25 + 0.16 * _B3
    pi1 = np.full(3, 1 / 3)
    rows = []
    for i_eps, eps in enumerate(cfg.epsilon):
        for rep in range(cfg.replicates):
            s_gen, s_sim, s_fit = _rep_seeds(cfg.seed, i_eps, rep)
            q2 = np.random.default_rng(s_gen).permutation(3)
            pi2 = np.empty(3)
            pi2[q2] = np.array([1 / 3 - eps, 1 / 3, 1 / 3 + eps])
            perms = (tuple(range(3)), tuple(int(i) for i in q2))
            coll, truth = simulate("pi", (90, 90), 3, np.stack([pi1, pi2]),
                                   alpha, seed=s_sim, permutations=perms)
            sc = replace(base_cfg, seed=s_fit)
            grid = fit_sbm_grid(coll, sc)
            res_pi = model_search(coll, "pi", sc, grid=grid)
            res_iid = model_search(coll, "iid", sc, grid=grid)
            sep_fits = fit_sep_sbm(coll, coll.emission, sc, grid=grid)
            scores = {"iid": res_iid.best.bic_l, "pi": res_pi.best.bic_l,
                      "sep": float(sum(s for _, _, s in sep_fits))}
            chosen = max(scores, key=scores.get)
            q_hat = res_pi.best.fit.params.Q
            at3 = res_pi.per_q.get(3)
            rec = float("nan")
            if at3 is not None:
                rec = rec_support(at3.fit.params.support, truth.params.support)
            rows.append({
                "scenario": cfg.scenario, "epsilon": eps, "replicate": rep,
                "chosen_iid": int(chosen == "iid"),
                "chosen_pi": int(chosen == "pi"),
                "chosen_sep": int(chosen == "sep"),
                "q_hat": q_hat, "q_exact": int(q_hat == 3), "rec": rec,
                "bic_pi": scores["pi"], "bic_iid": scores["iid"],
                "bic_sep": scores["sep"],
            })
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# partition recovery over three planted sub-collections


def structure_alphas(eps: float) -> dict[str, np.ndarray]:
    """Assortative, layered core-periphery and disassortative connectivities."""
    return {
        "as": 0.3 + eps * np.array([[1.0, -0.5, -0.5],
                                    [-0.5, 1.0, -0.5],
                                    [-0.5, -0.5, 1.0]]),
        "cp": 0.3 + eps * np.array([[1.5, 1.0, 0.5],
                                    [1.0, 0.5, 0.0],
                                    [0.5, 0.0, -0.5]]),
        "dis": 0.3 + eps * np.array([[-0.5, 1.0, 1.0],
                                     [1.0, -0.5, 1.0],
                                     [1.0, 1.0, -0.5]]),
    }


_PARTITION_PI = np.array([0.2, 0.3, 0.5])
_PARTITION_TRUTH = np.repeat(np.arange(3), 3)


def _mode_pis(M: int, mode: str, rng) -> np.ndarray:
    """Per-network proportions: shared, or relabeled per network after the first."""
    pis = np.tile(_PARTITION_PI, (M, 1))
    if mode in ("pi", "deltapi"):
        for m in range(1, M):
            pis[m] = pis[m][rng.permutation(3)]
    return pis


def _run_partition_fig(cfg: ScenarioConfig) -> pd.DataFrame:
    base_cfg = _SEARCH_CFGS["partition_fig"]
    rows = []
    for i_eps, eps in enumerate(cfg.epsilon):
        alphas = structure_alphas(eps)
        for rep in range(cfg.replicates):
            row = {"scenario": cfg.scenario, "epsilon": eps, "replicate": rep}
            for mode in cfg.variants:
                j = JOINT_VARIANTS.index(mode)
                ss = np.random.SeedSequence((cfg.seed, i_eps, rep, j))
                s_gen, s_sim, s_fit = [int(s) for s in ss.generate_state(3)]
                rng = np.random.default_rng(s_gen)
                pis = _mode_pis(9, mode, rng)
                deltas = np.tile([1.0, 0.75, 0.5], 3)
                nets, sim_seeds = [], np.random.default_rng(s_sim)
                for g, name in enumerate(("as", "cp", "dis")):
                    members = range(3 * g, 3 * g + 3)
                    sub, _ = simulate(
                        mode, (75, 75, 75), 3, pis[list(members)],
                        alphas[name],
                        deltas[list(members)] if mode in ("delta", "deltapi") else None,
                        seed=int(sim_seeds.integers(2**63)), directed=False)
                    nets.extend(sub.networks)
                coll = NetworkCollection(tuple(nets), "bernoulli")
                part = clust2coll(coll, mode, replace(base_cfg, seed=s_fit))
                labels = np.empty(9, dtype=int)
                for g_idx, grp in enumerate(part.groups):
                    labels[list(grp)] = g_idx
                row[f"ari_{mode}"] = ari(labels, _PARTITION_TRUTH)
                row[f"n_groups_{mode}"] = len(part.groups)
            rows.append(row)
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# finer blocks on a small network through joint fits

_FINER_SIZES = (90, 90, 120, 120, 60)
_FINER_SUBSETS = (("m2", (0, 4)), ("m3", (0, 1, 4)), ("m5", (0, 1, 2, 3, 4)))


def _run_finer_blocks(cfg: ScenarioConfig) -> pd.DataFrame:
    base_cfg = _SEARCH_CFGS["finer_blocks"]
    rows = []
    for i_eps, eps in enumerate(cfg.epsilon):
        alpha = structure_alphas(eps)["cp"]
        for rep in range(cfg.replicates):
            row = {"scenario": cfg.scenario, "epsilon": eps, "replicate": rep}
            for mode in cfg.variants:
                j = JOINT_VARIANTS.index(mode)
                ss = np.random.SeedSequence((cfg.seed, i_eps, rep, j))
                s_gen, s_sim, s_fit = [int(s) for s in ss.generate_state(3)]
                rng = np.random.default_rng(s_gen)
                pis = _mode_pis(5, mode, rng)
                delta = ((1.0, 1.0, 1.0, 1.0, 0.5)
                         if mode in ("delta", "deltapi") else None)
                coll, _ = simulate(mode, _FINER_SIZES, 3, pis, alpha, delta,
                                   seed=s_sim, directed=False)
                sc = replace(base_cfg, seed=s_fit)
                grid = fit_sbm_grid(coll, sc)
                sep5 = fit_sep_sbm(coll.subcollection([4]), coll.emission, sc,
                                   grid=[grid[4]])
                row[f"q5_sep_{mode}"] = sep5[0][1]
                for label, members in _FINER_SUBSETS:
                    sub = coll.subcollection(members)
                    res = model_search(sub, mode, sc,
                                       grid=[grid[m] for m in members])
                    q5 = int(res.best.fit.params.support[-1].sum())
                    row[f"q5_{label}_{mode}"] = q5
            rows.append(row)
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# structured network paired with a featureless one of growing size

_SIZE_ALPHA = np.array([[0.55, 0.1, 0.1],
                        [0.1, 0.5, 0.1],
                        [0.1, 0.1, 0.45]])
_SIZE_PI = np.array([0.4, 0.3, 0.3])


def _run_size_study(cfg: ScenarioConfig) -> pd.DataFrame:
    base_cfg = _SEARCH_CFGS["size_study"]
    rows = []
    for i_eps, eps in enumerate(cfg.epsilon):
        n_er = int(eps)
        for rep in range(cfg.replicates):
            s_gen, s_sim, s_fit = _rep_seeds(cfg.seed, i_eps, rep)
            sim_rng = np.random.default_rng(s_sim)
            coll_as, truth_as = simulate("iid", (64,), 3, _SIZE_PI, _SIZE_ALPHA,
                                         seed=int(sim_rng.integers(2**63)))
            coll_er, _ = simulate("iid", (n_er,), 1, (1.0,), [[0.25]],
                                  seed=int(sim_rng.integers(2**63)))
            coll = NetworkCollection(
                (coll_as.networks[0], coll_er.networks[0]), "bernoulli")
            z_true = (truth_as.memberships[0], np.zeros(n_er, dtype=int))
            sc = replace(base_cfg, seed=s_fit)
            grid = fit_sbm_grid(coll, sc)
            sep_fits = fit_sep_sbm(coll, coll.emission, sc, grid=grid)
            bic_sep = float(sum(s for _, _, s in sep_fits))
            row = {"scenario": cfg.scenario, "epsilon": eps, "n_er": n_er,
                   "replicate": rep, "bic_sep": bic_sep,
                   "ari_as_sep": ari(np.argmax(sep_fits[0][0].state.tau[0], axis=1),
                                     z_true[0]),
                   "ari_er_sep": ari(np.argmax(sep_fits[1][0].state.tau[0], axis=1),
                                     z_true[1])}
            for mode in cfg.variants:
                res = model_search(coll, mode, sc, grid=grid)
                zh = [np.argmax(t, axis=1) for t in res.best.fit.state.tau]
                row[f"ari_as_{mode}"] = ari(zh[0], z_true[0])
                row[f"ari_er_{mode}"] = ari(zh[1], z_true[1])
                row[f"dbic_{mode}"] = res.best.bic_l - bic_sep
            rows.append(row)
    return pd.DataFrame(rows)


_RUNNERS = {
    "table_s1": _run_table_s1,
    "table_s2": _run_table_s2,
    "partition_fig": _run_partition_fig,
    "finer_blocks": _run_finer_blocks,
    "size_study": _run_size_study,
}


def run_scenario(cfg: ScenarioConfig) -> pd.DataFrame:
    """Tidy results: one row per (grid value, replicate), seeded and repeatable."""
    return _RUNNERS[cfg.scenario](cfg)


def summarize_scenario(df: pd.DataFrame) -> pd.DataFrame:
    """Average the tidy rows into one line per grid value."""
    grouped = df.groupby("epsilon", sort=True)
    out = grouped.mean(numeric_only=True)
    out = out.drop(columns=["replicate"], errors="ignore")
    out["n_replicates"] = grouped.size()
    return out.reset_index()
