"""Missing-link and missing-dyad prediction.

A fitted model scores every dyad by contracting the membership probabilities
with the fitted block rates.  Masking helpers generate the two experiment
flavours: hide a fraction of existing links (re-encoded as zeros) or hide a
fraction of dyads entirely (marked unobserved).  AUC is the Mann-Whitney
statistic with ties counted one half.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import rankdata

from .model import Network, NetworkCollection
from .selection import SearchConfig, model_search
from .vem import Fit

MASK_MODES = ("links", "dyads")


@dataclass(frozen=True)
class MaskSpec:
    target_network: int
    fraction: float
    mode: str
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must lie in [0, 1]")
        if self.mode not in MASK_MODES:
            raise ValueError(f"mode must be one of {MASK_MODES}")


def link_probabilities(fit: Fit, m: int, emission: str = "bernoulli") -> np.ndarray:
    """Dyad scores tau' (delta alpha) tau; clamped to [0,1] for Bernoulli."""
    tau = fit.state.tau[m]
    rates = fit.params.delta[m] * fit.params.alpha
    P = tau @ rates @ tau.T
    np.fill_diagonal(P, 0.0)
    if emission == "bernoulli":
        P = np.clip(P, 0.0, 1.0)
    return P


def _candidate_cells(net: Network):
    """Off-diagonal observed positions; unordered pairs when undirected."""
    obs = net.observed_mask.copy()
    if not net.directed:
        obs &= np.triu(np.ones_like(obs, dtype=bool), 1)
    return np.argwhere(obs)


def mask_network(network: Network, spec: MaskSpec):
    """Hide links or dyads; returns the masked network and ground truth.

    Ground truth rows are (i, j, label).  Links mode labels removed links 1
    and every observed true zero 0; dyads mode records the hidden values.
    """
    rng = np.random.default_rng(spec.seed)
    cells = _candidate_cells(network)
    X = network.adjacency
    if spec.mode == "links":
        links = cells[X[cells[:, 0], cells[:, 1]] > 0]
        k = int(spec.fraction * len(links))
        if k == 0:
            if spec.fraction > 0:
                warnings.warn("fraction removes no links", stacklevel=2)
            return network, []
        chosen = links[rng.choice(len(links), size=k, replace=False)]
        new_X = np.array(X)
        new_X[chosen[:, 0], chosen[:, 1]] = 0.0
        if not network.directed:
            new_X[chosen[:, 1], chosen[:, 0]] = 0.0
        truth = [(int(i), int(j), 1) for i, j in chosen]
        zeros = cells[X[cells[:, 0], cells[:, 1]] == 0]
        truth += [(int(i), int(j), 0) for i, j in zeros]
    else:
        k = int(spec.fraction * len(cells))
        if k == 0:
            if spec.fraction > 0:
                warnings.warn("fraction removes no dyads", stacklevel=2)
            return network, []
        chosen = cells[rng.choice(len(cells), size=k, replace=False)]
        new_mask = np.array(network.observed_mask)
        new_mask[chosen[:, 0], chosen[:, 1]] = False
        if not network.directed:
            new_mask[chosen[:, 1], chosen[:, 0]] = False
        truth = [(int(i), int(j), int(X[i, j])) for i, j in chosen]
        new_X = np.array(X)
    masked = Network(
        adjacency=new_X,
        directed=network.directed,
        observed_mask=network.observed_mask if spec.mode == "links" else new_mask,
        node_labels=network.node_labels,
        name=network.name,
    )
    return masked, truth


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with ties counted one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    n1 = int(pos.sum())
    n0 = len(labels) - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("both classes must be present")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def prediction_experiment(collection: NetworkCollection, cfg: SearchConfig,
                          k_grid, mode: str, replicates: int,
                          variants=("iid", "pi", "delta", "deltapi", "sep"),
                          target: int = 0) -> list[dict]:
    """Mask, refit from scratch, score the hidden cells; tidy rows out.

    Each replicate re-runs the full model search on the masked collection so
    the block count is re-selected, and records it.
    """
    from .selection import fit_sep_sbm

    rows = []
    for rep in range(replicates):
        for K in k_grid:
            spec = MaskSpec(target_network=target, fraction=float(K), mode=mode,
                            seed=cfg.seed + 7919 * rep + int(round(1000 * K)))
            masked_net, truth = mask_network(collection.networks[target], spec)
            if not truth:
                continue
            labels = [t[2] for t in truth]
            if len(set(labels)) < 2:
                continue
            nets = list(collection.networks)
            nets[target] = masked_net
            masked_coll = NetworkCollection(networks=tuple(nets),
                                            emission=collection.emission)
            sub_cfg = replace(cfg, seed=spec.seed)
            for variant in variants:
                if variant == "sep":
                    fits = fit_sep_sbm(masked_coll, masked_coll.emission, sub_cfg)
                    fit, q_hat = fits[target][0], fits[target][1]
                    P = link_probabilities(fit, 0, masked_coll.emission)
                else:
                    res = model_search(masked_coll, variant, sub_cfg)
                    fit = res.best.fit
                    q_hat = fit.params.Q
                    P = link_probabilities(fit, target, masked_coll.emission)
                scores = [P[i, j] for i, j, _ in truth]
                rows.append({
                    "replicate": rep,
                    "K": float(K),
                    "mode": mode,
                    "model": variant,
                    "auc": roc_auc(scores, labels),
                    "q_hat": int(q_hat),
                })
    return rows
