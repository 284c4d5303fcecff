"""Collection loading from manifests and canonical JSON fit artifacts.

A manifest is a JSON file declaring the emission kind, directedness and one
entry per network file.  Two file formats are supported: tab-separated edge
lists (``src<TAB>dst[<TAB>weight]``, unlisted dyads are zero) and dense
comma-separated matrices with an optional label header.  The literal token
``NA`` marks a missing dyad in either format.

Artifacts are written as canonical JSON: keys sorted, floats printed at 17
significant digits, so equal artifacts are byte-identical files and every
float survives a write/read round trip exactly.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .model import EMISSIONS, Network, NetworkCollection

FORMATS = ("edgelist", "dense")
MISSING_TOKEN = "NA"


def _parse_weight(token: str, emission: str, where: str) -> float:
    try:
        w = float(token)
    except ValueError:
        raise ValueError(f"{where}: unreadable weight {token!r}") from None
    if emission == "poisson" and (w < 0 or w != round(w)):
        raise ValueError(f"{where}: poisson weight must be a nonnegative "
                         f"integer, got {token!r}")
    return w


def _read_edgelist(path: Path, directed: bool, emission: str):
    records = []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise ValueError(f"{path}:{lineno}: expected "
                                 "src<TAB>dst[<TAB>weight]")
            src, dst = parts[0], parts[1]
            if src == dst:
                raise ValueError(f"{path}:{lineno}: self-loops are not modeled")
            if len(parts) == 3 and parts[2] == MISSING_TOKEN:
                w = None
            elif len(parts) == 3:
                w = _parse_weight(parts[2], emission, f"{path}:{lineno}")
            else:
                w = 1.0
            records.append((src, dst, w))
    labels = sorted({lab for s, d, _ in records for lab in (s, d)})
    index = {lab: i for i, lab in enumerate(labels)}
    n = len(labels)
    X = np.zeros((n, n))
    mask = np.ones((n, n), dtype=bool)
    seen = set()
    for src, dst, w in records:
        i, j = index[src], index[dst]
        key = (i, j) if directed else (min(i, j), max(i, j))
        if key in seen:
            raise ValueError(f"{path}: duplicate record for edge "
                             f"{src!r} -> {dst!r}")
        seen.add(key)
        cells = [(i, j)] if directed else [(i, j), (j, i)]
        for a, b in cells:
            if w is None:
                mask[a, b] = False
            else:
                X[a, b] = w
    return X, mask, tuple(labels)


def _read_dense(path: Path, emission: str):
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise ValueError(f"{path}: empty matrix file")

    def numeric(tok: str) -> bool:
        if tok.strip() == MISSING_TOKEN:
            return True
        try:
            float(tok)
            return True
        except ValueError:
            return False

    labels = None
    if not all(numeric(tok) for tok in rows[0]):
        labels = tuple(tok.strip() for tok in rows[0])
        rows = rows[1:]
    n = len(rows)
    if any(len(row) != n for row in rows):
        raise ValueError(f"{path}: matrix is not square")
    if labels is not None and len(labels) != n:
        raise ValueError(f"{path}: header length differs from matrix size")
    X = np.zeros((n, n))
    mask = np.ones((n, n), dtype=bool)
    for i, row in enumerate(rows):
        for j, tok in enumerate(row):
            tok = tok.strip()
            if tok == MISSING_TOKEN:
                mask[i, j] = False
            else:
                X[i, j] = _parse_weight(tok, emission, f"{path}:row {i + 1}")
    return X, mask, labels


def load_collection(manifest_path) -> NetworkCollection:
    """Build a collection from a JSON manifest of network files."""
    manifest_path = Path(manifest_path)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    emission = manifest.get("emission")
    if emission not in EMISSIONS:
        raise ValueError(f"manifest emission must be one of {EMISSIONS}")
    directed = manifest.get("directed")
    if not isinstance(directed, bool):
        raise ValueError("manifest 'directed' must be true or false")
    entries = manifest.get("networks")
    if not isinstance(entries, list) or not entries:
        raise ValueError("manifest needs a non-empty 'networks' list")
    nets = []
    for entry in entries:
        fmt = entry.get("format")
        if fmt not in FORMATS:
            raise ValueError(f"network format must be one of {FORMATS}")
        path = Path(entry["path"])
        if not path.is_absolute():
            path = manifest_path.parent / path
        if fmt == "edgelist":
            X, mask, labels = _read_edgelist(path, directed, emission)
        else:
            X, mask, labels = _read_dense(path, emission)
        nets.append(Network(adjacency=X, directed=directed,
                            observed_mask=mask, node_labels=labels,
                            name=str(entry.get("name", path.stem))))
    return NetworkCollection(tuple(nets), emission)


# ---------------------------------------------------------------------------
# canonical JSON


def _canonical(obj, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError("artifacts may not contain non-finite numbers")
        s = f"{x:.17g}"
        if not any(c in s for c in ".eE"):
            s += ".0"  # keep the value a float across a read back
        out.append(s)
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if not isinstance(key, str):
                raise TypeError("artifact keys must be strings")
            if i:
                out.append(",")
            out.append(json.dumps(key))
            out.append(":")
            _canonical(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        for i, item in enumerate(seq):
            if i:
                out.append(",")
            _canonical(item, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj) -> str:
    """Serialize with sorted keys and 17-significant-digit floats."""
    out: list[str] = []
    _canonical(obj, out)
    return "".join(out)


def fit_artifact(fit, variant: str, bic: float, config: dict, seed: int,
                 emit_tau: bool = False) -> dict:
    """JSON-ready summary of a fitted model."""
    p = fit.params
    art = {
        "variant": variant,
        "Q": int(p.Q),
        "S": [[bool(v) for v in row] for row in p.support],
        "pi": p.pi,
        "alpha": p.alpha,
        "delta": p.delta,
        "memberships": [np.argmax(t, axis=1) for t in fit.state.tau],
        "elbo": float(fit.elbo),
        "bic_l": float(bic),
        "converged": bool(fit.converged),
        "config": config,
        "seed": int(seed),
        "version": __version__,
    }
    if emit_tau:
        art["tau"] = list(fit.state.tau)
    return art


def write_fit(artifact: dict, path) -> None:
    """Write an artifact as canonical JSON (a trailing newline, UTF-8)."""
    text = canonical_json(artifact) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def read_fit(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
