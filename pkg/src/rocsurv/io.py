"""JSON persistence for fitted trees and forests.

A model file stores the training histories, the evaluation grid and the
fitted arrays.  Loading re-derives the ECDF tables from the stored data and
checks them against a stored digest, so a file whose data and tables
disagree is rejected instead of silently predicting something else.

Output is byte-deterministic: keys are sorted, floats are written with
``repr`` precision and writes go through a temporary file renamed into
place, so an interrupted run never leaves a partial model behind.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

from .forest import ForestModel
from .kernels import BandwidthPolicy
from .survival_data import CovariatePath, Dataset, DataError, TimeGrid, TransformedDataset, transform
from .tree import PartitionTree

__all__ = ["TREE_SCHEMA", "FOREST_SCHEMA", "ModelFormatError", "save_model", "load_model", "dumps_model",
           "loads_model", "atomic_write_text"]

TREE_SCHEMA = "rocsurv.tree/1"
FOREST_SCHEMA = "rocsurv.forest/1"


class ModelFormatError(DataError):
    """Unsupported schema or a model file that fails its integrity checks."""


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a sibling temporary file and ``os.replace``."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".json", dir=d)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _floats(a):
    a = np.asarray(a, float)
    return [None if np.isnan(v) else float(v) for v in a.reshape(-1)]


def _unfloats(xs, shape=None):
    a = np.array([np.nan if v is None else v for v in xs], float)
    return a.reshape(shape) if shape is not None else a


def _tables_digest(tdata: TransformedDataset) -> str:
    h = hashlib.sha256()
    for t in tdata.tables:
        h.update(np.ascontiguousarray(t, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(tdata.baseline, dtype="<f8").tobytes())
    return h.hexdigest()


def _encode_data(tdata: TransformedDataset) -> dict:
    data = tdata.source
    subjects = [
        {
            "id": s.subject_id,
            "delta": int(s.delta),
            "starts": _floats(s.starts),
            "stops": _floats(s.stops),
            "values": [_floats(row) for row in s.values],
        }
        for s in data.subjects
    ]
    return {
        "horizon": float(data.horizon),
        "p": int(data.p),
        "subjects": subjects,
        "grid": {"times": _floats(tdata.grid.times), "weights": _floats(tdata.grid.weights)},
        "tables_sha256": _tables_digest(tdata),
    }


def _decode_data(obj: dict) -> TransformedDataset:
    subjects = [CovariatePath(s["id"], s["starts"], s["stops"], np.array(s["values"], float).reshape(len(s["starts"]), -1),
                              s["delta"]) for s in obj["subjects"]]
    data = Dataset(subjects, horizon=obj["horizon"])
    if data.p != obj["p"]:
        raise ModelFormatError(f"stored p={obj['p']} disagrees with the stored histories (p={data.p})")
    grid = TimeGrid(obj["grid"]["times"], obj["grid"]["weights"])
    tdata = transform(data, grid)
    if _tables_digest(tdata) != obj["tables_sha256"]:
        raise ModelFormatError("ECDF tables rebuilt from the stored data do not match the stored digest")
    return tdata


def _encode_policy(policy: BandwidthPolicy) -> dict:
    return {"mode": policy.mode, "c": policy.c}


def _encode_tree_arrays(tree: PartitionTree, with_stats: bool) -> dict:
    out = {
        "feature": [int(v) for v in tree.feature],
        "threshold": _floats(tree.threshold),
        "left": [int(v) for v in tree.left],
        "right": [int(v) for v in tree.right],
        "parent": [int(v) for v in tree.parent],
        "n_base": _floats(tree.n_base),
        "h": _floats(tree.h),
    }
    if with_stats:
        f, S = tree.stats()
        out["f_star"] = _floats(f)
        out["S_star"] = _floats(S)
    return out


def _decode_tree(arr: dict, tdata, policy, n_min, criterion, seed) -> PartitionTree:
    nn = len(arr["left"])
    q = tdata.q
    f = _unfloats(arr["f_star"], (nn, q)) if "f_star" in arr else None
    S = _unfloats(arr["S_star"], (nn, q)) if "S_star" in arr else None
    tree = PartitionTree(
        np.array(arr["feature"], np.int64), _unfloats(arr["threshold"]), np.array(arr["left"], np.int64),
        np.array(arr["right"], np.int64), np.array(arr["parent"], np.int64), _unfloats(arr["n_base"]), f, S,
        _unfloats(arr["h"]), tdata, policy, n_min, criterion, seed,
    )
    internal = tree.left >= 0
    if np.any(tree.feature[internal] >= tdata.p) or np.any(tree.left >= nn) or np.any(tree.right >= nn):
        raise ModelFormatError("tree arrays reference nodes or coordinates out of range")
    return tree


def _common(obj, tdata) -> dict:
    return {
        "data": _encode_data(tdata),
        "policy": _encode_policy(obj.policy),
        "n_min": float(obj.n_min),
        "criterion": obj.criterion,
        "seed": obj.seed,
    }


def model_to_dict(model) -> dict:
    if isinstance(model, PartitionTree):
        out = _common(model, model.tdata)
        out["schema"] = TREE_SCHEMA
        out["tree"] = _encode_tree_arrays(model, with_stats=True)
        return out
    if isinstance(model, ForestModel):
        out = _common(model, model.tdata)
        out.update(
            schema=FOREST_SCHEMA,
            bandwidth=float(model.bandwidth),
            m=int(model.m),
            mode=model.mode,
            weights=[_floats(w) for w in model.weights],
            grow_weights=[_floats(g) for g in model.grow_weights],
            trees=[_encode_tree_arrays(t, with_stats=False) for t in model.trees],
        )
        return out
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_from_dict(obj: dict):
    schema = obj.get("schema")
    if schema not in (TREE_SCHEMA, FOREST_SCHEMA):
        raise ModelFormatError(f"unsupported model schema {schema!r}")
    tdata = _decode_data(obj["data"])
    policy = BandwidthPolicy(**obj["policy"])
    n_min, criterion, seed = obj["n_min"], obj["criterion"], obj["seed"]
    if schema == TREE_SCHEMA:
        return _decode_tree(obj["tree"], tdata, policy, n_min, criterion, seed)
    trees = [_decode_tree(a, tdata, policy, n_min, criterion, seed) for a in obj["trees"]]
    W = np.array(obj["weights"], float).reshape(len(trees), tdata.n)
    G = np.array(obj["grow_weights"], float).reshape(len(trees), tdata.n)
    return ForestModel(trees, W, G, obj["mode"], tdata, policy, obj["bandwidth"], obj["m"], n_min, criterion, seed)


def dumps_model(model) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def loads_model(text: str):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
    try:
        return model_from_dict(obj)
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"model file is missing or mistypes a field: {exc}") from exc


def save_model(model, path) -> None:
    atomic_write_text(path, dumps_model(model))


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())
