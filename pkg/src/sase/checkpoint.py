"""Binary parameter container: flat float64 records plus a JSON index.

A checkpoint directory holds

* ``params.bin``  — little-endian float64 payloads, concatenated
* ``params.json`` — index: per-record name, shape, byte offset/length,
  and whether the entry is trainable

Records are written in sorted-name order so identical parameter dicts
always serialize to identical bytes. Round-trips are bit-exact.

The same container backs optimizer moments (``optimizer.bin/.json``).
"""

import json
import os

import numpy as np

from .autodiff import Tensor
from .errors import DataError

_FORMAT = "sase-params-v1"


def save_arrays(path_bin, path_json, arrays, trainable=None):
    """Write ``{name: ndarray}`` to the binary container + JSON index."""
    records = []
    offset = 0
    with open(path_bin, "wb") as fh:
        for name in sorted(arrays):
            payload = np.ascontiguousarray(arrays[name], dtype="<f8").tobytes()
            fh.write(payload)
            records.append(
                {
                    "name": name,
                    "shape": list(np.asarray(arrays[name]).shape),
                    "offset": offset,
                    "nbytes": len(payload),
                    "trainable": bool(trainable.get(name, True)) if trainable else True,
                }
            )
            offset += len(payload)
    index = {"format": _FORMAT, "records": records}
    with open(path_json, "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_arrays(path_bin, path_json):
    """Read the container back into ``({name: ndarray}, {name: trainable})``."""
    with open(path_json) as fh:
        index = json.load(fh)
    if index.get("format") != _FORMAT:
        raise DataError(f"unrecognized parameter container format in {path_json}")
    blob = open(path_bin, "rb").read()
    arrays, trainable = {}, {}
    for rec in index["records"]:
        raw = blob[rec["offset"] : rec["offset"] + rec["nbytes"]]
        if len(raw) != rec["nbytes"]:
            raise DataError(f"truncated container {path_bin}: record {rec['name']!r}")
        arr = np.frombuffer(raw, dtype="<f8").reshape(rec["shape"]).astype(np.float64)
        arrays[rec["name"]] = arr
        trainable[rec["name"]] = rec.get("trainable", True)
    return arrays, trainable


def save_params(ckpt_dir, params, extra_config=None):
    """Save a named Tensor dict (and optional config JSON) into a directory."""
    os.makedirs(ckpt_dir, exist_ok=True)
    arrays = {name: t.data for name, t in params.items()}
    flags = {name: t.requires_grad for name, t in params.items()}
    save_arrays(os.path.join(ckpt_dir, "params.bin"), os.path.join(ckpt_dir, "params.json"), arrays, flags)
    if extra_config is not None:
        with open(os.path.join(ckpt_dir, "config.json"), "w") as fh:
            json.dump(extra_config, fh, indent=1, sort_keys=True)
            fh.write("\n")


def load_params(ckpt_dir):
    """Load a checkpoint directory back into ``{name: Tensor}``."""
    arrays, flags = load_arrays(os.path.join(ckpt_dir, "params.bin"), os.path.join(ckpt_dir, "params.json"))
    params = {}
    for name, arr in arrays.items():
        t = Tensor(arr.copy(), requires_grad=flags[name])
        params[name] = t
    return params


def load_config(ckpt_dir):
    cfg_path = os.path.join(ckpt_dir, "config.json")
    if not os.path.exists(cfg_path):
        raise DataError(f"checkpoint {ckpt_dir} has no config.json")
    with open(cfg_path) as fh:
        return json.load(fh)


def save_adam(ckpt_dir, state):
    arrays = {}
    for name, arr in state.m.items():
        arrays[f"m.{name}"] = arr
    for name, arr in state.v.items():
        arrays[f"v.{name}"] = arr
    save_arrays(os.path.join(ckpt_dir, "optimizer.bin"), os.path.join(ckpt_dir, "optimizer.json"), arrays)
    meta = {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps, "step": state.step}
    with open(os.path.join(ckpt_dir, "optimizer_meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_adam(ckpt_dir):
    from .optim import AdamState

    arrays, _ = load_arrays(os.path.join(ckpt_dir, "optimizer.bin"), os.path.join(ckpt_dir, "optimizer.json"))
    with open(os.path.join(ckpt_dir, "optimizer_meta.json")) as fh:
        meta = json.load(fh)
    state = AdamState(lr=meta["lr"], beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"], step=meta["step"])
    for name, arr in arrays.items():
        kind, pname = name.split(".", 1)
        (state.m if kind == "m" else state.v)[pname] = arr.copy()
    return state
