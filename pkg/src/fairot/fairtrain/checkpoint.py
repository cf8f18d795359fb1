"""JSON checkpoints of :class:`MlpModel`.

Layout (``format`` = ``"fairot-mlp"``, ``version`` = 1)::

    layer_sizes   [d_in, h_1, ..., 1]
    activations   one tag per layer: "relu" for hidden layers, then the head
    weights       per layer, the (fan_in, fan_out) matrix flattened row-major
    biases        per layer
    feature_names input column names
    x_mean, x_scale  standardization applied to raw inputs
    meta          free-form (task, feature mode)

Floats are written with full precision, so save/load round-trips exactly.
"""

import json
import os
import tempfile

import numpy as np

from ..errors import InvalidInput
from .mlp import MlpModel

FORMAT = "fairot-mlp"
VERSION = 1


def model_to_dict(model: MlpModel) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "layer_sizes": list(model.layer_sizes),
        "activations": model.activations(),
        "weights": [W.ravel(order="C").tolist() for W in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "feature_names": list(model.feature_names),
        "x_mean": model.x_mean.tolist(),
        "x_scale": model.x_scale.tolist(),
        "meta": model.meta,
    }


def model_from_dict(d: dict) -> MlpModel:
    if d.get("format") != FORMAT:
        raise InvalidInput("not a fairot model checkpoint")
    if d.get("version") != VERSION:
        raise InvalidInput(f"unsupported checkpoint version {d.get('version')!r}")
    sizes = [int(s) for s in d["layer_sizes"]]
    acts = d["activations"]
    if len(acts) != len(sizes) - 1 or any(a != "relu" for a in acts[:-1]):
        raise InvalidInput("checkpoint activations must be relu on hidden layers")
    Ws = [np.asarray(w, dtype=float).reshape(sizes[k], sizes[k + 1]) for k, w in enumerate(d["weights"])]
    bs = [np.asarray(b, dtype=float) for b in d["biases"]]
    return MlpModel(
        sizes,
        Ws,
        bs,
        acts[-1],
        np.asarray(d["x_mean"], dtype=float),
        np.asarray(d["x_scale"], dtype=float),
        tuple(d.get("feature_names", ())),
        dict(d.get("meta", {})),
    )


def atomic_write_text(path, text):
    """Write via a temporary file in the same directory, then rename."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: MlpModel, path):
    atomic_write_text(path, json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path) -> MlpModel:
    try:
        with open(path, encoding="utf-8") as fh:
            return model_from_dict(json.load(fh))
    except FileNotFoundError:
        raise InvalidInput(f"checkpoint not found: {path}") from None
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise InvalidInput(f"cannot read checkpoint {path}: {exc}") from None
