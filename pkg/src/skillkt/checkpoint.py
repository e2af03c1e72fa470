"""Self-describing model checkpoints (npz container with a JSON meta block)."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass

import numpy as np

from .errors import CheckpointError
from .model import KTModel, ModelConfig, init_parameters
from .optim import AdamState

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: KTModel
    adam: AdamState | None
    epoch: int
    best_auc: float | None
    run_config: dict
    version: int


def save_checkpoint(path, model: KTModel, adam: AdamState | None = None,
                    epoch: int = 0, best_auc: float | None = None,
                    run_config: dict | None = None) -> None:
    """Write atomically (tmp file + rename) so an interrupted run never
    leaves a truncated checkpoint behind."""
    meta = {
        "version": FORMAT_VERSION,
        "model_config": asdict(model.config),
        "n_problems": model.n_problems,
        "param_names": model.parameter_names(),
        "epoch": epoch,
        "best_auc": best_auc,
        "run_config": run_config or {},
        "adam": None if adam is None else {
            "lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
            "epsilon": adam.epsilon, "t": adam.t,
        },
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for name, p in model.params.items():
        arrays[f"param:{name}"] = p.data
    if adam is not None:
        for i, name in enumerate(model.parameter_names()):
            arrays[f"adam_m:{name}"] = adam.m[i]
            arrays[f"adam_v:{name}"] = adam.v[i]
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    try:
        with np.load(path) as bundle:
            arrays = {k: bundle[k] for k in bundle.files}
    except (OSError, ValueError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if "meta" not in arrays:
        raise CheckpointError(f"checkpoint {path} has no meta block")
    try:
        meta = json.loads(bytes(arrays["meta"]).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"checkpoint {path} meta block is corrupt: {e}") from e
    version = meta.get("version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint {path} has format version {version}, "
                              f"this build reads {FORMAT_VERSION}")
    try:
        config = ModelConfig(**meta["model_config"])
        model = init_parameters(config, meta["n_problems"], seed=0)
        model.load_arrays({name: arrays[f"param:{name}"] for name in meta["param_names"]})
    except KeyError as e:
        raise CheckpointError(f"checkpoint {path} is missing {e}") from e
    adam = None
    if meta.get("adam") is not None:
        a = meta["adam"]
        adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"],
                         epsilon=a["epsilon"], t=a["t"],
                         m=[arrays[f"adam_m:{n}"] for n in meta["param_names"]],
                         v=[arrays[f"adam_v:{n}"] for n in meta["param_names"]])
    return Checkpoint(model=model, adam=adam, epoch=meta.get("epoch", 0),
                      best_auc=meta.get("best_auc"),
                      run_config=meta.get("run_config", {}), version=version)
