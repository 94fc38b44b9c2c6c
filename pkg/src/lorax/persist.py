"""Run persistence: one directory per run holding the config snapshot, the
accuracy matrix as CSV, flat JSON metrics, parameter accounting, and a
checkpoints tree of named .npy tensors with JSON manifests.
"""

from __future__ import annotations

import json
import os

import numpy as np
import torch

from .backbone import Backbone, BackboneConfig, build_backbone
from .engine import (FinetuneClassifier, FullRankExpansionClassifier, LoraxClassifier,
                     OracleClassifier, RunRecord, StrategyKind)
from .errors import DataError
from .expansion import ExpandingClassifier
from .lora import AdapterSet, LoraAdapter


def _save_array(path: str, tensor: torch.Tensor):
    np.save(path, tensor.detach().cpu().numpy())


def _load_array(path: str) -> torch.Tensor:
    return torch.from_numpy(np.load(path))


def _write_json(path: str, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: str):
    with open(path) as fh:
        return json.load(fh)


def save_backbone(dir_path: str, backbone: Backbone):
    os.makedirs(dir_path, exist_ok=True)
    files = {}
    for name, param in backbone.state_dict().items():
        fname = f"{name}.npy"
        _save_array(os.path.join(dir_path, fname), param)
        files[name] = fname
    # flat site_id -> tensor file map so adapter sites stay addressable
    # without knowing the module layout
    site_files = {}
    for site in backbone.sites():
        w = backbone.site_weight(site.site_id)
        for name, param in backbone.named_parameters():
            if param is w:
                site_files[site.site_id] = files[name]
                break
    _write_json(os.path.join(dir_path, "manifest.json"), {
        "kind": "backbone",
        "config": backbone.config.to_dict(),
        "frozen": backbone.frozen,
        "tensors": files,
        "sites": site_files,
    })


def load_backbone(dir_path: str) -> Backbone:
    manifest = _read_json(os.path.join(dir_path, "manifest.json"))
    backbone = build_backbone(BackboneConfig.from_dict(manifest["config"]))
    state = {name: _load_array(os.path.join(dir_path, fname))
             for name, fname in manifest["tensors"].items()}
    backbone.load_state_dict(state)
    if manifest.get("frozen"):
        backbone.freeze()
    return backbone


def save_adapter_set(dir_path: str, adapters: AdapterSet):
    os.makedirs(dir_path, exist_ok=True)
    sites = {}
    for site_id, ad in adapters.adapters.items():
        a_file, b_file = f"{site_id}.A.npy", f"{site_id}.B.npy"
        _save_array(os.path.join(dir_path, a_file), ad.A)
        _save_array(os.path.join(dir_path, b_file), ad.B)
        sites[site_id] = {"A": a_file, "B": b_file, "rank": ad.rank, "scale": ad.scale}
    _write_json(os.path.join(dir_path, "manifest.json"), {
        "kind": "adapters",
        "task_id": adapters.task_id,
        "frozen": adapters.frozen,
        "sites": sites,
    })


def load_adapter_set(dir_path: str) -> AdapterSet:
    manifest = _read_json(os.path.join(dir_path, "manifest.json"))
    adapters = {}
    for site_id, entry in manifest["sites"].items():
        A = _load_array(os.path.join(dir_path, entry["A"]))
        B = _load_array(os.path.join(dir_path, entry["B"]))
        ad = LoraAdapter(site_id, (B.shape[0], A.shape[1]), int(entry["rank"]),
                         float(entry["scale"]), dtype=A.dtype)
        with torch.no_grad():
            ad.A.copy_(A)
            ad.B.copy_(B)
        adapters[site_id] = ad
    out = AdapterSet(int(manifest["task_id"]), adapters)
    if manifest.get("frozen"):
        out.freeze()
    return out


def save_classifier(dir_path: str, head: ExpandingClassifier):
    os.makedirs(dir_path, exist_ok=True)
    _save_array(os.path.join(dir_path, "weight.npy"), head.weight)
    _save_array(os.path.join(dir_path, "bias.npy"), head.bias)
    _write_json(os.path.join(dir_path, "manifest.json"), {
        "kind": "classifier",
        "class_ids": list(head.class_ids),
        "tensors": {"weight": "weight.npy", "bias": "bias.npy"},
    })


def load_classifier(dir_path: str) -> ExpandingClassifier:
    manifest = _read_json(os.path.join(dir_path, "manifest.json"))
    head = ExpandingClassifier()
    w = _load_array(os.path.join(dir_path, "weight.npy"))
    b = _load_array(os.path.join(dir_path, "bias.npy"))
    head.weight = torch.nn.Parameter(w)
    head.bias = torch.nn.Parameter(b)
    head.class_ids = [int(c) for c in manifest["class_ids"]]
    return head


def save_model(ckpt_dir: str, estimator) -> None:
    """Write the model bundle: backbone file(s), per-task adapters, head, manifest."""
    os.makedirs(ckpt_dir, exist_ok=True)
    manifest: dict = {"task_class_ids": None, "class_ids": None}
    if isinstance(estimator, LoraxClassifier):
        net = estimator._network
        manifest.update(kind=StrategyKind.LORAX.value,
                        task_class_ids=net.task_class_ids, class_ids=net.class_ids,
                        tasks=[ex.task_id for ex in net.extractors])
        save_backbone(os.path.join(ckpt_dir, "backbone"), net.backbone)
        for ex in net.extractors:
            save_adapter_set(os.path.join(ckpt_dir, f"task_{ex.task_id:03d}.adapters"), ex.adapter_set)
        save_classifier(os.path.join(ckpt_dir, "classifier"), net.classifier)
    elif isinstance(estimator, FullRankExpansionClassifier):
        net = estimator._network
        manifest.update(kind=StrategyKind.FULL_RANK_EXPANSION.value,
                        task_class_ids=net.task_class_ids, class_ids=net.class_ids,
                        tasks=[ex.task_id for ex in net.extractors])
        for ex in net.extractors:
            save_backbone(os.path.join(ckpt_dir, f"task_{ex.task_id:03d}.backbone"), ex.net)
        save_classifier(os.path.join(ckpt_dir, "classifier"), net.classifier)
    elif isinstance(estimator, (FinetuneClassifier, OracleClassifier)):
        kind = StrategyKind.FINETUNE if isinstance(estimator, FinetuneClassifier) else StrategyKind.ORACLE
        manifest.update(kind=kind.value, class_ids=list(estimator._head.class_ids),
                        task_class_ids=None, tasks=None)
        save_backbone(os.path.join(ckpt_dir, "backbone"), estimator._net)
        save_classifier(os.path.join(ckpt_dir, "classifier"), estimator._head)
    else:
        raise DataError(f"cannot persist estimator of type {type(estimator).__name__}")
    try:
        manifest["exemplars"] = estimator.buffer_manifest()
    except Exception:
        manifest["exemplars"] = {}
    _write_json(os.path.join(ckpt_dir, "manifest.json"), manifest)


class LoadedModel:
    """Inference-only reconstruction of a persisted model bundle."""

    def __init__(self, kind: StrategyKind, class_ids, logits_fn, config: BackboneConfig):
        self.kind = kind
        self.class_ids = list(class_ids)
        self._logits_fn = logits_fn
        self.config = config

    def predict_proba(self, X) -> np.ndarray:
        from .validation import as_image_tensor

        xt = as_image_tensor(np.asarray(X, dtype=np.float32),
                             channels=self.config.channels, image_size=self.config.image_size)
        with torch.no_grad():
            out = [self._logits_fn(xt[s:s + 256]).softmax(dim=-1) for s in range(0, len(xt), 256)]
        return torch.cat(out).cpu().numpy()

    def predict(self, X) -> np.ndarray:
        probs = self.predict_proba(X)
        return np.asarray(self.class_ids)[np.argmax(probs, axis=1)]


def load_model(ckpt_dir: str) -> LoadedModel:
    manifest = _read_json(os.path.join(ckpt_dir, "manifest.json"))
    kind = StrategyKind.parse(manifest["kind"])
    head = load_classifier(os.path.join(ckpt_dir, "classifier"))
    if kind is StrategyKind.LORAX:
        backbone = load_backbone(os.path.join(ckpt_dir, "backbone"))
        backbone.freeze()
        adapter_sets = [load_adapter_set(os.path.join(ckpt_dir, f"task_{tid:03d}.adapters"))
                        for tid in manifest["tasks"]]

        def logits_fn(xb):
            feats = torch.cat([backbone(xb, adapters=a) for a in adapter_sets], dim=-1)
            return head(feats)

        return LoadedModel(kind, manifest["class_ids"], logits_fn, backbone.config)
    if kind is StrategyKind.FULL_RANK_EXPANSION:
        nets = [load_backbone(os.path.join(ckpt_dir, f"task_{tid:03d}.backbone"))
                for tid in manifest["tasks"]]

        def logits_fn(xb):
            feats = torch.cat([n(xb) for n in nets], dim=-1)
            return head(feats)

        return LoadedModel(kind, manifest["class_ids"], logits_fn, nets[0].config)
    backbone = load_backbone(os.path.join(ckpt_dir, "backbone"))

    def logits_fn(xb):
        return head(backbone(xb))

    return LoadedModel(kind, manifest["class_ids"], logits_fn, backbone.config)


def save_run(run_dir: str, record: RunRecord, save_checkpoints: bool = True) -> None:
    """Write config.json, matrix.csv, metrics.json, params.json and checkpoints/."""
    os.makedirs(run_dir, exist_ok=True)
    snapshot = dict(record.config)
    snapshot["strategy"] = record.strategy
    _write_json(os.path.join(run_dir, "config.json"), snapshot)
    with open(os.path.join(run_dir, "matrix.csv"), "w") as fh:
        fh.write(record.matrix.to_csv())
    _write_json(os.path.join(run_dir, "metrics.json"), record.metrics)
    _write_json(os.path.join(run_dir, "params.json"), {
        "trainable_params_per_task": record.trainable_params_per_task,
        "total_params": record.total_params,
        "wall_time_s": record.wall_time_s,
        "seed": record.seed,
    })
    if save_checkpoints and record.estimator is not None:
        save_model(os.path.join(run_dir, "checkpoints"), record.estimator)


def load_run(run_dir: str) -> dict:
    """Read back the serialized pieces of a run directory."""
    out = {
        "config": _read_json(os.path.join(run_dir, "config.json")),
        "metrics": _read_json(os.path.join(run_dir, "metrics.json")),
        "params": _read_json(os.path.join(run_dir, "params.json")),
    }
    with open(os.path.join(run_dir, "matrix.csv")) as fh:
        from .metrics import AccuracyMatrix

        out["matrix"] = AccuracyMatrix.from_csv(fh.read())
    return out
