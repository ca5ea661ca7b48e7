"""Model-bank documents.

A bank is written as JSON with every float printed to 17 significant digits,
so a save/load/save cycle reproduces the file byte for byte. Loading checks
the format version and every model invariant.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .dbn import DbnParams
from .exceptions import CorruptModel, IoError, SchemaVersionMismatch
from .features import RoiKind
from .fusion import ModelBank
from .hmm import HmmParams
from .scene import ActivityClass

BANK_FORMAT_VERSION = 1

_DBN_FIELDS = ("phase_prior", "phase_trans", "motion_prior", "motion_trans",
               "geo_mean", "geo_var", "mot_mean", "mot_var")
_HMM_FIELDS = ("prior", "trans", "mean", "var")


def format_float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise CorruptModel(f"cannot serialise non-finite value {x}")
    return format(x, ".17g")


def dumps_canonical(obj, indent: int = 0) -> str:
    """Deterministic JSON text; numeric lists stay on one line."""
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps_canonical(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if all(isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps_canonical(v) for v in obj) + "]"
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(inner + dumps_canonical(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    return json.dumps(obj)


def bank_to_dict(bank: ModelBank) -> dict:
    bank.check_complete()
    models = []
    for activity in ActivityClass:
        for roi in RoiKind:
            params = bank.models[(activity, roi)]
            models.append({
                "activity": activity.slug,
                "roi": roi.slug,
                "params": {name: arr for name, arr in params.arrays().items()},
            })
    return {
        "format_version": BANK_FORMAT_VERSION,
        "kind": bank.kind,
        "feature_fingerprint": bank.fingerprint,
        "var_floor": bank.var_floor,
        "class_prior": bank.prior,
        "models": models,
    }


def bank_to_text(bank: ModelBank) -> str:
    return dumps_canonical(bank_to_dict(bank)) + "\n"


def _params_from_doc(kind: str, doc: dict):
    fields = _DBN_FIELDS if kind == "dbn" else _HMM_FIELDS
    try:
        arrays = {name: np.asarray(doc[name], dtype=np.float64) for name in fields}
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptModel(f"malformed {kind} parameters: {exc}") from exc
    return DbnParams(**arrays) if kind == "dbn" else HmmParams(**arrays)


def bank_from_dict(doc: dict) -> ModelBank:
    version = doc.get("format_version")
    if version != BANK_FORMAT_VERSION:
        raise SchemaVersionMismatch(f"bank format_version {version!r} != {BANK_FORMAT_VERSION}")
    kind = doc.get("kind")
    if kind not in ("dbn", "hmm"):
        raise CorruptModel(f"unknown model kind {kind!r}")
    try:
        var_floor = float(doc["var_floor"])
        models = {}
        for entry in doc["models"]:
            key = (ActivityClass.from_slug(entry["activity"]), RoiKind[entry["roi"].upper()])
            if key in models:
                raise CorruptModel(f"duplicate model for {key}")
            params = _params_from_doc(kind, entry["params"])
            try:
                params.validate(var_floor, exc=CorruptModel)
            except CorruptModel as exc:
                raise CorruptModel(f"{key[0].slug}/{key[1].slug}: {exc}") from exc
            models[key] = params
        bank = ModelBank(
            kind=kind,
            models=models,
            prior=np.asarray(doc["class_prior"], dtype=np.float64),
            fingerprint=str(doc["feature_fingerprint"]),
            var_floor=var_floor,
        )
    except CorruptModel:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModel(f"malformed bank document: {exc}") from exc
    if len(models) != len(ActivityClass) * len(RoiKind):
        raise CorruptModel(f"bank has {len(models)} models, expected {len(ActivityClass) * len(RoiKind)}")
    return bank


def save_bank(bank: ModelBank, path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(bank_to_text(bank), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_bank(path) -> ModelBank:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptModel(f"{path} is not valid JSON: {exc}") from exc
    return bank_from_dict(doc)
