"""Versioned checkpoint container.

A checkpoint is a deterministic zip holding ``meta.json`` (format version,
model config, extra run metadata), ``stats.json`` (the normalization stats the
model was trained with) and one ``.npy`` entry per parameter/buffer tensor.
Round-trips are bit-exact.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..preprocess import NormalizationStats
from ..tileio import json_bytes, write_zip_deterministic
from .models import ARCHITECTURES, ModelConfig, SegmentationModel, build_model

FORMAT_VERSION = 1


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr))
    return buf.getvalue()


def save_checkpoint(
    path,
    model: SegmentationModel,
    stats: NormalizationStats | None = None,
    meta: dict | None = None,
) -> None:
    entries: dict[str, bytes] = {}
    payload = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "meta": meta or {},
    }
    entries["meta.json"] = json_bytes(payload)
    if stats is not None:
        entries["stats.json"] = json_bytes(stats.to_dict())
    for name, p in model.named_parameters().items():
        entries[f"params/{name}.npy"] = _npy_bytes(p.data)
    for name, b in model.named_buffers().items():
        entries[f"buffers/{name}.npy"] = _npy_bytes(b)
    write_zip_deterministic(path, entries)


def load_checkpoint(path, registry=None):
    """Rebuild (model, stats, meta) from a checkpoint file.

    ``registry`` may supply additional architecture constructors (used by
    tests to install stub models); it defaults to the built-in four.
    """
    registry = registry or ARCHITECTURES
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint {path} does not exist")
    with zipfile.ZipFile(path) as zf:
        names = set(zf.namelist())
        if "meta.json" not in names:
            raise DataError(f"{path} is not a checkpoint (missing meta.json)")
        payload = json.loads(zf.read("meta.json"))
        if payload.get("format_version") != FORMAT_VERSION:
            raise DataError(
                f"unsupported checkpoint version {payload.get('format_version')}"
            )
        cfg_dict = payload["model_config"]
        arch = cfg_dict["arch"]
        if arch in ARCHITECTURES:
            model = build_model(ModelConfig.from_dict(cfg_dict))
        elif arch in registry:
            model = registry[arch](cfg_dict)
        else:
            raise DataError(f"checkpoint arch {arch!r} not in registry")
        for name, p in model.named_parameters().items():
            key = f"params/{name}.npy"
            if key not in names:
                raise DataError(f"checkpoint missing parameter {name}")
            p.data = np.lib.format.read_array(io.BytesIO(zf.read(key)))
        for name in model.named_buffers():
            key = f"buffers/{name}.npy"
            if key in names:
                arr = np.lib.format.read_array(io.BytesIO(zf.read(key)))
                dst = model.named_buffers()[name]
                np.copyto(dst, arr)
        stats = None
        if "stats.json" in names:
            stats = NormalizationStats.from_dict(json.loads(zf.read("stats.json")))
    return model, stats, payload["meta"]
