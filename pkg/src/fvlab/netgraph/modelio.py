"""Model files: a JSON manifest plus a little-endian raw float sidecar."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .graph import PARAM_SLOTS, LayerGraph, LayerSpec

FORMAT = "fvlab-model"
VERSION = 1
_DTYPES = {"f64": "<f8", "f32": "<f4"}


class ModelFormatError(ValueError):
    pass


def _paths(path):
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    return path, path.with_suffix(".bin")


def save_model(graph: LayerGraph, path) -> Path:
    manifest_path, blob_path = _paths(path)
    dtype = _DTYPES[graph.precision]
    tensors, chunks, offset = [], [], 0
    for name, spec in graph.layers.items():
        for slot in PARAM_SLOTS[spec.kind]:
            key = f"{name}/{slot}"
            if key not in graph.params:
                continue
            arr = np.ascontiguousarray(graph.params[key], dtype=dtype)
            tensors.append({"name": key, "shape": list(arr.shape), "dtype": dtype,
                            "offset": offset, "trainable": key in graph.trainable})
            chunks.append(arr.tobytes())
            offset += arr.nbytes
    blob = b"".join(chunks)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "precision": graph.precision,
        "input_shape": list(graph.input_shape),
        "output": graph.output,
        "layers": [{"name": s.name, "kind": s.kind, "inputs": s.inputs, "attrs": s.attrs}
                   for s in graph.layers.values()],
        "tensors": tensors,
        "blob": blob_path.name,
        "blob_bytes": len(blob),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "meta": graph.meta,
    }
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    blob_path.write_bytes(blob)
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return manifest_path


def load_model(path) -> LayerGraph:
    manifest_path, _ = _paths(path)
    try:
        manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
        raise ModelFormatError(f"{manifest_path}: not an {FORMAT} manifest")
    if manifest.get("version") != VERSION:
        raise ModelFormatError(f"{manifest_path}: unsupported version {manifest.get('version')!r}")
    try:
        blob = (manifest_path.parent / manifest["blob"]).read_bytes()
        layers, tensors = manifest["layers"], manifest["tensors"]
        precision, input_shape = manifest["precision"], manifest["input_shape"]
    except (KeyError, OSError) as exc:
        raise ModelFormatError(f"{manifest_path}: malformed manifest ({exc})") from exc
    if len(blob) != manifest.get("blob_bytes", len(blob)):
        raise ModelFormatError(f"weight blob holds {len(blob)} bytes, manifest declares {manifest['blob_bytes']}")

    arrays, trainable = {}, set()
    for t in tensors:
        dtype = np.dtype(t["dtype"])
        count = int(np.prod(t["shape"]))
        end = t["offset"] + count * dtype.itemsize
        if end > len(blob):
            raise ModelFormatError(f"tensor {t['name']!r} extends past the end of the weight blob")
        arrays[t["name"]] = np.frombuffer(blob, dtype, count, t["offset"]).reshape(t["shape"]).astype(np.float64)
        if t.get("trainable"):
            trainable.add(t["name"])

    graph = LayerGraph(input_shape, precision)
    for entry in layers:
        if entry["kind"] == "input":
            continue
        params = {}
        for slot in PARAM_SLOTS.get(entry["kind"], ()):
            key = f"{entry['name']}/{slot}"
            if key in arrays:
                params[slot] = arrays.pop(key)
            elif entry["kind"] in ("conv", "dense") and slot == "bias":
                continue
            else:
                raise ModelFormatError(f"layer {entry['name']!r} references missing tensor {key!r}")
        try:
            graph.add(entry["name"], entry["kind"], entry["inputs"], entry.get("attrs", {}), params,
                      trainable=False)
        except ValueError as exc:
            raise ModelFormatError(f"layer {entry['name']!r}: {exc}") from exc
    if arrays:
        raise ModelFormatError(f"tensors not used by any layer: {sorted(arrays)}")
    if manifest["output"] not in graph.layers:
        raise ModelFormatError(f"output layer {manifest['output']!r} does not exist")
    graph.output = manifest["output"]
    graph.trainable = trainable
    graph.meta = manifest.get("meta", {})
    return graph


def model_digest(graph: LayerGraph) -> str:
    """Content hash of wiring and parameters."""
    h = hashlib.sha256()
    h.update(json.dumps([[s.name, s.kind, s.inputs, s.attrs] for s in graph.layers.values()],
                        sort_keys=True).encode())
    for key in sorted(graph.params):
        h.update(key.encode())
        h.update(np.ascontiguousarray(graph.params[key], dtype="<f8").tobytes())
    return h.hexdigest()


__all__ = ["ModelFormatError", "LayerSpec", "load_model", "model_digest", "save_model"]
