"""Self-describing on-disk formats.

Recordings and segment datasets are NumPy archives carrying a JSON header
under the ``meta`` key; annotations are a plain JSON sidecar.  Every loader
checks the embedded format tag so stage commands fail with a clear message
when pointed at the wrong file.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import ClientDataset, ClientSplit
from .pipeline import LabeledSegment, RawRecording, SeizureAnnotation

RECORDING_FORMAT = "fedeeg-recording"
ANNOTATION_FORMAT = "fedeeg-annotations"
SEGMENTS_FORMAT = "fedeeg-segments"
FORMAT_VERSION = 1


def _check_meta(meta: dict, expected: str, path: Path) -> None:
    if meta.get("format") != expected:
        raise ValueError(
            f"{path} is {meta.get('format')!r}, expected a {expected!r} file"
        )
    if meta.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path} has format version {meta.get('version')}, expected {FORMAT_VERSION}")


def save_recording(rec: RawRecording, path: str | Path) -> None:
    path = Path(path)
    names = sorted(rec.channels)
    meta = {
        "format": RECORDING_FORMAT,
        "version": FORMAT_VERSION,
        "patient_id": rec.patient_id,
        "sample_rate_hz": rec.sample_rate_hz,
        "channels": names,
    }
    arrays = {f"ch{idx}": np.asarray(rec.channels[name], dtype=np.float64)
              for idx, name in enumerate(names)}
    np.savez(path, meta=json.dumps(meta), **arrays)


def load_recording(path: str | Path) -> RawRecording:
    path = Path(path)
    with np.load(path) as archive:
        meta = json.loads(str(archive["meta"]))
        _check_meta(meta, RECORDING_FORMAT, path)
        channels = {
            name: archive[f"ch{idx}"] for idx, name in enumerate(meta["channels"])
        }
    return RawRecording(channels, float(meta["sample_rate_hz"]), meta["patient_id"])


def save_annotations(annotations: list[SeizureAnnotation], path: str | Path) -> None:
    doc = {
        "format": ANNOTATION_FORMAT,
        "version": FORMAT_VERSION,
        "seizures": [{"onset_s": a.onset_s, "end_s": a.end_s} for a in annotations],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_annotations(path: str | Path) -> list[SeizureAnnotation]:
    path = Path(path)
    doc = json.loads(path.read_text())
    _check_meta(doc, ANNOTATION_FORMAT, path)
    seizures = doc.get("seizures")
    if not isinstance(seizures, list):
        raise ValueError(f"{path} is missing its 'seizures' list")
    try:
        return [SeizureAnnotation(float(s["onset_s"]), float(s["end_s"])) for s in seizures]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path} has a malformed seizure entry: {exc}") from exc


def segments_to_dataset(name: str, segments: list[LabeledSegment]) -> ClientDataset:
    if not segments:
        raise ValueError(f"no segments to build a dataset for {name!r}")
    inputs = np.stack([s.samples for s in segments]).astype(np.float64)
    labels = np.array([s.label for s in segments], dtype=np.uint8)
    return ClientDataset(name, inputs, labels)


def save_dataset(ds: ClientDataset, path: str | Path) -> None:
    meta = {
        "format": SEGMENTS_FORMAT,
        "version": FORMAT_VERSION,
        "client": ds.name,
        "d": ds.d,
    }
    np.savez(
        Path(path),
        meta=json.dumps(meta),
        inputs=np.asarray(ds.inputs, dtype=np.float64),
        labels=np.asarray(ds.labels, dtype=np.uint8),
    )


def load_dataset(path: str | Path) -> ClientDataset:
    path = Path(path)
    with np.load(path) as archive:
        meta = json.loads(str(archive["meta"]))
        _check_meta(meta, SEGMENTS_FORMAT, path)
        ds = ClientDataset(meta["client"], archive["inputs"], archive["labels"])
    return ds


def save_split(split: ClientSplit, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for part in ("train", "val", "test"):
        save_dataset(getattr(split, part), directory / f"{part}.npz")


def load_split(directory: str | Path) -> ClientSplit:
    directory = Path(directory)
    parts = {}
    for part in ("train", "val", "test"):
        path = directory / f"{part}.npz"
        if not path.exists():
            raise FileNotFoundError(f"missing {part} partition: {path}")
        parts[part] = load_dataset(path)
    names = {ds.name for ds in parts.values()}
    if len(names) != 1:
        raise ValueError(f"{directory} mixes clients {sorted(names)}")
    return ClientSplit(parts["train"].name, parts["train"], parts["val"], parts["test"])
