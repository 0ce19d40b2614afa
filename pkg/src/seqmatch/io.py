"""On-disk formats: feature packs, tensor containers, corpora and reports.

A feature pack is a UTF-8 JSON manifest next to a raw data file of
little-endian float32 values, row-major in (frame, token, channel) order::

    {"schema": "seqmatch.featurepack/1", "T": 8, "U": 4, "D": 16,
     "classes": ["a", "b"], "data": "train.bin",
     "videos": [{"name": "v0", "class": "a", "offset": 0, "length": 512}, ...]}

``offset`` is in bytes and ``length`` in elements (``T * U * D``).

A tensor container uses the same layout for named tensors of any shape; each
entry carries its ``dtype`` (``float32`` or ``float64``, little-endian) and
``shape``. Weights are stored as float64 so a save/load cycle is exact.
"""

import csv
import json
import os

import numpy as np

from .engine import Dataset
from .errors import UsageError
from .numerics import ParamStore
from .prototypes import ClassCorpus, class_text_embedding

PACK_SCHEMA = "seqmatch.featurepack/1"
TENSOR_SCHEMA = "seqmatch.tensors/1"
CORPUS_SCHEMA = "seqmatch.corpus/1"
_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}


def _data_path(manifest_path, name):
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), name)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {what} {path}: {exc}") from exc


def _check_schema(doc, schema, path):
    if not isinstance(doc, dict) or doc.get("schema") != schema:
        found = doc.get("schema") if isinstance(doc, dict) else None
        raise UsageError(f"{path}: expected schema {schema!r}, found {found!r}")


def _read_blob(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read data file {path}: {exc}") from exc


def _slice(blob, offset, length, dtype, where):
    if not (isinstance(offset, int) and isinstance(length, int)) or offset < 0 or length < 0:
        raise UsageError(f"{where}: offset and length must be non-negative integers")
    end = offset + length * dtype.itemsize
    if end > len(blob):
        raise UsageError(f"{where}: descriptor runs past the end of the data file")
    return np.frombuffer(blob, dtype=dtype, count=length, offset=offset)


# -- feature packs --------------------------------------------------------------


def write_feature_pack(path, dataset):
    """Write ``dataset`` as ``path`` (manifest) plus ``<stem>.bin``."""
    V, T, U, D = dataset.videos.shape
    data_name = os.path.splitext(os.path.basename(path))[0] + ".bin"
    length = T * U * D
    raw = np.ascontiguousarray(dataset.videos, dtype=_DTYPES["float32"])
    with open(_data_path(path, data_name), "wb") as fh:
        fh.write(raw.tobytes())
    videos = [
        {"name": n, "class": dataset.class_names[l], "offset": i * length * 4, "length": length}
        for i, (n, l) in enumerate(zip(dataset.video_names, dataset.labels))
    ]
    _write_json(path, {
        "schema": PACK_SCHEMA, "T": T, "U": U, "D": D,
        "classes": list(dataset.class_names), "data": data_name, "videos": videos,
    })


def read_feature_pack(path):
    """Read a pack: ``(class_names, videos (V, T, U, D) float64, labels, video_names)``."""
    doc = _read_json(path, "feature pack")
    _check_schema(doc, PACK_SCHEMA, path)
    try:
        T, U, D = int(doc["T"]), int(doc["U"]), int(doc["D"])
        classes = list(doc["classes"])
        entries = doc["videos"]
        data_name = doc["data"]
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: malformed manifest ({exc})") from exc
    index = {c: i for i, c in enumerate(classes)}
    blob = _read_blob(_data_path(path, data_name))
    videos, labels, names = [], [], []
    for k, e in enumerate(entries):
        where = f"{path}: video {k}"
        if e.get("length") != T * U * D:
            raise UsageError(f"{where}: length must equal T*U*D = {T * U * D}")
        if e.get("class") not in index:
            raise UsageError(f"{where}: unknown class {e.get('class')!r}")
        arr = _slice(blob, e.get("offset"), e["length"], _DTYPES["float32"], where)
        videos.append(arr.reshape(T, U, D))
        labels.append(index[e["class"]])
        names.append(str(e.get("name", f"v{k:05d}")))
    stack = np.stack(videos).astype(np.float64) if videos else np.zeros((0, T, U, D))
    return classes, stack, np.array(labels, dtype=np.int64), names


# -- tensor containers ------------------------------------------------------------


def write_tensors(path, tensors, dtype="float64", extra=None):
    """Write ``{name: array}`` in insertion order; ``extra`` maps name -> metadata dict."""
    dt = _DTYPES[dtype]
    data_name = os.path.splitext(os.path.basename(path))[0] + ".bin"
    entries, offset = [], 0
    with open(_data_path(path, data_name), "wb") as fh:
        for name, value in tensors.items():
            arr = np.ascontiguousarray(value, dtype=dt)
            fh.write(arr.tobytes())
            entry = {"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset, "length": int(arr.size)}
            entry.update((extra or {}).get(name, {}))
            entries.append(entry)
            offset += arr.nbytes
    _write_json(path, {"schema": TENSOR_SCHEMA, "data": data_name, "tensors": entries})


def read_tensors(path):
    """Return ``(tensors, metadata)``: name -> float64 array and name -> entry dict."""
    doc = _read_json(path, "tensor file")
    _check_schema(doc, TENSOR_SCHEMA, path)
    try:
        blob = _read_blob(_data_path(path, doc["data"]))
        entries = list(doc["tensors"])
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{path}: malformed tensor manifest ({exc})") from exc
    out, meta = {}, {}
    for e in entries:
        where = f"{path}: tensor {e.get('name')!r}"
        if e.get("dtype") not in _DTYPES:
            raise UsageError(f"{where}: unsupported dtype {e.get('dtype')!r}")
        shape = tuple(e.get("shape", ()))
        if int(np.prod(shape)) != e.get("length"):
            raise UsageError(f"{where}: shape does not match length")
        arr = _slice(blob, e.get("offset"), e["length"], _DTYPES[e["dtype"]], where)
        out[e["name"]] = arr.reshape(shape).astype(np.float64)
        meta[e["name"]] = e
    return out, meta


def save_params(path, store):
    write_tensors(
        path,
        store.arrays(),
        "float64",
        {n: {"trainable": store.is_trainable(n)} for n in store.names()},
    )


def load_params(path):
    tensors, meta = read_tensors(path)
    store = ParamStore()
    for name, value in tensors.items():
        store.add(name, value, trainable=bool(meta[name].get("trainable", True)))
    return store


# -- corpora and datasets ---------------------------------------------------------


def write_corpus(path, corpus):
    _write_json(path, {
        "schema": CORPUS_SCHEMA,
        "classes": [{"name": c.name, "descriptions": list(c.descriptions)} for c in corpus],
    })


def read_corpus(path):
    doc = _read_json(path, "corpus")
    _check_schema(doc, CORPUS_SCHEMA, path)
    try:
        return [ClassCorpus(c["name"], list(c.get("descriptions", [])), c.get("text_embedding")) for c in doc["classes"]]
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{path}: malformed corpus ({exc})") from exc


def write_text_embeddings(path, corpus):
    write_tensors(path, {c.name: c.text_embedding for c in corpus}, "float32")


def load_dataset(features, text_embeddings, corpus=None):
    """Assemble a :class:`Dataset` from a pack and a text-embedding file.

    A text tensor of shape ``(n, D)`` (several descriptions) is averaged.
    When a corpus file is given, every pack class must appear in it.
    """
    classes, videos, labels, names = read_feature_pack(features)
    text, _ = read_tensors(text_embeddings)
    if corpus is not None:
        known = {c.name for c in read_corpus(corpus)}
        missing = [c for c in classes if c not in known]
        if missing:
            raise UsageError(f"classes missing from corpus: {', '.join(missing)}")
    missing = [c for c in classes if c not in text]
    if missing:
        raise UsageError(f"classes missing text embeddings: {', '.join(missing)}")
    emb = np.stack([class_text_embedding(text[c]) for c in classes])
    return Dataset(classes, videos, labels, emb, names)


# -- reports ----------------------------------------------------------------------


def write_report(path, report):
    _write_json(path, report)


def write_episode_csv(path, rows, columns):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] for c in columns])


def write_embeddings_csv(path, names, classes, embeddings):
    D = embeddings.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "class"] + [f"e{j}" for j in range(D)])
        for n, c, row in zip(names, classes, embeddings):
            w.writerow([n, c] + [repr(float(x)) for x in row])
