"""Manifest ingestion, the binary array container, and checkpoints.

Container format ("AVF1", version 1, little-endian):

    magic   4 bytes  b"AVF1"
    version u32      1
    count   u64      number of entries
    entry*  key_len u32, key utf-8 bytes,
            dtype   u8  (0 = float32, 1 = float64),
            ndim    u32, shape u32 * ndim,
            payload raw little-endian floats, C order

Entries are written in sorted key order and the file is published with
an atomic rename, so identical content yields identical bytes and
concurrent readers never observe a partial file.  Arrays are float64 in
memory regardless of the stored payload type; embeddings and
spectrograms are stored as float32, checkpoints as float64.
"""

import csv
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, NotFoundError, ValidationError

LABELS = (
    "airport",
    "bus",
    "metro",
    "metro_station",
    "park",
    "public_square",
    "shopping_mall",
    "street_pedestrian",
    "street_traffic",
    "tram",
)
N_CLASSES = len(LABELS)
_LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}

SPLITS = ("train", "eval")


def label_index(label: str) -> int:
    try:
        return _LABEL_INDEX[label]
    except KeyError:
        raise ValidationError(
            f"unknown label {label!r} (expected one of {LABELS})"
        ) from None


def one_hot(labels) -> np.ndarray:
    out = np.zeros((len(labels), N_CLASSES), dtype=np.float64)
    for i, label in enumerate(labels):
        out[i, label_index(label)] = 1.0
    return out


@dataclass
class ManifestEntry:
    sample_id: str
    label: str
    split: str  # "train", "eval", or "" when untagged
    audio_path: str
    image_paths: list


@dataclass
class Manifest:
    entries: list
    base_dir: str = "."

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def split(self, name: str):
        return [e for e in self.entries if e.split == name]

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)


_HEADER = ["sample_id", "label", "split", "audio_path", "image_paths"]


def parse_manifest(path) -> Manifest:
    """Read and validate a manifest CSV (see _HEADER for the columns)."""
    entries = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _HEADER:
            raise FormatError(
                f"manifest header must be {','.join(_HEADER)}, got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(_HEADER):
                raise FormatError(
                    f"line {lineno}: expected {len(_HEADER)} fields, got {len(row)}"
                )
            sample_id, label, split, audio_path, image_paths = row
            if sample_id in seen:
                raise ValidationError(f"duplicate sample_id {sample_id!r} at line {lineno}")
            seen.add(sample_id)
            if label not in _LABEL_INDEX:
                raise ValidationError(f"unknown label {label!r} at line {lineno}")
            split = split.strip().lower()
            if split and split not in SPLITS:
                raise ValidationError(
                    f"unknown split {split!r} at line {lineno} (expected train/eval)"
                )
            images = [p for p in image_paths.split(";") if p]
            entries.append(ManifestEntry(sample_id, label, split, audio_path, images))
    return Manifest(entries, base_dir=os.path.dirname(os.path.abspath(path)))


def write_manifest(path, manifest: Manifest) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_HEADER)
        for e in manifest.entries:
            writer.writerow(
                [e.sample_id, e.label, e.split, e.audio_path, ";".join(e.image_paths)]
            )


# --- binary array container ------------------------------------------------

_MAGIC = b"AVF1"
_VERSION = 1
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def spectrogram_key(kind: str, sample_id: str) -> str:
    return f"spec/{kind}/{sample_id}"


def embedding_key(tap: str, model_kind: str, sample_id: str) -> str:
    return f"emb/{tap}/{model_kind}/{sample_id}"


def write_container(path, entries: dict) -> None:
    """Write {key: float32/float64 array} atomically, keys sorted."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(entries)))
        for key in sorted(entries):
            arr = np.ascontiguousarray(entries[key])
            if arr.dtype not in _TAG_FOR:
                raise ValidationError(
                    f"container entries must be float32 or float64, "
                    f"{key!r} is {arr.dtype}"
                )
            kb = key.encode("utf-8")
            fh.write(struct.pack("<I", len(kb)))
            fh.write(kb)
            fh.write(struct.pack("<B", _TAG_FOR[arr.dtype]))
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    os.replace(tmp, path)


class ArrayContainer:
    """Read side of the container; safe for concurrent readers.

    The table of contents is scanned once at open; each read opens the
    file independently, so instances can be shared across threads.
    """

    def __init__(self, path, toc):
        self.path = path
        self._toc = toc

    @classmethod
    def open(cls, path):
        toc = {}
        with open(path, "rb") as fh:
            def need(n, what):
                buf = fh.read(n)
                if len(buf) != n:
                    raise FormatError(f"truncated container {path}: short read in {what}")
                return buf

            if need(4, "magic") != _MAGIC:
                raise FormatError(f"{path} is not an AVF1 container (bad magic)")
            (version,) = struct.unpack("<I", need(4, "version"))
            if version != _VERSION:
                raise FormatError(
                    f"{path}: unsupported container version {version} "
                    f"(expected {_VERSION})"
                )
            (count,) = struct.unpack("<Q", need(8, "entry count"))
            for _ in range(count):
                (key_len,) = struct.unpack("<I", need(4, "key length"))
                key = need(key_len, "key").decode("utf-8")
                (tag,) = struct.unpack("<B", need(1, "dtype tag"))
                if tag not in _DTYPE_TAGS:
                    raise FormatError(f"{path}: unknown dtype tag {tag} for {key!r}")
                (ndim,) = struct.unpack("<I", need(4, "ndim"))
                shape = struct.unpack(f"<{ndim}I", need(4 * ndim, "shape"))
                nbytes = int(np.prod(shape, dtype=np.int64)) * _DTYPE_TAGS[tag].itemsize
                offset = fh.tell()
                fh.seek(nbytes, os.SEEK_CUR)
                if fh.tell() != offset + nbytes:
                    raise FormatError(f"truncated container {path}: payload of {key!r}")
                toc[key] = (offset, tag, shape)
            if fh.read(1):
                raise FormatError(f"{path}: trailing bytes after {count} entries")
        # seek past EOF does not fail; verify the last payload really exists
        if toc:
            last_key = max(toc, key=lambda k: toc[k][0])
            offset, tag, shape = toc[last_key]
            end = offset + int(np.prod(shape, dtype=np.int64)) * _DTYPE_TAGS[tag].itemsize
            if os.path.getsize(path) < end:
                raise FormatError(f"truncated container {path}: payload of {last_key!r}")
        return cls(path, toc)

    def keys(self):
        return self._toc.keys()

    def __contains__(self, key):
        return key in self._toc

    def __len__(self):
        return len(self._toc)

    def read(self, key: str) -> np.ndarray:
        """Stored array as float64 (bit-exact for float64 payloads)."""
        try:
            offset, tag, shape = self._toc[key]
        except KeyError:
            raise NotFoundError(f"container {self.path} has no entry {key!r}") from None
        dtype = _DTYPE_TAGS[tag]
        count = int(np.prod(shape, dtype=np.int64))
        with open(self.path, "rb") as fh:
            fh.seek(offset)
            raw = fh.read(count * dtype.itemsize)
        if len(raw) != count * dtype.itemsize:
            raise FormatError(f"truncated container {self.path}: payload of {key!r}")
        return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(np.float64)

    def read_many(self, keys) -> dict:
        return {k: self.read(k) for k in keys}


def write_embeddings(path, items: dict) -> None:
    """Store named vectors/arrays as float32 payloads."""
    write_container(path, {k: np.asarray(v, dtype=np.float32) for k, v in items.items()})


def read_embeddings(path, keys=None) -> dict:
    store = ArrayContainer.open(path)
    return store.read_many(store.keys() if keys is None else keys)


# --- checkpoints -------------------------------------------------------------

_SCHEMA_BACKBONE = 1.0
_SCHEMA_FUSION = 2.0
_MODE_TAGS = {"audio_visual": 0.0, "audio_only": 1.0, "visual_only": 2.0}
_MODE_FROM_TAG = {v: k for k, v in _MODE_TAGS.items()}


def checkpoint_save(path, obj) -> None:
    """Serialize a BackboneModel or FusionBundle (float64 payloads)."""
    from . import backbones, fusion

    entries = {}
    if isinstance(obj, backbones.BackboneModel):
        entries["meta/schema"] = np.array([_SCHEMA_BACKBONE])
        entries["meta/kind"] = np.array([float(backbones.MODEL_KINDS.index(obj.kind))])
        entries["meta/input_shape"] = np.array(obj.input_shape, dtype=np.float64)
        entries["meta/frozen"] = np.array([1.0 if obj.frozen else 0.0])
        for i, (w, b) in enumerate(obj.conv_layers):
            entries[f"param/conv{i}/w"] = w
            entries[f"param/conv{i}/b"] = b
        entries["param/fc1/w"] = obj.fc1.weights
        entries["param/fc1/b"] = obj.fc1.bias
        entries["param/fc2/w"] = obj.fc2.weights
        entries["param/fc2/b"] = obj.fc2.bias
    elif isinstance(obj, fusion.FusionBundle):
        entries["meta/schema"] = np.array([_SCHEMA_FUSION])
        entries["meta/method"] = np.array(
            [float(sorted(fusion.FUSION_METHODS).index(obj.method.id))]
        )
        entries["meta/mode"] = np.array([_MODE_TAGS[obj.mode]])
        for name, arr in obj.params.named().items():
            entries[f"param/fusion/{name}"] = arr
        entries["param/head/w"] = obj.head.weights
        entries["param/head/b"] = obj.head.bias
    else:
        raise ValidationError(f"cannot checkpoint object of type {type(obj).__name__}")
    write_container(path, {k: np.asarray(v, dtype=np.float64) for k, v in entries.items()})


def checkpoint_load(path):
    """Inverse of checkpoint_save; returns a BackboneModel or FusionBundle."""
    from . import backbones, fusion, nn

    store = ArrayContainer.open(path)
    try:
        schema = float(store.read("meta/schema")[0])
    except NotFoundError:
        raise FormatError(f"{path} is not an avfuse checkpoint (no schema entry)") from None

    if schema == _SCHEMA_BACKBONE:
        kind = backbones.MODEL_KINDS[int(store.read("meta/kind")[0])]
        input_shape = tuple(int(v) for v in store.read("meta/input_shape"))
        frozen = bool(store.read("meta/frozen")[0])
        conv_layers = []
        i = 0
        while f"param/conv{i}/w" in store:
            conv_layers.append((store.read(f"param/conv{i}/w"), store.read(f"param/conv{i}/b")))
            i += 1
        fc1 = nn.DenseLayer(store.read("param/fc1/w"), store.read("param/fc1/b"))
        fc2 = nn.DenseLayer(store.read("param/fc2/w"), store.read("param/fc2/b"))
        return backbones.BackboneModel(kind, input_shape, conv_layers, fc1, fc2, frozen)

    if schema == _SCHEMA_FUSION:
        method = fusion.FUSION_METHODS[
            sorted(fusion.FUSION_METHODS)[int(store.read("meta/method")[0])]
        ]
        mode = _MODE_FROM_TAG[float(store.read("meta/mode")[0])]
        values = {name: store.read(f"param/fusion/{name}") for name in fusion.PARAM_NAMES}
        params = fusion.FusionParams(method=method, **values)
        head = nn.DenseLayer(store.read("param/head/w"), store.read("param/head/b"))
        return fusion.FusionBundle(method, params, head, mode)

    raise FormatError(f"{path}: unknown checkpoint schema {schema}")


def write_history(path, history) -> None:
    """Training history as 'epoch,loss,accuracy' lines."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,accuracy\n")
        for epoch, loss, acc in history:
            fh.write(f"{epoch},{loss:.12g},{acc:.12g}\n")
