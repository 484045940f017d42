"""Segmentation datasets: on-disk format, synthetic shapes, preprocessing, splits and augmentation.

Samples are numpy arrays (image C×H×W float32, label H×W int64); the trainer
converts batches to tensors. Padding pixels carry ``IGNORE_INDEX`` so the
losses and metrics skip them.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .models.presets import DATASETS

IGNORE_INDEX = 65535
MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "nnuzoo-manifest/1"

NZT_MAGIC = b"NZT1"
NZT_DTYPES = {0: "<f4", 1: "<f8", 2: "<u2", 3: "u1", 4: "<i4", 5: "<i8"}
NZT_CODES = {np.dtype(v): k for k, v in NZT_DTYPES.items()}


class DataValidationError(ValueError):
    pass


# ----------------------------------------------------------------------------- NZT1 io

def encode_nzt(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    code = NZT_CODES.get(np.dtype(dt))
    if code is None:
        raise TypeError(f"NZT1 cannot store dtype {arr.dtype}")
    head = NZT_MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=NZT_DTYPES[code]).tobytes()


def decode_nzt(data: bytes, where: str = "<bytes>") -> np.ndarray:
    if len(data) < 6 or data[:4] != NZT_MAGIC:
        raise DataValidationError(f"{where}: not an NZT1 file")
    code, rank = struct.unpack_from("<BB", data, 4)
    if code not in NZT_DTYPES:
        raise DataValidationError(f"{where}: unknown dtype code {code}")
    off = 6 + 4 * rank
    if len(data) < off:
        raise DataValidationError(f"{where}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", data, 6)
    dt = np.dtype(NZT_DTYPES[code])
    n = int(np.prod(dims, dtype=np.int64))
    if len(data) != off + n * dt.itemsize:
        raise DataValidationError(f"{where}: payload size does not match dims {dims}")
    return np.frombuffer(data, dtype=dt, offset=off, count=n).reshape(dims).copy()


def write_nzt(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_nzt(arr))


def read_nzt(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing NZT1 file: {path}")
    return decode_nzt(path.read_bytes(), str(path))


# ----------------------------------------------------------------------------- datasets

@dataclass
class SegmentationSample:
    image: np.ndarray  # C×H×W float32
    label: np.ndarray  # H×W int64
    id: str = ""


class SegmentationDataset(Sequence):
    """Indexable collection of samples; file-backed items are read on access."""

    def __init__(self, items: list, num_classes: int, name: str = "", modality: str = "", in_channels: int = 1):
        self._items = list(items)
        self.num_classes = int(num_classes)
        self.name = name
        self.modality = modality
        self.in_channels = in_channels

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return self.subset(range(len(self))[i])
        item = self._items[i]
        if isinstance(item, SegmentationSample):
            return item
        sid, img_path, lbl_path = item
        image = read_nzt(img_path).astype(np.float32, copy=False)
        if image.ndim == 2:
            image = image[None]
        return SegmentationSample(image, read_nzt(lbl_path).astype(np.int64), sid)

    def subset(self, indices) -> "SegmentationDataset":
        return SegmentationDataset([self._items[i] for i in indices], self.num_classes, self.name, self.modality,
                                   self.in_channels)

    @property
    def ids(self) -> list[str]:
        return [it.id if isinstance(it, SegmentationSample) else it[0] for it in self._items]

    def validate(self) -> None:
        for i in range(len(self)):
            validate_sample(self[i], self.num_classes)


def validate_sample(s: SegmentationSample, num_classes: int) -> None:
    if s.image.ndim != 3 or s.label.ndim != 2 or s.image.shape[1:] != s.label.shape:
        raise DataValidationError(f"sample {s.id!r}: image {s.image.shape} and label {s.label.shape} disagree")
    if not np.isfinite(s.image).all():
        raise DataValidationError(f"sample {s.id!r}: image has non-finite values")
    valid = s.label[s.label != IGNORE_INDEX]
    if valid.size and (valid.min() < 0 or valid.max() >= num_classes):
        bad = int(valid.max() if valid.max() >= num_classes else valid.min())
        raise DataValidationError(f"sample {s.id!r}: class id {bad} outside [0, {num_classes})")


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def manifest_template(preset: str, name: str | None = None) -> dict:
    """Empty manifest carrying the class count and modality of a dataset preset."""
    if preset not in DATASETS:
        raise KeyError(f"unknown preset {preset!r}")
    ds = DATASETS[preset]
    return {"format": MANIFEST_FORMAT, "name": name or ds.name, "num_classes": ds.num_classes,
            "modality": ds.modality, "in_channels": ds.in_channels, "samples": []}


def save_dataset(dataset: SegmentationDataset, out_dir) -> Path:
    """Write samples as NZT1 files (labels as u16) plus ``manifest.json``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(len(dataset)):
        s = dataset[i]
        sid = s.id or f"case_{i:05d}"
        img, lbl = f"images/{sid}.nzt", f"labels/{sid}.nzt"
        write_nzt(out / img, s.image.astype(np.float32))
        write_nzt(out / lbl, s.label.astype(np.uint16))
        records.append({"id": sid, "image": img, "label": lbl})
    manifest = {"format": MANIFEST_FORMAT, "name": dataset.name, "num_classes": dataset.num_classes,
                "modality": dataset.modality, "in_channels": dataset.in_channels, "samples": records}
    path = out / MANIFEST_NAME
    path.write_text(_canonical(manifest) + "\n")
    return path


def load_dataset(manifest_path, validate: bool = True) -> SegmentationDataset:
    """Open a manifest (file or directory containing one); samples load lazily."""
    path = Path(manifest_path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        m = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataValidationError(f"{path}: malformed manifest ({e})") from None
    for key in ("num_classes", "samples"):
        if key not in m:
            raise DataValidationError(f"{path}: manifest lacks {key!r}")
    root = path.parent
    items = []
    for rec in m["samples"]:
        sid = rec.get("id", "")
        img, lbl = root / rec["image"], root / rec["label"]
        for p in (img, lbl):
            if not p.is_file():
                raise FileNotFoundError(f"sample {sid!r}: missing file {p}")
        items.append((sid, img, lbl))
    ds = SegmentationDataset(items, m["num_classes"], m.get("name", ""), m.get("modality", ""),
                             m.get("in_channels", 1))
    if ds.num_classes < 2:
        raise DataValidationError(f"{path}: num_classes must be >= 2")
    if validate:
        ds.validate()
    return ds


def convert_npy_dir(src, out_dir, preset: str, name: str | None = None) -> Path:
    """Convert ``<id>_image.npy`` / ``<id>_label.npy`` pairs into an NZT1 dataset for a preset.

    Images may be H×W or C×H×W; labels H×W integer class ids.
    """
    src = Path(src)
    tmpl = manifest_template(preset, name)
    samples = []
    for img_path in sorted(src.glob("*_image.npy")):
        sid = img_path.name[: -len("_image.npy")]
        lbl_path = src / f"{sid}_label.npy"
        if not lbl_path.is_file():
            raise FileNotFoundError(f"sample {sid!r}: missing {lbl_path.name}")
        image = np.load(img_path).astype(np.float32)
        image = image[None] if image.ndim == 2 else image
        s = SegmentationSample(image, np.load(lbl_path).astype(np.int64), sid)
        validate_sample(s, tmpl["num_classes"])
        samples.append(s)
    ds = SegmentationDataset(samples, tmpl["num_classes"], tmpl["name"], tmpl["modality"],
                             samples[0].image.shape[0] if samples else tmpl["in_channels"])
    return save_dataset(ds, out_dir)


# ----------------------------------------------------------------------------- synthetic shapes

@dataclass
class SynthSpec:
    canvas: tuple[int, int] = (64, 64)
    num_classes: int = 3
    shapes: int = 4
    separation: float = 1.0
    noise: float = 0.0
    in_channels: int = 1

    def __post_init__(self):
        self.canvas = tuple(int(v) for v in self.canvas)
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.shapes < 1:
            raise ValueError("shapes must be >= 1")
        if len(self.canvas) != 2 or min(self.canvas) < 8:
            raise ValueError(f"degenerate canvas {self.canvas}")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def to_dict(self) -> dict:
        return {"canvas": list(self.canvas), "num_classes": self.num_classes, "shapes": self.shapes,
                "separation": self.separation, "noise": self.noise, "in_channels": self.in_channels}


def _render(spec: SynthSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    h, w = spec.canvas
    label = np.zeros((h, w), dtype=np.int64)
    yy, xx = np.mgrid[0:h, 0:w]
    n_fg = spec.num_classes - 1
    # every foreground class appears at least once when shapes >= n_fg
    classes = [1 + i % n_fg for i in range(spec.shapes)]
    rng.shuffle(classes)
    lo = max(3, min(h, w) // 10)
    hi = max(lo + 1, min(h, w) // 3)
    for k in classes:
        ry, rx = rng.integers(lo, hi, size=2)
        cy, cx = rng.integers(ry, h - ry), rng.integers(rx, w - rx)
        if rng.random() < 0.5:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        label[mask] = k
    base = label.astype(np.float32) * np.float32(spec.separation)
    image = np.repeat(base[None], spec.in_channels, axis=0)
    if spec.noise > 0:
        image = image + rng.normal(0.0, spec.noise, size=image.shape).astype(np.float32)
    return image.astype(np.float32), label


def generate_synthetic(spec: SynthSpec, count: int, seed: int = 0, name: str = "SynthShapes") -> SegmentationDataset:
    """Random ellipses and rectangles; class k has intensity k * separation plus Gaussian noise."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(count):
        image, label = _render(spec, rng)
        samples.append(SegmentationSample(image, label, f"synth_{i:05d}"))
    return SegmentationDataset(samples, spec.num_classes, name, "synthetic", spec.in_channels)


# ----------------------------------------------------------------------------- preprocessing

def _center_fit(arr: np.ndarray, size: int, axis: int, fill) -> np.ndarray:
    n = arr.shape[axis]
    if n > size:
        start = (n - size) // 2
        return np.take(arr, range(start, start + size), axis=axis)
    if n < size:
        before = (size - n) // 2
        pad = [(0, 0)] * arr.ndim
        pad[axis] = (before, size - n - before)
        return np.pad(arr, pad, constant_values=fill)
    return arr


def preprocess(sample: SegmentationSample, patch: tuple[int, int], normalization: str = "zscore",
               divisor: int = 32) -> SegmentationSample:
    """Per-channel z-score, then center pad or crop to ``patch``; padding is labelled IGNORE_INDEX."""
    ph, pw = patch
    if ph % divisor or pw % divisor:
        raise ValueError(f"patch {patch} must be divisible by {divisor}")
    image = np.asarray(sample.image, dtype=np.float64)
    if image.ndim == 2:
        image = image[None]
    if image.size == 0:
        raise ValueError(f"sample {sample.id!r}: empty image")
    if normalization == "zscore":
        valid = sample.label != IGNORE_INDEX
        out = np.empty_like(image)
        for c in range(image.shape[0]):
            vals = image[c][valid] if valid.any() else image[c].ravel()
            mu, sd = vals.mean(), vals.std()
            out[c] = (image[c] - mu) / max(sd, 1e-8)
        image = out
    elif normalization != "none":
        raise ValueError(f"unknown normalization {normalization!r}")
    label = sample.label
    for axis, size in ((1, ph), (2, pw)):
        image = _center_fit(image, size, axis, 0.0)
    for axis, size in ((0, ph), (1, pw)):
        label = _center_fit(label, size, axis, IGNORE_INDEX)
    return SegmentationSample(image.astype(np.float32), label.astype(np.int64), sample.id)


def preprocess_dataset(ds: SegmentationDataset, patch: tuple[int, int], normalization: str = "zscore",
                       divisor: int = 32) -> SegmentationDataset:
    return SegmentationDataset([preprocess(ds[i], patch, normalization, divisor) for i in range(len(ds))],
                               ds.num_classes, ds.name, ds.modality, ds.in_channels)


def split_dataset(ds: SegmentationDataset, ratio: float = 0.8, seed: int = 0):
    """Seeded shuffle into (train, val) with |train| = round(ratio * n), kept within [1, n-1]."""
    n = len(ds)
    if n < 2:
        raise ValueError(f"need at least 2 samples to split, got {n}")
    n_train = min(max(int(round(ratio * n)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return ds.subset(sorted(perm[:n_train].tolist())), ds.subset(sorted(perm[n_train:].tolist()))


# ----------------------------------------------------------------------------- augmentation

def flip(sample: SegmentationSample, axis: int) -> SegmentationSample:
    """axis 0 flips rows (vertical), axis 1 flips columns (horizontal)."""
    return SegmentationSample(np.flip(sample.image, axis + 1).copy(), np.flip(sample.label, axis).copy(), sample.id)


def rot90(sample: SegmentationSample, k: int) -> SegmentationSample:
    return SegmentationSample(np.rot90(sample.image, k, axes=(1, 2)).copy(), np.rot90(sample.label, k).copy(),
                              sample.id)


@dataclass
class AugmentConfig:
    p_flip: float = 0.5
    p_rot: float = 0.5
    allow_rot: bool = True  # 90/270 degree turns need square patches

    def to_dict(self) -> dict:
        return {"p_flip": self.p_flip, "p_rot": self.p_rot, "allow_rot": self.allow_rot}


def augment(sample: SegmentationSample, rng: np.random.Generator, cfg: AugmentConfig | None = None
            ) -> SegmentationSample:
    """Random flips and 90-degree rotations applied identically to image and label."""
    cfg = cfg or AugmentConfig()
    # draws are consumed unconditionally so the stream does not depend on outcomes
    u = rng.random(3)
    k = int(rng.integers(1, 4))
    out = sample
    if u[0] < cfg.p_flip:
        out = flip(out, 1)
    if u[1] < cfg.p_flip:
        out = flip(out, 0)
    if u[2] < cfg.p_rot:
        square = out.label.shape[0] == out.label.shape[1]
        if cfg.allow_rot and square:
            out = rot90(out, k)
        else:
            out = rot90(out, 2)
    return out


def collate(samples: list[SegmentationSample]):
    """Stack samples into (B×C×H×W float32, B×H×W int64) numpy arrays."""
    return (np.stack([s.image for s in samples]).astype(np.float32),
            np.stack([s.label for s in samples]).astype(np.int64))


__all__ = [
    "IGNORE_INDEX", "AugmentConfig", "DataValidationError", "SegmentationDataset", "SegmentationSample",
    "SynthSpec", "augment", "collate", "convert_npy_dir", "decode_nzt", "encode_nzt", "flip",
    "generate_synthetic", "load_dataset", "manifest_template", "preprocess", "preprocess_dataset", "read_nzt",
    "rot90", "save_dataset", "split_dataset", "validate_sample", "write_nzt",
]
