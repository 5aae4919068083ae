"""Clip manifests, frame sampling, augmentation, normalization and folds.

Frames are pre-extracted images stored per clip as ``frame_00000.png``,
``frame_00001.png``, ... inside the clip directory. Pixel values are scaled
to ``[0, 1]`` and laid out ``[3, H, W]``.
"""
from __future__ import annotations

import csv
import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .archive import atomic_write_bytes
from .tensor import resize_bilinear

CROPS = ("tl", "tr", "bl", "br", "center")


@dataclass
class ClipEntry:
    clip_id: str
    path: str
    label: int
    frame_count: int


@dataclass
class ClipManifest:
    entries: list[ClipEntry]
    num_frames: int | None = None

    def __post_init__(self):
        ids = [e.clip_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate clip_id in manifest")
        for e in self.entries:
            if e.label not in (0, 1):
                raise ValueError(f"clip {e.clip_id}: label must be 0 or 1, got {e.label}")
            if self.num_frames is not None and not (e.frame_count >= self.num_frames >= 2):
                raise ValueError(
                    f"clip {e.clip_id}: needs frame_count >= N >= 2 "
                    f"(frame_count={e.frame_count}, N={self.num_frames})"
                )

    def by_id(self):
        return {e.clip_id: e for e in self.entries}


@dataclass
class NormStats:
    mean: float = 0.0
    std: float = 1.0

    def apply(self, x):
        return ((x - self.mean) / self.std).astype(x.dtype, copy=False)


@dataclass
class FoldPlan:
    folds: list[list[str]]
    seed: int
    k: int = field(init=False)

    def __post_init__(self):
        self.k = len(self.folds)

    def split(self, index: int):
        """``(train_ids, test_ids)`` with fold ``index`` held out."""
        test = list(self.folds[index])
        train = [c for i, f in enumerate(self.folds) if i != index for c in f]
        return train, test

    def to_json(self):
        return json.dumps(
            {"k": self.k, "seed": self.seed, "folds": {str(i): f for i, f in enumerate(self.folds)}},
            indent=2,
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        folds = [d["folds"][str(i)] for i in range(d["k"])]
        return cls(folds, d["seed"])

    def save(self, path):
        atomic_write_bytes(path, self.to_json().encode())


def read_manifest(path, num_frames: int | None = None) -> ClipManifest:
    """Read a CSV manifest with header ``clip_id,path,label,frame_count``.

    Relative clip paths resolve against the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"clip_id", "path", "label", "frame_count"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"manifest {path} missing columns: {sorted(missing)}")
        for row in reader:
            clip_path = row["path"]
            if not os.path.isabs(clip_path):
                clip_path = os.path.join(base, clip_path)
            entries.append(
                ClipEntry(row["clip_id"], clip_path, int(row["label"]), int(row["frame_count"]))
            )
    return ClipManifest(entries, num_frames)


def write_manifest(path, entries):
    lines = ["clip_id,path,label,frame_count"]
    lines += [f"{e.clip_id},{e.path},{e.label},{e.frame_count}" for e in entries]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def sample_indices(frame_count: int, n: int) -> list[int]:
    """``n`` equally spaced frame indices spanning the whole clip."""
    if n < 2:
        raise ValueError(f"need at least 2 frames, got N={n}")
    if n > frame_count:
        raise ValueError(f"cannot sample {n} frames from a clip of {frame_count}")
    return [(i * (frame_count - 1)) // (n - 1) for i in range(n)]


def frame_difference(frames):
    """Signed differences of adjacent frames, ``D[i] = F[i+1] - F[i]``."""
    frames = np.asarray(frames)
    if len(frames) < 2:
        raise ValueError("frame differencing needs at least 2 frames")
    return frames[1:] - frames[:-1]


def model_inputs(frames, input_mode: str):
    return frame_difference(frames) if input_mode == "diff" else np.asarray(frames)


def compute_norm_stats(clips, input_mode: str) -> NormStats:
    """Global scalar mean/std over all model inputs of the training clips.

    ``clips`` is an iterable of ``[N, C, H, W]`` frame stacks.
    """
    total = sq = 0.0
    count = 0
    for frames in clips:
        x = model_inputs(frames, input_mode).astype(np.float64)
        total += x.sum()
        sq += np.square(x).sum()
        count += x.size
    if count == 0:
        raise ValueError("cannot compute normalization stats from an empty training split")
    mean = total / count
    var = max(sq / count - mean * mean, 0.0)
    std = float(np.sqrt(var))
    if std <= 1e-12:
        warnings.warn("training inputs have zero variance; using std=1", RuntimeWarning)
        std = 1.0
    return NormStats(float(mean), std)


def crop_window(h: int, w: int, crop: str, size: int):
    """Top-left ``(row, col)`` of a ``size x size`` crop at a named position."""
    if size > h or size > w:
        raise ValueError(f"crop {size} larger than frame {h}x{w}")
    if crop == "tl":
        return 0, 0
    if crop == "tr":
        return 0, w - size
    if crop == "bl":
        return h - size, 0
    if crop == "br":
        return h - size, w - size
    if crop == "center":
        return (h - size) // 2, (w - size) // 2
    raise ValueError(f"unknown crop {crop!r}; expected one of {CROPS}")


def augment_clip(frames, crop: str, flip: bool, size: int = 224):
    """Apply one crop window and flip decision to every frame of a clip."""
    frames = np.asarray(frames)
    r, c = crop_window(frames.shape[-2], frames.shape[-1], crop, size)
    out = frames[..., r:r + size, c:c + size]
    if flip:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def make_folds(labels: dict[str, int], k: int, seed: int) -> FoldPlan:
    """Stratified ``k``-fold partition of clip ids.

    Clips of each class are shuffled with ``seed`` and dealt round-robin; the
    dealing position carries over between classes so fold sizes stay within one.
    """
    if k < 2:
        raise ValueError("need k >= 2 folds")
    rng = np.random.Generator(np.random.PCG64(seed))
    folds = [[] for _ in range(k)]
    pos = 0
    for label in sorted(set(labels.values())):
        ids = sorted(c for c, y in labels.items() if y == label)
        if len(ids) < k:
            raise ValueError(f"class {label} has {len(ids)} clips, fewer than k={k}")
        for cid in rng.permutation(ids):
            folds[pos % k].append(str(cid))
            pos += 1
    return FoldPlan(folds, seed)


def make_folds_from_manifest(manifest: ClipManifest, k: int, seed: int) -> FoldPlan:
    return make_folds({e.clip_id: e.label for e in manifest.entries}, k, seed)


def read_frames(entry: ClipEntry, indices) -> np.ndarray:
    """Load the given frames of a clip as float32 ``[N, 3, H, W]`` in ``[0, 1]``."""
    frames = []
    for i in indices:
        fp = os.path.join(entry.path, f"frame_{i:05d}.png")
        try:
            with Image.open(fp) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        except (OSError, ValueError) as exc:
            raise OSError(f"clip {entry.clip_id}: cannot read frame {fp}: {exc}") from exc
        frames.append(arr.transpose(2, 0, 1))
    if len({f.shape for f in frames}) > 1:
        raise OSError(f"clip {entry.clip_id}: frames have differing dims")
    return np.stack(frames)


def write_frames(directory, frames):
    """Write ``[N, 3, H, W]`` frames in ``[0, 1]`` as 8-bit PNGs."""
    os.makedirs(directory, exist_ok=True)
    for i, f in enumerate(frames):
        img = np.clip(np.rint(np.asarray(f).transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
        Image.fromarray(img).save(os.path.join(directory, f"frame_{i:05d}.png"))


def resize_frames(frames, size: int):
    return np.stack([resize_bilinear(f, size, size) for f in frames]).astype(np.float32)


@dataclass
class PipelineConfig:
    num_frames: int = 20
    resize_size: int = 256
    crop_size: int = 224
    input_mode: str = "diff"


def load_clip(entry: ClipEntry, cfg: PipelineConfig, mode: str, rng=None, stats: NormStats | None = None):
    """Model-ready input sequence for one clip.

    train: sample -> resize to ``resize_size`` -> random crop/flip -> (diff) -> normalize
    eval:  sample -> resize to ``crop_size`` -> (diff) -> normalize
    """
    frames = read_frames(entry, sample_indices(entry.frame_count, cfg.num_frames))
    if mode == "train":
        frames = resize_frames(frames, cfg.resize_size)
        frames = random_augment(frames, cfg.crop_size, rng)
    elif mode == "eval":
        frames = resize_frames(frames, cfg.crop_size)
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = model_inputs(frames, cfg.input_mode)
    return (stats or NormStats()).apply(x)


def random_augment(frames, size, rng):
    crop = CROPS[int(rng.integers(len(CROPS)))]
    flip = bool(rng.integers(2))
    return augment_clip(frames, crop, flip, size)


class ClipStore:
    """Decoded, resized frames for a set of clips, held in memory.

    Training batches re-augment the cached ``resize_size`` frames every time
    they are drawn; evaluation inputs are prepared once at ``crop_size``.
    """

    def __init__(self, entries, cfg: PipelineConfig):
        self.cfg = cfg
        self.entries = list(entries)
        self._raw = {}
        for e in self.entries:
            self._raw[e.clip_id] = read_frames(e, sample_indices(e.frame_count, cfg.num_frames))
        self._train = {}
        self._eval = {}

    @classmethod
    def from_arrays(cls, clips, labels, cfg: PipelineConfig):
        """Build from in-memory ``{clip_id: [N,3,H,W]}`` frames (no disk I/O)."""
        self = cls.__new__(cls)
        self.cfg = cfg
        self.entries = [ClipEntry(cid, "", int(labels[cid]), len(f)) for cid, f in clips.items()]
        self._raw = {cid: np.asarray(f, dtype=np.float32) for cid, f in clips.items()}
        self._train, self._eval = {}, {}
        return self

    def ids(self):
        return [e.clip_id for e in self.entries]

    def label(self, clip_id):
        return next(e.label for e in self.entries if e.clip_id == clip_id)

    def train_frames(self, clip_id):
        if clip_id not in self._train:
            self._train[clip_id] = resize_frames(self._raw[clip_id], self.cfg.resize_size)
        return self._train[clip_id]

    def eval_frames(self, clip_id):
        if clip_id not in self._eval:
            self._eval[clip_id] = resize_frames(self._raw[clip_id], self.cfg.crop_size)
        return self._eval[clip_id]

    def norm_stats(self, clip_ids) -> NormStats:
        return compute_norm_stats((self.train_frames(c) for c in clip_ids), self.cfg.input_mode)

    def train_input(self, clip_id, rng, stats: NormStats):
        frames = random_augment(self.train_frames(clip_id), self.cfg.crop_size, rng)
        return stats.apply(model_inputs(frames, self.cfg.input_mode))

    def eval_input(self, clip_id, stats: NormStats):
        return stats.apply(model_inputs(self.eval_frames(clip_id), self.cfg.input_mode))
