"""Synthetic moving-blob vs static-blob clips for desk-scale experiments."""
from __future__ import annotations

import os

import numpy as np

from .data import ClipEntry, write_frames, write_manifest
from .tensor import make_rng


def blob_clip(moving: bool, n_frames: int, size: int, rng) -> np.ndarray:
    """``[n_frames, 3, size, size]`` clip of a Gaussian blob on a flat background.

    A moving blob travels with a random constant velocity of roughly a fifth
    of the frame per step (bouncing off the borders); a static blob stays put.
    """
    bg = rng.uniform(0.1, 0.4, size=3)
    fg = rng.uniform(0.6, 1.0, size=3)
    radius = size / 8
    pos = rng.uniform(radius, size - radius, size=2)
    speed = size / 5
    angle = rng.uniform(0, 2 * np.pi)
    vel = speed * np.array([np.cos(angle), np.sin(angle)]) if moving else np.zeros(2)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    frames = np.empty((n_frames, 3, size, size), dtype=np.float32)
    for t in range(n_frames):
        d2 = (yy - pos[0]) ** 2 + (xx - pos[1]) ** 2
        mask = np.exp(-d2 / (2 * radius ** 2))
        frames[t] = bg[:, None, None] + (fg - bg)[:, None, None] * mask
        pos = pos + vel
        for a in range(2):
            if pos[a] < radius or pos[a] > size - radius:
                vel[a] = -vel[a]
                pos[a] = np.clip(pos[a], radius, size - radius)
    return frames


def blob_dataset(n_clips: int, n_frames: int, size: int, seed: int):
    """Balanced in-memory dataset: ``({clip_id: frames}, {clip_id: label})``."""
    rng = make_rng(seed)
    clips, labels = {}, {}
    for i in range(n_clips):
        label = i % 2
        cid = f"{'fight' if label else 'calm'}_{i:03d}"
        clips[cid] = blob_clip(bool(label), n_frames, size, rng)
        labels[cid] = label
    return clips, labels


def write_blob_dataset(root, n_clips: int = 20, n_frames: int = 12, size: int = 40, seed: int = 0):
    """Write PNG frames under ``root/<clip_id>/`` plus ``root/manifest.csv``."""
    clips, labels = blob_dataset(n_clips, n_frames, size, seed)
    entries = []
    for cid, frames in clips.items():
        write_frames(os.path.join(root, cid), frames)
        entries.append(ClipEntry(cid, cid, labels[cid], n_frames))
    path = os.path.join(root, "manifest.csv")
    write_manifest(path, entries)
    return path
