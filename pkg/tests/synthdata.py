"""Synthetic 10-class audio-visual corpus for tests.

Audio: class k is a tone stack on carrier 220 * 2^(k/4) Hz with k+1
harmonics and class-specific amplitude-modulation rate, plus light
noise and per-sample jitter.  Harmonic count and AM rate survive global
average pooling, so the toy backbones can separate the classes.

Visual: class k is a distinct base color with a class-specific stripe
period, rendered at 256x256 so the loader's resize path is exercised.
"""

import colorsys
import os

import numpy as np
from PIL import Image

from avfuse import audio_io, data_io


def make_audio(class_idx: int, rng: np.random.Generator, sample_rate: int = 32000,
               seconds: float = 10.0) -> audio_io.AudioClip:
    n = int(round(sample_rate * seconds))
    t = np.arange(n) / sample_rate
    f0 = 220.0 * 2.0 ** (class_idx / 4.0) * (1.0 + rng.uniform(-0.01, 0.01))
    x = np.zeros(n)
    for j in range(1, class_idx + 2):
        x += np.sin(2 * np.pi * f0 * j * t + rng.uniform(0, 2 * np.pi)) / j
    am_rate = 0.8 * (class_idx + 1)
    am = (1.0 + 0.8 * np.sin(2 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi))) / 1.8
    x = 0.5 * x * am / np.abs(x).max()
    stereo = np.stack([x + 0.003 * rng.standard_normal(n),
                       x + 0.003 * rng.standard_normal(n)])
    return audio_io.AudioClip(np.clip(stereo, -1.0, 1.0), sample_rate)


def make_image(class_idx: int, rng: np.random.Generator, size: int = 256) -> np.ndarray:
    base = colorsys.hsv_to_rgb(class_idx / 10.0, 0.8, 0.85)
    img = np.tile(np.asarray(base), (size, size, 1))
    xs = np.arange(size)
    stripes = 0.15 * np.sin(2 * np.pi * xs / (4.0 + 2.0 * class_idx))
    img += stripes[None, :, None]
    img += 0.02 * rng.standard_normal((size, size, 3))
    return np.clip(img, 0.0, 1.0)


def build_corpus(root, n_train_per_class: int, n_eval_per_class: int, seed: int = 0,
                 sample_rate: int = 32000, images_per_sample: int = 2) -> str:
    """Write WAVs, PNGs, and manifest.csv under root; returns the manifest path."""
    rng = np.random.default_rng(seed)
    audio_dir = os.path.join(root, "audio")
    image_dir = os.path.join(root, "images")
    os.makedirs(audio_dir, exist_ok=True)
    os.makedirs(image_dir, exist_ok=True)
    entries = []
    for k, label in enumerate(data_io.LABELS):
        for i in range(n_train_per_class + n_eval_per_class):
            split = "train" if i < n_train_per_class else "eval"
            sample_id = f"{label}-{i:02d}"
            wav = f"audio/{sample_id}.wav"
            audio_io.write_wav(os.path.join(root, wav), make_audio(k, rng, sample_rate))
            image_paths = []
            for frame in range(images_per_sample):
                png = f"images/{sample_id}_{frame}.png"
                arr = (make_image(k, rng) * 255).round().astype(np.uint8)
                Image.fromarray(arr).save(os.path.join(root, png))
                image_paths.append(png)
            entries.append(data_io.ManifestEntry(sample_id, label, split, wav, image_paths))
    manifest_path = os.path.join(root, "manifest.csv")
    data_io.write_manifest(manifest_path, data_io.Manifest(entries, base_dir=root))
    return manifest_path
