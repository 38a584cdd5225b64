"""
Image directory ingestion, normalization, augmentation and batching.

Every image is turned into a 64x64x3 "master" in [-1, 1] (center crop,
area resample, ``v / 127.5 - 1``). Batches for a training phase are made by
halving masters down to the phase resolution and, while a new level fades
in, blending with the upsampled lower resolution the same way the
generator does.

Randomness is keyed by ``(seed, epoch, position)`` so the batches of an
epoch do not depend on how many worker threads produced them.
"""

import logging
import os
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import _kernels

log = logging.getLogger(__name__)

MASTER_RES = 64
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class ImageRecord:
    path: str
    width: int
    height: int


@dataclass
class DatasetIndex:
    root: str
    records: list
    skipped: list = field(default_factory=list)  # (path, reason)
    shuffle_seed: int = 0
    target: int = MASTER_RES
    cache: bool = True

    def __post_init__(self):
        self._cache = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.records)

    def load(self, i):
        """Prepared master for record ``i``, shape (target, target, 3), float32."""
        if self.cache:
            with self._lock:
                hit = self._cache.get(i)
            if hit is not None:
                return hit
        with Image.open(self.records[i].path) as img:
            arr = np.asarray(img.convert("RGB") if img.mode != "RGB" else img, dtype=np.uint8)
        master = prepare(arr, self.target)
        if self.cache:
            master.setflags(write=False)
            with self._lock:
                self._cache[i] = master
        return master

    def write_skip_report(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for p, reason in self.skipped:
                fh.write(f"{p}\t{reason}\n")


class ArrayDataset:
    """In-memory dataset of already prepared masters in [-1, 1]."""

    def __init__(self, masters):
        masters = np.asarray(masters, dtype=np.float32)
        if masters.ndim != 4 or masters.shape[-1] != 3 or masters.shape[1] != masters.shape[2]:
            raise ValueError(f"expected (N, R, R, 3) masters, got {masters.shape}")
        if len(masters) == 0:
            raise ValueError("no images")
        self.masters = masters

    def __len__(self):
        return len(self.masters)

    def load(self, i):
        return self.masters[i]


def ingest(root, target=MASTER_RES, report_path=None, cache=True, shuffle_seed=0):
    """Index every decodable 8-bit RGB image under ``root`` in lexicographic order.

    Files that cannot be decoded, are not RGB, or are smaller than
    ``target`` on either side are skipped and listed in ``skipped``.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"not a directory: {root}")
    candidates = sorted(
        str(p) for p in root.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )
    records, skipped = [], []
    for path in candidates:
        try:
            with Image.open(path) as img:
                mode, size = img.mode, img.size
                img.load()
        except Exception as exc:  # PIL raises a zoo of types for broken files
            skipped.append((path, f"undecodable: {exc}"))
            continue
        if mode != "RGB":
            skipped.append((path, f"not 8-bit RGB (mode {mode})"))
            continue
        w, h = size
        if w < target or h < target:
            skipped.append((path, f"smaller than {target}x{target} ({w}x{h})"))
            continue
        records.append(ImageRecord(path, w, h))
    for path, reason in skipped:
        log.warning("skipping %s: %s", path, reason)
    index = DatasetIndex(str(root), records, skipped, shuffle_seed, target, cache)
    if report_path is not None:
        index.write_skip_report(report_path)
    if not records:
        raise ValueError(f"no images found under {root}")
    return index


def area_weights(n_in, n_out):
    """(n_out, n_in) matrix of source-pixel overlap fractions for box resampling."""
    scale = n_in / n_out
    w = np.zeros((n_out, n_in))
    for o in range(n_out):
        lo, hi = o * scale, (o + 1) * scale
        for i in range(int(np.floor(lo)), min(int(np.ceil(hi)), n_in)):
            w[o, i] = (min(hi, i + 1) - max(lo, i)) / scale
    return w


def prepare(image, target=MASTER_RES, dtype=np.float32):
    """Center-crop to a square, area-resample to ``target`` and map 0..255 to [-1, 1]."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {image.shape}")
    h, w = image.shape[:2]
    if h < target or w < target:
        raise ValueError(f"image {w}x{h} is smaller than {target}x{target}")
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    crop = image[top:top + side, left:left + side].astype(np.float64)
    if side != target:
        wts = area_weights(side, target)
        crop = np.einsum("oi,ijc->ojc", wts, crop)
        crop = np.einsum("pj,ojc->opc", wts, crop)
    return (crop / 127.5 - 1.0).astype(dtype)


def augment(image, rng):
    """Random horizontal flip, vertical flip and rotation by a multiple of 90 degrees."""
    hflip, vflip = rng.random() < 0.5, rng.random() < 0.5
    k = int(rng.integers(4))
    return apply_augmentation(image, hflip, vflip, k)


def apply_augmentation(image, hflip, vflip, k):
    if image.shape[0] != image.shape[1]:
        raise ValueError("augmentation expects square images")
    out = image
    if hflip:
        out = out[:, ::-1]
    if vflip:
        out = out[::-1]
    if k:
        out = np.rot90(out, k, axes=(0, 1))
    return np.ascontiguousarray(out)


def downsample_to(masters, res):
    """Repeated 2x average pooling of (N, R, R, C) masters down to ``res``."""
    x = masters
    while x.shape[1] > res:
        if x.shape[1] % 2:
            raise ValueError(f"cannot halve extent {x.shape[1]}")
        x = _kernels.block_sum2x(x) * x.dtype.type(0.25)
    if x.shape[1] != res:
        raise ValueError(f"cannot reach resolution {res} from {masters.shape[1]}")
    return x


def to_resolution(masters, phase, base_resolution=4):
    """Real-image counterpart of the generator fade for ``phase``."""
    res = base_resolution * 2 ** phase.level
    x = downsample_to(np.ascontiguousarray(masters), res)
    if phase.level == 0 or phase.alpha == 1.0:
        return x
    low = _kernels.upsample2x(downsample_to(x, res // 2))
    if phase.alpha == 0.0:
        return low
    a = x.dtype.type(phase.alpha)
    return low * (x.dtype.type(1) - a) + x * a


def batch_at_resolution(dataset, phase, batch_size, rng, base_resolution=4):
    """Draw ``batch_size`` random records, augment them and bring them to the phase resolution."""
    idx = rng.choice(len(dataset), size=batch_size, replace=len(dataset) < batch_size)
    masters = np.stack([augment(dataset.load(int(i)), rng) for i in idx])
    return to_resolution(masters, phase, base_resolution)


class BatchLoader:
    """Per-epoch iterator over augmented master batches.

    The shuffle of epoch ``e`` comes from ``(seed, e)`` and each sample's
    augmentation from ``(seed, e, position)``, so parallel and single-producer
    modes yield the same batches. The partial last batch is dropped.

    With ``workers > 0`` and not ``deterministic``, that many threads decode
    and augment into a bounded queue of ``2 * workers`` items; the consumer
    restores order.
    """

    def __init__(self, dataset, batch_size, seed=0, workers=0, deterministic=False):
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.workers = 0 if deterministic else workers
        if len(dataset) < batch_size:
            raise ValueError(f"dataset has {len(dataset)} images, fewer than one batch of {batch_size}")

    def batches_per_epoch(self):
        return len(self.dataset) // self.batch_size

    def order(self, epoch):
        perm = np.random.default_rng([self.seed, epoch]).permutation(len(self.dataset))
        return perm[: self.batches_per_epoch() * self.batch_size]

    def _sample(self, epoch, pos, record):
        rng = np.random.default_rng([self.seed, epoch, pos, 1])
        return augment(self.dataset.load(int(record)), rng)

    def __call__(self, epoch):
        order = self.order(epoch)
        if self.workers <= 0:
            samples = (self._sample(epoch, pos, rec) for pos, rec in enumerate(order))
        else:
            samples = self._parallel(epoch, order)
        batch = []
        for s in samples:
            batch.append(s)
            if len(batch) == self.batch_size:
                yield np.stack(batch)
                batch = []

    def _parallel(self, epoch, order):
        n_workers = min(self.workers, len(order))
        q = queue.Queue(maxsize=2 * n_workers)
        stop = threading.Event()

        def produce(wid):
            for pos in range(wid, len(order), n_workers):
                try:
                    item = (pos, self._sample(epoch, pos, order[pos]), None)
                except Exception as exc:
                    item = (pos, None, exc)
                while not stop.is_set():
                    try:
                        q.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set() or item[2] is not None:
                    return

        threads = [threading.Thread(target=produce, args=(w,), daemon=True) for w in range(n_workers)]
        for t in threads:
            t.start()
        pending = {}
        try:
            for want in range(len(order)):
                while want not in pending:
                    pos, arr, exc = q.get()
                    if exc is not None:
                        raise exc
                    pending[pos] = arr
                yield pending.pop(want)
        finally:
            stop.set()
            for t in threads:
                t.join(timeout=5)


def make_blob_images(n, size=MASTER_RES, seed=0):
    """Seeded synthetic galaxies: 1-3 anisotropic Gaussian blobs on a dark, noisy sky.

    Returns uint8 images of shape (n, size, size, 3).
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    out = np.empty((n, size, size, 3), dtype=np.uint8)
    for k in range(n):
        img = np.zeros((size, size, 3))
        for b in range(int(rng.integers(1, 4))):
            cy, cx = size / 2 + rng.normal(0, size / (8 if b == 0 else 4), 2)
            sy, sx = rng.uniform(size / 16, size / 6, 2)
            theta = rng.uniform(0, np.pi)
            c, s = np.cos(theta), np.sin(theta)
            dy, dx = yy - cy, xx - cx
            u, v = c * dx + s * dy, -s * dx + c * dy
            amp = rng.uniform(0.5, 1.0) if b == 0 else rng.uniform(0.1, 0.5)
            color = rng.uniform(0.6, 1.0, 3)
            img += amp * np.exp(-0.5 * ((u / sx) ** 2 + (v / sy) ** 2))[..., None] * color
        img += rng.normal(0, 0.02, img.shape)
        out[k] = np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)
    return out


def write_images(images, directory, prefix="img"):
    """Save uint8 images as PNG files ``{prefix}_{i:05d}.png``; returns the paths."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, img in enumerate(images):
        path = os.path.join(directory, f"{prefix}_{i:05d}.png")
        Image.fromarray(np.asarray(img, dtype=np.uint8), "RGB").save(path)
        paths.append(path)
    return paths
