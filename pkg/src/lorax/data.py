"""Class-incremental data streams.

Two sources are supported: a synthetic generator-fingerprint benchmark in
which every task pairs one authentic class (smooth random backgrounds) with
one fake class (the same backgrounds plus a task-specific zero-mean additive
pattern), and a manifest-driven ingester for directories of PNG images laid
out one directory per class. Preprocessing is crop-only by default; an
optional bilinear resize step exists to reproduce how resizing destroys
high-frequency content.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ConfigurationError, DataError, ManifestError

PATTERN_TYPES = ("high_frequency_periodic", "checker", "frequency_notch")


@dataclass(frozen=True)
class FingerprintSpec:
    """A task's generator signature: an additive zero-mean pixel pattern."""

    seed: int
    pattern: str = "high_frequency_periodic"
    amplitude: float = 0.12
    frequency: float = 0.3  # cycles per pixel; period = 1 / frequency

    def __post_init__(self):
        if self.pattern not in PATTERN_TYPES:
            raise ConfigurationError(f"unknown pattern {self.pattern!r}; expected one of {PATTERN_TYPES}")
        if not (0.0 < self.frequency <= 0.5):
            raise ConfigurationError(f"frequency must be in (0, 0.5], got {self.frequency}")
        if self.pattern == "high_frequency_periodic" and self.frequency < 0.25:
            # period must stay at or below 4 px so a 2x down-resize destroys it
            raise ConfigurationError(
                f"high_frequency_periodic needs frequency >= 0.25 (period <= 4 px), got {self.frequency}"
            )
        if self.amplitude <= 0:
            raise ConfigurationError(f"amplitude must be positive, got {self.amplitude}")

    @property
    def period(self) -> float:
        return 1.0 / self.frequency


def render_fingerprint(spec: FingerprintSpec, size: int) -> np.ndarray:
    """Deterministic (size, size) pattern, zero-mean with RMS = amplitude."""
    rng = np.random.default_rng(spec.seed)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    if spec.pattern == "high_frequency_periodic":
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        raw = np.cos(2 * np.pi * spec.frequency * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
        if raw.std() < 1e-3:  # degenerate sampling of a Nyquist-rate wave
            raw = np.cos(2 * np.pi * spec.frequency * xx)
    elif spec.pattern == "checker":
        block = max(1, int(round(0.5 / spec.frequency)))
        raw = np.where(((xx // block) + (yy // block)) % 2 == 0, 1.0, -1.0)
    else:  # frequency_notch: noise confined to a narrow spectral annulus
        noise = rng.normal(size=(size, size))
        fy = np.fft.fftfreq(size)[:, None]
        fx = np.fft.fftfreq(size)[None, :]
        radius = np.hypot(fx, fy)
        band = (radius >= spec.frequency - 0.04) & (radius <= spec.frequency + 0.04)
        raw = np.real(np.fft.ifft2(np.fft.fft2(noise) * band))
    raw = raw - raw.mean()
    rms = np.sqrt((raw ** 2).mean())
    if rms < 1e-12:
        raise DataError(f"degenerate fingerprint for spec {spec}")
    return (spec.amplitude / rms) * raw


def _bilinear_upsample(grid: np.ndarray, size: int) -> np.ndarray:
    g = grid.shape[0]
    pos = (np.arange(size) + 0.5) * g / size - 0.5
    i0 = np.clip(np.floor(pos).astype(int), 0, g - 1)
    i1 = np.clip(i0 + 1, 0, g - 1)
    w = np.clip(pos - np.floor(pos), 0.0, 1.0)
    a = grid[np.ix_(i0, i0)]
    b = grid[np.ix_(i0, i1)]
    c = grid[np.ix_(i1, i0)]
    d = grid[np.ix_(i1, i1)]
    wr = w[:, None]
    wc = w[None, :]
    return (1 - wr) * (1 - wc) * a + (1 - wr) * wc * b + wr * (1 - wc) * c + wr * wc * d


def _smooth_background(rng: np.random.Generator, size: int) -> np.ndarray:
    """Low-frequency random field around mid-gray."""
    coarse = rng.normal(0.0, 1.0, (max(2, size // 8), max(2, size // 8)))
    return 0.5 + 0.08 * _bilinear_upsample(coarse, size)


@dataclass(frozen=True)
class ClassInfo:
    class_id: int
    name: str
    authentic: bool


class SampleSet:
    """Images with labels and per-sample refs; loads lazily when path-backed."""

    def __init__(self, labels, refs, images=None, paths=None, channels: int = 1):
        self.labels = np.asarray(labels, dtype=np.int64)
        self.refs = list(refs)
        self._images = images
        self._paths = paths
        self._channels = channels

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def images(self) -> np.ndarray:
        if self._images is None:
            self._images = np.stack([load_image(p, self._channels) for p in self._paths])
        return self._images


@dataclass
class TaskSpec:
    task_id: int
    name: str
    classes: list[ClassInfo]
    train: SampleSet
    test: SampleSet
    samples_per_class: int = 0
    fingerprint: FingerprintSpec | None = None

    def __post_init__(self):
        if not any(c.authentic for c in self.classes) or not any(not c.authentic for c in self.classes):
            raise DataError(
                f"task {self.name!r} needs at least one authentic and one fake class"
            )

    @property
    def class_ids(self) -> list[int]:
        return [c.class_id for c in self.classes]

    @property
    def authentic_ids(self) -> list[int]:
        return [c.class_id for c in self.classes if c.authentic]


def _default_fingerprints(num_tasks: int, seed: int, amplitude: float) -> list[FingerprintSpec]:
    specs = []
    root = np.random.SeedSequence(seed)
    for t, child in enumerate(root.spawn(num_tasks)):
        rng = np.random.default_rng(child)
        pattern = PATTERN_TYPES[t % len(PATTERN_TYPES)]
        if pattern == "high_frequency_periodic":
            freq = float(rng.uniform(0.26, 0.45))
        elif pattern == "checker":
            freq = float(rng.choice([0.5, 0.25]))
        else:
            freq = float(rng.uniform(0.25, 0.42))
        specs.append(FingerprintSpec(seed=int(child.generate_state(1)[0]), pattern=pattern,
                                     amplitude=amplitude, frequency=freq))
    return specs


def generate_stream(num_tasks: int, samples_per_class: int, image_size: int, seed: int,
                    train_fraction: float = 0.85, amplitude: float = 0.12,
                    fingerprints: list[FingerprintSpec] | None = None) -> list[TaskSpec]:
    """Synthetic stream: task t pairs class 2t (authentic) with class 2t+1 (fake).

    Fake images are per-sample smooth backgrounds plus the task's fingerprint;
    authentic images are backgrounds only. Labels are globally disjoint and
    everything is a pure function of the seed.
    """
    if num_tasks <= 0 or samples_per_class <= 0 or image_size <= 0:
        raise ConfigurationError("num_tasks, samples_per_class and image_size must be positive")
    if not (0.0 < train_fraction < 1.0):
        raise ConfigurationError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if fingerprints is None:
        fingerprints = _default_fingerprints(num_tasks, seed, amplitude)
    if len(fingerprints) != num_tasks:
        raise ConfigurationError(f"got {len(fingerprints)} fingerprints for {num_tasks} tasks")

    n_train = int(round(samples_per_class * train_fraction))
    n_train = min(max(n_train, 1), samples_per_class - 1)
    tasks = []
    root = np.random.SeedSequence([seed, 0x5EED])
    for t, task_seq in enumerate(root.spawn(num_tasks)):
        fp = fingerprints[t]
        pattern = render_fingerprint(fp, image_size)
        rng = np.random.default_rng(task_seq)
        real_id, fake_id = 2 * t, 2 * t + 1
        images, labels, refs = [], [], []
        for kind, cid in (("real", real_id), ("fake", fake_id)):
            for s in range(samples_per_class):
                bg = _smooth_background(rng, image_size)
                img = bg if kind == "real" else bg + pattern
                images.append(np.clip(img, 0.0, 1.0).astype(np.float32))
                labels.append(cid)
                refs.append(f"task{t + 1}/{kind}/{s:04d}")
        images = np.stack(images)
        labels = np.asarray(labels, dtype=np.int64)
        train_idx, test_idx = [], []
        for cid in (real_id, fake_id):
            idx = np.flatnonzero(labels == cid)
            train_idx.extend(idx[:n_train])
            test_idx.extend(idx[n_train:])
        classes = [
            ClassInfo(real_id, f"real_{t + 1}", True),
            ClassInfo(fake_id, f"fake_{t + 1}_{fp.pattern}", False),
        ]
        tasks.append(
            TaskSpec(
                task_id=t + 1,
                name=f"task{t + 1}",
                classes=classes,
                train=SampleSet(labels[train_idx], [refs[i] for i in train_idx], images=images[train_idx]),
                test=SampleSet(labels[test_idx], [refs[i] for i in test_idx], images=images[test_idx]),
                samples_per_class=samples_per_class,
                fingerprint=fp,
            )
        )
    return tasks


def load_image(path: str, channels: int = 1) -> np.ndarray:
    img = Image.open(path)
    img = img.convert("L" if channels == 1 else "RGB")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return arr


def load_manifest(path: str, train_fraction: float = 0.85, channels: int = 1) -> list[TaskSpec]:
    """Read a scenario manifest: {"scenario": name, "tasks": [{name, real_dirs, fake_dirs}]}.

    Every directory becomes one class whose PNG files are split into train and
    test by sorted filename. Parse problems raise ManifestError with the
    offending field; missing files raise DataError listing them.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest {path} is not valid JSON: line {e.lineno} column {e.colno}: {e.msg}") from None

    if not isinstance(doc, dict) or "tasks" not in doc:
        raise ManifestError(f"manifest {path}: missing top-level field 'tasks'")
    if not isinstance(doc["tasks"], list) or not doc["tasks"]:
        raise ManifestError(f"manifest {path}: field 'tasks' must be a non-empty list")

    base = os.path.dirname(os.path.abspath(path))
    tasks = []
    next_class_id = 0
    missing: list[str] = []
    for t, entry in enumerate(doc["tasks"]):
        for fld in ("name", "real_dirs", "fake_dirs"):
            if fld not in entry:
                raise ManifestError(f"manifest {path}: tasks[{t}] is missing field {fld!r}")
        if not entry["real_dirs"] or not entry["fake_dirs"]:
            raise ManifestError(f"manifest {path}: tasks[{t}] needs at least one real and one fake dir")
        classes, train_parts, test_parts = [], [], []
        for flag, key in ((True, "real_dirs"), (False, "fake_dirs")):
            for d in entry[key]:
                full = d if os.path.isabs(d) else os.path.join(base, d)
                if not os.path.isdir(full):
                    missing.append(full)
                    continue
                files = sorted(
                    os.path.join(full, f) for f in os.listdir(full) if f.lower().endswith(".png")
                )
                if not files:
                    raise DataError(f"manifest {path}: directory has no PNG files: {full}")
                for f in files:
                    if not os.path.isfile(f):
                        missing.append(f)
                cid = next_class_id
                next_class_id += 1
                classes.append(ClassInfo(cid, os.path.basename(d.rstrip("/")), flag))
                n_train = int(round(len(files) * train_fraction))
                n_train = min(max(n_train, 1), len(files) - 1) if len(files) > 1 else 1
                train_parts.append((cid, files[:n_train]))
                test_parts.append((cid, files[n_train:]))
        if missing:
            raise DataError(f"manifest {path}: missing files/dirs: {missing}")

        def _sample_set(parts):
            labels, paths = [], []
            for cid, files in parts:
                labels.extend([cid] * len(files))
                paths.extend(files)
            return SampleSet(labels, paths, paths=paths, channels=channels)

        tasks.append(
            TaskSpec(
                task_id=t + 1,
                name=entry["name"],
                classes=classes,
                train=_sample_set(train_parts),
                test=_sample_set(test_parts),
            )
        )
    return tasks


def export_stream(tasks: list[TaskSpec], out_dir: str, scenario_name: str = "exported") -> str:
    """Write a stream as PNG directories plus a manifest.json; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"scenario": scenario_name, "tasks": []}
    for task in tasks:
        entry = {"name": task.name, "real_dirs": [], "fake_dirs": []}
        for cls in task.classes:
            rel = f"{task.name}_{cls.name}"
            cls_dir = os.path.join(out_dir, rel)
            os.makedirs(cls_dir, exist_ok=True)
            counter = 0
            for split in (task.train, task.test):
                for img, lbl in zip(split.images, split.labels):
                    if lbl != cls.class_id:
                        continue
                    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
                    png = Image.fromarray(np.round(arr * 255).astype(np.uint8))
                    png.save(os.path.join(cls_dir, f"img_{counter:05d}.png"))
                    counter += 1
            entry["real_dirs" if cls.authentic else "fake_dirs"].append(rel)
        manifest["tasks"].append(entry)
    mpath = os.path.join(out_dir, "manifest.json")
    with open(mpath, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return mpath


def _resize_bilinear_2d(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    pim = Image.fromarray(np.asarray(img, dtype=np.float32), mode="F")
    return np.asarray(pim.resize((out_w, out_h), Image.BILINEAR), dtype=np.float32)


def _center_crop(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    top = (h - size) // 2
    left = (w - size) // 2
    return img[top: top + size, left: left + size]


def preprocess(image: np.ndarray, target_size: int, allow_resize: bool = False) -> np.ndarray:
    """Center crop to target_size with pixel values in [0, 1].

    With allow_resize=False the image must already be at least target_size on
    both sides. With allow_resize=True a bilinear resize bringing the short
    side to target_size precedes the crop; this is the destructive path that
    removes high-frequency content near the sampling limit.
    """
    img = np.asarray(image)
    if img.dtype == np.uint8:
        img = img.astype(np.float32) / 255.0
    else:
        img = img.astype(np.float32)
    if img.ndim not in (2, 3):
        raise DataError(f"expected a 2-D or 3-D image, got shape {img.shape}")
    h, w = img.shape[:2]
    if allow_resize:
        scale = target_size / min(h, w)
        out_h, out_w = max(target_size, int(round(h * scale))), max(target_size, int(round(w * scale)))
        if img.ndim == 2:
            img = _resize_bilinear_2d(img, out_h, out_w)
        else:
            img = np.stack(
                [_resize_bilinear_2d(img[..., c], out_h, out_w) for c in range(img.shape[2])], axis=-1
            )
    elif h < target_size or w < target_size:
        raise DataError(
            f"image {h}x{w} is smaller than target {target_size} and resizing is disabled"
        )
    return _center_crop(img, target_size)


def preprocess_batch(images: np.ndarray, target_size: int, allow_resize: bool = False) -> np.ndarray:
    return np.stack([preprocess(img, target_size, allow_resize) for img in np.asarray(images)])
