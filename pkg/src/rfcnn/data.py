"""Spectrogram front-end, normalization, dataset containers, synthetic data.

The synthetic generator plants a small class-specific template at a random
time position for every positive label (the local, transferable evidence)
and, in the training split only, adds a class-correlated global
low-frequency pattern to the background. In the test split those global
patterns appear independently of the labels and the noise statistics are
shifted, so a model that keys on global context degrades while a local
pattern detector transfers.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field

import numpy as np

_LOG_FLOOR = 1e-10
_STD_FLOOR = 1e-6


# -- spectrogram front-end -------------------------------------------------------


@dataclass
class SpectrogramConfig:
    n_mels: int = 256
    window_size: int = 2048
    overlap: float = 0.75  # 0.75 for short clips, 0.25 for long ones
    sample_rate: int = 22050
    log_compress: bool = True  # perceptual weighting approximated by log

    def __post_init__(self):
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError("overlap must lie in [0, 1)")
        hop_exact = self.window_size * (1.0 - self.overlap)
        hop = round(hop_exact)
        if hop < 1 or abs(hop - hop_exact) > 1e-9:
            raise ValueError(
                f"window_size*(1-overlap) must be a positive integer, got {hop_exact}"
            )
        self.hop = hop


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, window_size: int, sample_rate: int) -> np.ndarray:
    """(n_mels, window_size//2 + 1) triangular filters, peak value 1."""
    n_bins = window_size // 2 + 1
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, center, hi = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        up = (fft_freqs - lo) / max(center - lo, 1e-12)
        down = (hi - fft_freqs) / max(hi - center, 1e-12)
        fb[i] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def mel_band_centers(cfg: SpectrogramConfig) -> np.ndarray:
    """Center frequency in Hz of each mel band."""
    mel_points = np.linspace(
        hz_to_mel(0.0), hz_to_mel(cfg.sample_rate / 2.0), cfg.n_mels + 2
    )
    return mel_to_hz(mel_points)[1:-1]


def compute_mel_spectrogram(waveform: np.ndarray, cfg: SpectrogramConfig) -> np.ndarray:
    """Log mel spectrogram of shape (n_mels, n_frames).

    Frames are Hann-windowed with no padding, so
    n_frames = (len(waveform) - window_size) // hop + 1.
    """
    w = np.asarray(waveform, dtype=np.float64).ravel()
    if w.size < cfg.window_size:
        raise ValueError(
            f"waveform of {w.size} samples is shorter than the window ({cfg.window_size})"
        )
    frames = np.lib.stride_tricks.sliding_window_view(w, cfg.window_size)[:: cfg.hop]
    n = cfg.window_size
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    spectrum = np.fft.rfft(frames * hann, axis=1)
    power = np.abs(spectrum) ** 2
    fb = mel_filterbank(cfg.n_mels, cfg.window_size, cfg.sample_rate)
    mel = power @ fb.T
    out = np.log(mel + _LOG_FLOOR) if cfg.log_compress else mel
    return np.ascontiguousarray(out.T)


# -- normalization ----------------------------------------------------------------


@dataclass
class NormalizationStats:
    mean: np.ndarray  # per mel bin
    std: np.ndarray

    @classmethod
    def from_training_split(cls, x: "list[np.ndarray] | np.ndarray") -> "NormalizationStats":
        """Per-bin statistics over every frame of the training split only."""
        if isinstance(x, np.ndarray):
            arrays = list(x.reshape((-1,) + x.shape[-2:]))
        else:
            arrays = [np.asarray(a).reshape(a.shape[-2], a.shape[-1]) for a in x]
        stacked = np.concatenate([a.astype(np.float64) for a in arrays], axis=1)
        mean = stacked.mean(axis=1)
        std = np.maximum(stacked.std(axis=1), _STD_FLOOR)
        return cls(mean=mean, std=std)


def normalize(spec: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """(x - mean) / std per mel bin; bin axis is the second-to-last."""
    return (spec - stats.mean[..., :, None]) / stats.std[..., :, None]


def random_crop(spec: np.ndarray, crop_frames: int, rng: np.random.Generator) -> np.ndarray:
    """Contiguous time slice of the last axis with a uniform start."""
    n_frames = spec.shape[-1]
    if crop_frames > n_frames:
        raise ValueError(f"clip has {n_frames} frames, cannot crop {crop_frames}")
    start = int(rng.integers(0, n_frames - crop_frames + 1))
    return spec[..., start : start + crop_frames]


# -- dataset containers -------------------------------------------------------------


@dataclass
class Split:
    x: list[np.ndarray]  # per-sample arrays of shape (1, H, W), float32
    y: np.ndarray  # (N, n_classes) soft labels in [0, 1]
    mask: np.ndarray  # (N, n_classes) bool, True where known

    def __len__(self) -> int:
        return len(self.x)

    def stacked(self) -> np.ndarray:
        shapes = {a.shape for a in self.x}
        if len(shapes) > 1:
            raise ValueError(f"split has mixed sample shapes {sorted(shapes)}")
        return np.stack(self.x)


@dataclass
class TaggingDataset:
    train: Split
    test: Split
    n_classes: int


# -- synthetic tagging data -----------------------------------------------------------


@dataclass
class SyntheticTaggingDataset(TaggingDataset):
    pattern_size: int = 0
    templates: np.ndarray = field(default_factory=lambda: np.zeros(0))
    template_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    label_density: float = 0.0


def _lowpass_field(rng: np.random.Generator, height: int, width: int, cutoff: float) -> np.ndarray:
    """Smooth unit-RMS random field: white noise with high frequencies removed."""
    white = rng.standard_normal((height, width))
    spectrum = np.fft.rfft2(white)
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.rfftfreq(width)[None, :]
    spectrum[np.sqrt(fy**2 + fx**2) > cutoff] = 0.0
    smooth = np.fft.irfft2(spectrum, s=(height, width))
    rms = np.sqrt(np.mean(smooth**2))
    return smooth / max(rms, 1e-12)


def _confounder_patterns(n_classes: int, height: int, width: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS global plane waves, one orientation per class."""
    waves = [(1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (1, 2), (2, -1), (3, 1)]
    yy, xx = np.mgrid[0:height, 0:width]
    patterns = np.zeros((n_classes, height, width))
    for c in range(n_classes):
        uy, ux = waves[c % len(waves)]
        phase = rng.uniform(0.0, 2.0 * np.pi)
        p = np.cos(2.0 * np.pi * (uy * yy / height + ux * xx / width) + phase)
        patterns[c] = p / np.sqrt(np.mean(p**2))
    return patterns


def generate_synthetic(
    n_classes: int,
    pattern_size: int,
    n_train: int,
    n_test: int,
    seed: int,
    height: int = 64,
    width: int = 64,
    label_density: float = 0.3,
    template_amplitude: float = 2.0,
    confound_amplitude: float = 0.8,
    noise_sigma: float = 0.5,
    smooth_sigma: float = 0.5,
    smooth_cutoff: float = 0.12,
    test_noise_scale: float = 1.3,
    test_shift: float = 0.25,
    unknown_fraction: float = 0.0,
) -> SyntheticTaggingDataset:
    """Seed-deterministic synthetic multi-label spectrogram dataset.

    Every positive label plants one instance of the class template at a
    uniform time position on the class's fixed frequency band. Training
    backgrounds carry the class-correlated global patterns; test
    backgrounds carry the same patterns drawn independently of the labels
    plus a noise-statistics shift.
    """
    if pattern_size > min(height, width):
        raise ValueError("pattern_size must fit inside the spectrogram")
    root = np.random.SeedSequence(seed)
    template_ss, confound_ss, train_ss, test_ss = root.spawn(4)

    t_rng = np.random.Generator(np.random.PCG64(template_ss))
    templates = t_rng.standard_normal((n_classes, pattern_size, pattern_size))
    templates /= np.sqrt((templates**2).mean(axis=(1, 2), keepdims=True))
    templates *= template_amplitude
    rows = np.floor(
        (np.arange(n_classes) + 0.5) * (height - pattern_size) / n_classes
    ).astype(int)

    c_rng = np.random.Generator(np.random.PCG64(confound_ss))
    confounders = _confounder_patterns(n_classes, height, width, c_rng)

    def make_split(n_samples: int, split_ss, is_test: bool) -> Split:
        xs: list[np.ndarray] = []
        ys = np.zeros((n_samples, n_classes), dtype=np.float32)
        masks = np.ones((n_samples, n_classes), dtype=bool)
        sigma = noise_sigma * (test_noise_scale if is_test else 1.0)
        shift = test_shift if is_test else 0.0
        for i, child in enumerate(split_ss.spawn(n_samples)):
            rng = np.random.Generator(np.random.PCG64(child))
            y = rng.uniform(size=n_classes) < label_density
            conf_bits = (
                rng.uniform(size=n_classes) < label_density if is_test else y
            )
            sample = sigma * rng.standard_normal((height, width))
            sample += smooth_sigma * _lowpass_field(rng, height, width, smooth_cutoff)
            sample += shift
            sample += np.tensordot(
                conf_bits.astype(np.float64), confounders, axes=(0, 0)
            ) * confound_amplitude
            for c in np.flatnonzero(y):
                col = int(rng.integers(0, width - pattern_size + 1))
                sample[rows[c] : rows[c] + pattern_size, col : col + pattern_size] += templates[c]
            if unknown_fraction > 0.0:
                masks[i] = rng.uniform(size=n_classes) >= unknown_fraction
            ys[i] = y
            xs.append(sample[None].astype(np.float32))
        return Split(x=xs, y=ys, mask=masks)

    train = make_split(n_train, train_ss, is_test=False)
    test = make_split(n_test, test_ss, is_test=True)
    return SyntheticTaggingDataset(
        train=train,
        test=test,
        n_classes=n_classes,
        pattern_size=pattern_size,
        templates=templates,
        template_rows=rows,
        label_density=label_density,
    )


def matched_filter_scores(split: Split, templates: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Max correlation of each class template over time; (N, C) raw scores."""
    n_classes, ps, _ = templates.shape
    scores = np.zeros((len(split), n_classes))
    for i, sample in enumerate(split.x):
        img = sample[0]
        for c in range(n_classes):
            band = img[rows[c] : rows[c] + ps, :]
            windows = np.lib.stride_tricks.sliding_window_view(band, (ps, ps))[0]
            scores[i, c] = np.tensordot(windows, templates[c], axes=([1, 2], [0, 1])).max()
    return scores


# -- binary container ("RFDATA1") ----------------------------------------------------

_DATA_MAGIC = b"RFDATA1"
_DATA_VERSION = 1


def save_container(path, ids: list[str], labels: np.ndarray, mask: np.ndarray,
                   specs: list[np.ndarray]) -> None:
    """Write samples to the RFDATA1 binary container.

    Layout: magic, version u16, n_samples u32, n_classes u32, then per
    sample: id (u32 length + utf-8 bytes), float32 label vector, u8 mask
    vector (1 = known), rank u32, extents u32 each, float32 payload.
    All integers little-endian; payloads row-major.
    """
    labels = np.asarray(labels, dtype=np.float32)
    mask = np.asarray(mask, dtype=bool)
    n_samples, n_classes = labels.shape
    if not (len(ids) == n_samples == len(specs)):
        raise ValueError("ids, labels and specs must have matching lengths")
    buf = io.BytesIO()
    buf.write(_DATA_MAGIC)
    buf.write(struct.pack("<HII", _DATA_VERSION, n_samples, n_classes))
    for sample_id, y, m, spec in zip(ids, labels, mask, specs):
        raw = sample_id.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(y.astype("<f4").tobytes())
        buf.write(m.astype(np.uint8).tobytes())
        arr = np.ascontiguousarray(spec, dtype=np.float32)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_container(path):
    """Read an RFDATA1 container; returns (ids, labels, mask, specs)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:7] != _DATA_MAGIC:
        raise ValueError("not an RFDATA1 container")
    offset = 7
    version, n_samples, n_classes = struct.unpack_from("<HII", data, offset)
    offset += struct.calcsize("<HII")
    if version != _DATA_VERSION:
        raise ValueError(f"unsupported container version {version}")
    ids: list[str] = []
    labels = np.zeros((n_samples, n_classes), dtype=np.float32)
    mask = np.zeros((n_samples, n_classes), dtype=bool)
    specs: list[np.ndarray] = []
    for i in range(n_samples):
        (id_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        ids.append(data[offset : offset + id_len].decode("utf-8"))
        offset += id_len
        labels[i] = np.frombuffer(data, dtype="<f4", count=n_classes, offset=offset)
        offset += 4 * n_classes
        mask[i] = np.frombuffer(data, dtype=np.uint8, count=n_classes, offset=offset).astype(bool)
        offset += n_classes
        (rank,) = struct.unpack_from("<I", data, offset)
        offset += 4
        extents = struct.unpack_from(f"<{rank}I", data, offset)
        offset += 4 * rank
        count = int(np.prod(extents))
        specs.append(
            np.frombuffer(data, dtype="<f4", count=count, offset=offset)
            .reshape(extents)
            .copy()
        )
        offset += 4 * count
    return ids, labels, mask, specs


def write_manifest(path, split_by_id: dict[str, str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "split"])
        for sample_id, split in split_by_id.items():
            writer.writerow([sample_id, split])


def read_manifest(path) -> dict[str, str]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return {row["id"]: row["split"] for row in reader}


def dataset_from_container(
    container_path,
    manifest_path,
    spectrogram: SpectrogramConfig | None = None,
) -> TaggingDataset:
    """Assemble train/test splits from a container plus a manifest CSV.

    Rank-2 records are taken as precomputed spectrograms; rank-1 records
    are raw waveforms and go through the mel front-end (``spectrogram``
    config, defaults if omitted).
    """
    ids, labels, mask, specs = load_container(container_path)
    split_by_id = read_manifest(manifest_path)
    splits: dict[str, dict] = {
        "train": {"x": [], "y": [], "mask": []},
        "test": {"x": [], "y": [], "mask": []},
    }
    for sample_id, y, m, spec in zip(ids, labels, mask, specs):
        split = split_by_id.get(sample_id)
        if split not in splits:
            raise ValueError(f"sample {sample_id!r} has no train/test assignment")
        if spec.ndim == 1:
            cfg = spectrogram if spectrogram is not None else SpectrogramConfig()
            spec = compute_mel_spectrogram(spec, cfg)
        arr = spec[None] if spec.ndim == 2 else spec
        splits[split]["x"].append(arr.astype(np.float32))
        splits[split]["y"].append(y)
        splits[split]["mask"].append(m)

    def build(d) -> Split:
        n = len(d["x"])
        y = np.asarray(d["y"], dtype=np.float32).reshape(n, -1)
        m = np.asarray(d["mask"], dtype=bool).reshape(n, -1)
        return Split(x=d["x"], y=y, mask=m)

    return TaggingDataset(
        train=build(splits["train"]),
        test=build(splits["test"]),
        n_classes=labels.shape[1],
    )
