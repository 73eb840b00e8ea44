"""Canonical dataset representation, ingestion, synthetic generation, and
sliding-window construction.

Canonical file format: UTF-8, LF endings, header ``subject,label,t,c0,...``,
one time point per row.  An empty label or channel field marks the row as
unlabeled/missing; such rows are dropped and introduce a span break so that
windows never cross the gap.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass
class SensorRecording:
    """One subject's multichannel signal with per-time-point labels.

    ``channels`` is (C, T); ``labels`` is (T,) dense class indices.  ``spans``
    lists the contiguous (start, end) runs left after dropping bad rows;
    windows are drawn within spans only.
    """
    subject_id: str
    sample_rate_hz: float
    channels: np.ndarray
    labels: np.ndarray
    spans: list = field(default_factory=list)

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.channels.ndim != 2:
            raise ValueError("channels must be 2-D [C, T]")
        if self.labels.shape[0] != self.channels.shape[1]:
            raise ValueError(
                f"labels length {self.labels.shape[0]} != series length "
                f"{self.channels.shape[1]}")
        if not self.spans:
            self.spans = [(0, self.channels.shape[1])]

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def n_points(self) -> int:
        return self.channels.shape[1]


@dataclass
class DatasetSpec:
    name: str
    n_classes: int
    subjects: list
    n_channels: int
    channel_mean: np.ndarray | None = None
    channel_std: np.ndarray | None = None
    label_names: list = field(default_factory=list)


@dataclass
class WindowSet:
    """Overlapping fixed-length windows with provenance and majority labels.

    ``data`` is (N, C, W) after per-channel z-normalization; ``offsets`` index
    into the owning recording's kept arrays.
    """
    data: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray
    offsets: np.ndarray
    window_len: int
    step: int
    channel_mean: np.ndarray
    channel_std: np.ndarray

    @property
    def n_windows(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    def chains(self):
        """Index arrays of temporally contiguous per-subject window runs."""
        out = []
        n = self.n_windows
        i = 0
        while i < n:
            j = i + 1
            while (j < n and self.subjects[j] == self.subjects[i]
                   and self.offsets[j] - self.offsets[j - 1] == self.step):
                j += 1
            out.append(np.arange(i, j))
            i = j
        return out

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.data[idx], self.labels[idx], self.subjects[idx],
                         self.offsets[idx], self.window_len, self.step,
                         self.channel_mean, self.channel_std)


def majority_window_label(labels) -> int:
    """Modal label; ties broken by smallest class index."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("majority_window_label needs at least one label")
    return int(np.bincount(labels).argmax())


# ---------------------------------------------------------------------------
# canonical file I/O
# ---------------------------------------------------------------------------

def write_canonical(path, rows, n_channels):
    """rows: iterable of (subject, label_or_None, t, values[C])."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        header = ["subject", "label", "t"] + [f"c{i}" for i in range(n_channels)]
        fh.write(",".join(header) + "\n")
        for subject, label, t, values in rows:
            lbl = "" if label is None else str(label)
            vals = ",".join(repr(float(v)) for v in values)
            fh.write(f"{subject},{lbl},{t},{vals}\n")


def recordings_to_rows(recordings, label_names=None):
    """Emits an unlabeled separator row between spans so that span breaks
    survive the canonical round trip."""
    for rec in recordings:
        for si, (s, e) in enumerate(rec.spans):
            if si > 0:
                yield rec.subject_id, None, s, np.zeros(rec.n_channels)
            for t in range(s, e):
                lbl = int(rec.labels[t])
                name = label_names[lbl] if label_names else lbl
                yield rec.subject_id, name, t, rec.channels[:, t]


def load_canonical(path, sample_rate_hz=1.0):
    """Parse a canonical file into one SensorRecording per subject.

    Rows with an empty label or channel field are dropped and break the
    containing span.  Malformed rows raise with their line number.
    Returns (recordings, DatasetSpec).
    """
    per_subject: dict[str, dict] = {}
    label_to_idx: dict[str, int] = {}
    n_channels = None
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected canonical header")
        if header[:3] != ["subject", "label", "t"]:
            raise ValueError(
                f"{path}: line 1: header must start with subject,label,t")
        n_channels = len(header) - 3
        if n_channels < 1:
            raise ValueError(f"{path}: line 1: no channel columns in header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_channels + 3:
                raise ValueError(
                    f"{path}: line {lineno}: expected {n_channels + 3} fields, "
                    f"got {len(row)}")
            subject, label = row[0], row[1].strip()
            entry = per_subject.setdefault(
                subject, {"channels": [], "labels": [], "breaks": False})
            missing = label == "" or any(v.strip() == "" for v in row[3:])
            if missing:
                entry["breaks"] = True
                continue
            try:
                values = [float(v) for v in row[3:]]
            except ValueError as exc:
                raise ValueError(
                    f"{path}: line {lineno}: bad numeric field ({exc})") from None
            if not all(np.isfinite(values)):
                entry["breaks"] = True
                continue
            if label not in label_to_idx:
                label_to_idx[label] = len(label_to_idx)
            if entry["breaks"] and entry["labels"]:
                entry["labels"].append(None)  # span break sentinel
                entry["channels"].append(None)
            entry["breaks"] = False
            entry["channels"].append(values)
            entry["labels"].append(label_to_idx[label])

    recordings = []
    for subject, entry in per_subject.items():
        channels, labels, spans = [], [], []
        start = 0
        def close_span():
            nonlocal start
            if len(labels) > start:
                spans.append((start, len(labels)))
            start = len(labels)
        for ch, lbl in zip(entry["channels"], entry["labels"]):
            if lbl is None:
                close_span()
                continue
            channels.append(ch)
            labels.append(lbl)
        close_span()
        if not labels:
            continue
        rec = SensorRecording(
            subject_id=subject,
            sample_rate_hz=sample_rate_hz,
            channels=np.asarray(channels, dtype=np.float64).T,
            labels=np.asarray(labels, dtype=np.int64),
            spans=spans)
        recordings.append(rec)
    label_names = sorted(label_to_idx, key=label_to_idx.get)
    spec = DatasetSpec(
        name=str(path), n_classes=len(label_names),
        subjects=[r.subject_id for r in recordings],
        n_channels=n_channels, label_names=label_names)
    return recordings, spec


def adapt_wisdm_v1(raw_path, out_path):
    """Convert WISDM-v1 raw rows (user,activity,timestamp,x,y,z;) to the
    canonical format.  Unparseable rows are skipped; returns (n_rows,
    n_skipped).
    """
    rows = []
    n_skipped = 0
    with open(raw_path, encoding="utf-8") as fh:
        for line in fh:
            for part in line.strip().split(";"):
                part = part.strip().rstrip(",")
                if not part:
                    continue
                fields = part.split(",")
                if len(fields) != 6:
                    n_skipped += 1
                    continue
                user, activity, ts = fields[0].strip(), fields[1].strip(), fields[2].strip()
                try:
                    t = int(ts)
                    xyz = [float(v) for v in fields[3:6]]
                except ValueError:
                    n_skipped += 1
                    continue
                if not activity:
                    n_skipped += 1
                    continue
                rows.append((user, activity, t, xyz))
    if not rows:
        warnings.warn(f"{raw_path}: no parseable rows; wrote an empty "
                      "canonical file")
    write_canonical(out_path, rows, n_channels=3)
    return len(rows), n_skipped


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------

def make_windows(recordings, window_len, step, normalize=True) -> WindowSet:
    """Slide windows over every contiguous span of every recording.

    A span of length T yields floor((T - W) / step) + 1 windows (0 if T < W).
    Per-channel z-normalization statistics are computed over the windowed
    data itself (the data being clustered; there is no train/test split).
    """
    if window_len < 1 or step < 1:
        raise ValueError(f"window_len and step must be >= 1, got "
                         f"W={window_len}, step={step}")
    data, labels, subjects, offsets = [], [], [], []
    for rec in recordings:
        for (s, e) in rec.spans:
            span_len = e - s
            if span_len < window_len:
                continue
            count = (span_len - window_len) // step + 1
            for w in range(count):
                off = s + w * step
                data.append(rec.channels[:, off:off + window_len])
                labels.append(majority_window_label(rec.labels[off:off + window_len]))
                subjects.append(rec.subject_id)
                offsets.append(off)
    if data:
        arr = np.stack(data)
    else:
        n_ch = recordings[0].n_channels if recordings else 0
        arr = np.zeros((0, n_ch, window_len))
    if normalize and arr.size:
        mean = arr.mean(axis=(0, 2))
        std = arr.std(axis=(0, 2))
        std = np.where(std > 0, std, 1.0)
        arr = (arr - mean[None, :, None]) / std[None, :, None]
    else:
        n_ch = arr.shape[1]
        mean = np.zeros(n_ch)
        std = np.ones(n_ch)
    return WindowSet(
        data=arr,
        labels=np.asarray(labels, dtype=np.int64),
        subjects=np.asarray(subjects, dtype=object),
        offsets=np.asarray(offsets, dtype=np.int64),
        window_len=window_len, step=step,
        channel_mean=mean, channel_std=std)


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------

def generate_synthetic(n_classes=3, n_subjects=2, n_channels=3,
                       span_len=512, n_spans=6, offset_scale=0.0,
                       noise_std=0.1, sample_rate_hz=50.0, seed=0,
                       segment_activities=False):
    """Deterministic synthetic recordings: each class k emits
    sin(2*pi*f_k*t) per channel (phase-shifted across channels) plus a
    subject-specific constant offset and Gaussian noise.

    Class frequencies are exponentially spaced so classes stay separable by
    dominant frequency.  Subject s gets offset offset_scale * s, so adjacent
    subjects' channel means differ by offset_scale.

    With segment_activities=True each activity bout becomes its own span,
    mimicking per-activity recording sessions: windows never mix classes.
    """
    if n_classes < 2:
        raise ValueError(f"n_classes must be >= 2, got {n_classes}")
    rng = np.random.default_rng(seed)
    freqs = np.array([2.0 ** k / 128.0 for k in range(n_classes)])
    recordings = []
    for s in range(n_subjects):
        label_seq = []
        while len(label_seq) < n_spans:
            label_seq.extend(rng.permutation(n_classes))
        label_seq = label_seq[:n_spans]
        labels = np.repeat(np.asarray(label_seq, dtype=np.int64), span_len)
        T = labels.size
        t = np.arange(T)
        channels = np.empty((n_channels, T))
        offset = offset_scale * s
        for c in range(n_channels):
            phase = c * np.pi / 4.0
            sig = np.sin(2.0 * np.pi * freqs[labels] * t + phase)
            channels[c] = sig + offset + rng.normal(0.0, noise_std, size=T)
        spans = []
        if segment_activities:
            spans = [(i * span_len, (i + 1) * span_len)
                     for i in range(n_spans)]
        recordings.append(SensorRecording(
            subject_id=f"s{s}",
            sample_rate_hz=sample_rate_hz,
            channels=channels,
            labels=labels,
            spans=spans))
    return recordings
