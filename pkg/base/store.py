"""
Window store - the on-disk corpus of windows with subject/day/label/intensity
metadata, plus CSV ingestion.

File layout (little-endian):
    magic "HARW" | version u16 | count u64 | T u32 | rate u32
    count x (3 x T float32, channel-major)
    count x (subject_id u16-length-prefixed UTF-8 | day_index u16 | label i32 | intensity f32)
"""
import logging
import struct
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from base.errors import IngestError, SignalError, StoreFormatError
from base.signal_core import (
    N_CHANNELS,
    RawRecording,
    SignalWindow,
    WindowRecord,
    batch_intensity,
    resample_linear,
    segment_labels,
    segment_windows,
)
from config.settings import STORE_MAGIC, STORE_VERSION, TARGET_RATE, WINDOW_SECONDS

logger = logging.getLogger(__name__)

UNLABELLED = -1
_HEADER = struct.Struct("<4sHQII")
_META_FIXED = struct.Struct("<Hif")
META_COLUMNS = ["subject_id", "day_index", "label", "intensity"]
SECONDS_PER_DAY = 86400


class WindowStore:
    """In-memory view of a window store; stores are never mutated in place"""

    def __init__(self, windows: np.ndarray, meta: pd.DataFrame, rate: int = TARGET_RATE):
        windows = np.ascontiguousarray(windows, dtype=np.float32)
        if windows.ndim != 3 or windows.shape[1] != N_CHANNELS:
            raise StoreFormatError(f"windows must have shape (n, 3, T), got {windows.shape}")
        if len(meta) != windows.shape[0]:
            raise StoreFormatError(f"{windows.shape[0]} windows but {len(meta)} metadata rows")
        if not np.isfinite(windows).all():
            raise SignalError("window store contains non-finite samples")
        meta = meta.reset_index(drop=True)[META_COLUMNS].copy()
        meta["subject_id"] = meta["subject_id"].astype(str)
        meta["day_index"] = meta["day_index"].astype(np.int64)
        meta["label"] = meta["label"].astype(np.int64)
        meta["intensity"] = meta["intensity"].astype(np.float32)
        if (meta["intensity"] < 0).any():
            raise StoreFormatError("intensity must be non-negative")
        labelled = meta["label"] >= 0
        if len(meta) and labelled.any() and not labelled.all():
            raise StoreFormatError("store mixes labelled and unlabelled windows")
        self.windows = windows
        self.meta = meta
        self.rate = int(rate)

    # =====================================================
    # CONSTRUCTION
    # =====================================================
    @classmethod
    def build(
        cls,
        windows: np.ndarray,
        subject_ids: Sequence[str],
        day_indices: Sequence[int],
        labels: Optional[Sequence[int]] = None,
        rate: int = TARGET_RATE,
    ) -> "WindowStore":
        windows = np.ascontiguousarray(windows, dtype=np.float32)
        n = windows.shape[0]
        meta = pd.DataFrame({
            "subject_id": list(subject_ids),
            "day_index": list(day_indices),
            "label": list(labels) if labels is not None else [UNLABELLED] * n,
            "intensity": batch_intensity(windows).astype(np.float32) if n else np.zeros(0, np.float32),
        })
        return cls(windows, meta, rate)

    @classmethod
    def from_records(cls, records: Sequence[WindowRecord]) -> "WindowStore":
        if not records:
            raise StoreFormatError("cannot build a store from zero records")
        rate = records[0].window.rate
        windows = np.stack([r.window.samples for r in records])
        meta = pd.DataFrame({
            "subject_id": [r.subject_id for r in records],
            "day_index": [r.day_index for r in records],
            "label": [UNLABELLED if r.label is None else r.label for r in records],
            "intensity": [r.intensity for r in records],
        })
        return cls(windows, meta, rate)

    @classmethod
    def concatenate(cls, stores: Sequence["WindowStore"]) -> "WindowStore":
        rates = {s.rate for s in stores}
        if len(rates) != 1:
            raise StoreFormatError(f"cannot concatenate stores with rates {sorted(rates)}")
        return cls(
            np.concatenate([s.windows for s in stores]),
            pd.concat([s.meta for s in stores], ignore_index=True),
            rates.pop(),
        )

    # =====================================================
    # QUERIES
    # =====================================================
    def __len__(self) -> int:
        return self.windows.shape[0]

    @property
    def window_length(self) -> int:
        return self.windows.shape[2]

    @property
    def duration(self) -> int:
        return self.window_length // self.rate

    @property
    def labelled(self) -> bool:
        return len(self) > 0 and bool((self.meta["label"] >= 0).all())

    @property
    def labels(self) -> np.ndarray:
        return self.meta["label"].to_numpy()

    @property
    def intensities(self) -> np.ndarray:
        return self.meta["intensity"].to_numpy()

    @property
    def subject_ids(self) -> np.ndarray:
        return self.meta["subject_id"].to_numpy()

    def subjects(self) -> List[str]:
        return sorted(self.meta["subject_id"].unique().tolist())

    def days(self, subject: str) -> List[int]:
        rows = self.meta[self.meta["subject_id"] == subject]
        return sorted(rows["day_index"].unique().tolist())

    def indices(self, subject: Optional[str] = None, day: Optional[int] = None) -> np.ndarray:
        mask = np.ones(len(self), dtype=bool)
        if subject is not None:
            mask &= self.meta["subject_id"].to_numpy() == subject
        if day is not None:
            mask &= self.meta["day_index"].to_numpy() == day
        return np.flatnonzero(mask)

    def subject_indices(self, subjects: Iterable[str]) -> np.ndarray:
        return np.flatnonzero(self.meta["subject_id"].isin(list(subjects)).to_numpy())

    def class_ids(self) -> List[int]:
        if not self.labelled:
            return []
        return sorted(int(c) for c in self.meta["label"].unique())

    def classes_by_subject(self) -> dict:
        return {
            subject: set(int(c) for c in group["label"].unique())
            for subject, group in self.meta.groupby("subject_id")
        }

    def window(self, i: int) -> SignalWindow:
        return SignalWindow(self.windows[i], rate=self.rate, duration=self.duration)

    def record(self, i: int) -> WindowRecord:
        row = self.meta.iloc[i]
        label = int(row["label"])
        return WindowRecord(
            window=self.window(i),
            subject_id=row["subject_id"],
            day_index=int(row["day_index"]),
            label=None if label == UNLABELLED else label,
            intensity=float(row["intensity"]),
        )

    def subset(self, indices: Sequence[int]) -> "WindowStore":
        indices = np.asarray(indices, dtype=np.int64)
        return WindowStore(self.windows[indices].copy(), self.meta.iloc[indices], self.rate)

    def select_subjects(self, subjects: Iterable[str]) -> "WindowStore":
        return self.subset(self.subject_indices(subjects))

    def unlabelled(self) -> "WindowStore":
        meta = self.meta.copy()
        meta["label"] = UNLABELLED
        return WindowStore(self.windows.copy(), meta, self.rate)

    # =====================================================
    # FILE FORMAT
    # =====================================================
    def to_bytes(self) -> bytes:
        parts = [_HEADER.pack(STORE_MAGIC, STORE_VERSION, len(self), self.window_length, self.rate)]
        parts.append(self.windows.astype("<f4", copy=False).tobytes(order="C"))
        for subject, day, label, intensity in self.meta.itertuples(index=False):
            encoded = str(subject).encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise StoreFormatError(f"subject id too long: {subject[:40]!r}...")
            if not 0 <= day <= 0xFFFF:
                raise StoreFormatError(f"day_index {day} does not fit u16")
            parts.append(struct.pack("<H", len(encoded)))
            parts.append(encoded)
            parts.append(_META_FIXED.pack(int(day), int(label), float(intensity)))
        return b"".join(parts)

    def save(self, path: str | Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        logger.info(f"Window store written: {path} ({len(self)} windows)")

    @classmethod
    def from_bytes(cls, data: bytes, source: str = "<bytes>") -> "WindowStore":
        if len(data) < _HEADER.size:
            raise StoreFormatError(f"{source}: truncated header")
        magic, version, count, length, rate = _HEADER.unpack_from(data, 0)
        if magic != STORE_MAGIC:
            raise StoreFormatError(f"{source}: bad magic {magic!r}, expected {STORE_MAGIC!r}")
        if version != STORE_VERSION:
            raise StoreFormatError(f"{source}: unsupported store version {version}")
        offset = _HEADER.size
        payload = count * N_CHANNELS * length * 4
        if len(data) < offset + payload:
            raise StoreFormatError(f"{source}: truncated window payload")
        windows = np.frombuffer(data, dtype="<f4", count=count * N_CHANNELS * length, offset=offset)
        windows = windows.reshape(count, N_CHANNELS, length).astype(np.float32)
        offset += payload

        rows = []
        try:
            for _ in range(count):
                (n_bytes,) = struct.unpack_from("<H", data, offset)
                offset += 2
                subject = data[offset:offset + n_bytes].decode("utf-8")
                offset += n_bytes
                day, label, intensity = _META_FIXED.unpack_from(data, offset)
                offset += _META_FIXED.size
                rows.append((subject, day, label, intensity))
        except (struct.error, UnicodeDecodeError) as e:
            raise StoreFormatError(f"{source}: corrupt metadata table ({e})") from e
        if offset != len(data):
            raise StoreFormatError(f"{source}: {len(data) - offset} trailing bytes")

        meta = pd.DataFrame(rows, columns=META_COLUMNS)
        return cls(windows, meta, rate)

    @classmethod
    def load(cls, path: str | Path) -> "WindowStore":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Window store not found: {path}")
        store = cls.from_bytes(path.read_bytes(), source=str(path))
        logger.info(f"Window store loaded: {path} ({len(store)} windows, {len(store.subjects())} subjects)")
        return store


# =====================================================
# CSV INGESTION
# =====================================================
REQUIRED_COLUMNS = ["time", "x", "y", "z"]


def read_subject_manifest(path: str | Path) -> dict:
    """Manifest CSV with columns path,subject_id"""
    df = pd.read_csv(path, dtype=str)
    missing = {"path", "subject_id"} - set(df.columns)
    if missing:
        raise IngestError(f"manifest lacks columns {sorted(missing)}", str(path))
    return {Path(p).name: s for p, s in zip(df["path"], df["subject_id"])}


def _read_csv(path: Path, labelled: bool) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise IngestError(f"cannot parse CSV ({e})", str(path)) from e
    df.columns = [c.strip().lower() for c in df.columns]
    missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing:
        raise IngestError(f"missing columns {missing}", str(path))
    if labelled and "label" not in df.columns:
        raise IngestError("labelled ingest requested but the CSV has no label column", str(path))
    for column in REQUIRED_COLUMNS:
        values = pd.to_numeric(df[column], errors="coerce")
        bad = values.isna() | ~np.isfinite(values.fillna(0.0))
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            # +2: one header line, 1-based numbering
            raise IngestError(
                f"malformed value {df[column].iloc[row]!r} in column {column!r}", str(path), row + 2
            )
        df[column] = values.astype(np.float64)
    if labelled:
        blank = df["label"].isna()
        if blank.any():
            row = int(np.flatnonzero(blank.to_numpy())[0])
            raise IngestError("missing label", str(path), row + 2)
    return df


def _label_table(frames: Sequence[pd.DataFrame]) -> dict:
    names = sorted({str(v).strip() for df in frames for v in df["label"].unique()})
    if all(n.lstrip("-").isdigit() for n in names):
        table = {n: int(n) for n in names}
        if any(v < 0 for v in table.values()):
            raise IngestError(f"negative class ids in labels: {sorted(table.values())}")
        return table
    return {n: i for i, n in enumerate(names)}


def ingest_csv(
    paths: Sequence[str | Path],
    rate: float,
    labelled: bool = False,
    manifest: Optional[str | Path] = None,
    target_rate: int = TARGET_RATE,
    duration_s: int = WINDOW_SECONDS,
) -> tuple[WindowStore, dict]:
    """
    Resample CSV recordings to target_rate, segment into windows and compute intensities.

    Args:
        paths: CSV files with columns time,x,y,z(,label) and a header row
        rate: source sampling rate in Hz
        labelled: require and keep the label column
        manifest: optional CSV mapping file names to subject ids (default: file stem)

    Returns:
        (store, label table mapping label text to class id)
    """
    if not paths:
        raise IngestError("no CSV files given")
    subject_map = read_subject_manifest(manifest) if manifest else {}
    frames = [(Path(p), _read_csv(Path(p), labelled)) for p in paths]
    table = _label_table([df for _, df in frames]) if labelled else {}

    per_day = int(round(rate * SECONDS_PER_DAY))
    windows, subjects, days, labels = [], [], [], []
    for path, df in frames:
        subject = subject_map.get(path.name, path.stem)
        samples = df[["x", "y", "z"]].to_numpy(dtype=np.float64).T
        sample_labels = (
            df["label"].map(lambda v: table[str(v).strip()]).to_numpy(dtype=np.int64) if labelled else None
        )
        for day, start in enumerate(range(0, samples.shape[1], per_day)):
            chunk = samples[:, start:start + per_day]
            if chunk.shape[1] < 2:
                continue
            rec = RawRecording(
                chunk, rate, subject, day,
                None if sample_labels is None else sample_labels[start:start + per_day],
            )
            rec = resample_linear(rec, target_rate)
            day_windows = segment_windows(rec, duration_s)
            windows.extend(w.samples for w in day_windows)
            subjects.extend([subject] * len(day_windows))
            days.extend([day] * len(day_windows))
            if labelled:
                labels.extend(segment_labels(rec, duration_s))
        logger.info(f"Ingested {path.name}: subject {subject!r}")

    if not windows:
        raise IngestError("no complete window in any input file")
    store = WindowStore.build(
        np.stack(windows).astype(np.float32), subjects, days,
        labels if labelled else None, rate=target_rate,
    )
    return store, table
