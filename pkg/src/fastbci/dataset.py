"""Recording ingestion: download, event extraction, epoching, subject splits,
episode sampling and the on-disk trial archive."""

from __future__ import annotations

import json
import logging
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .edf import RawRecording
from .errors import DataFormatError, InsufficientDataError

log = logging.getLogger(__name__)

EXPECTED_FS = 160.0
EXPECTED_CHANNELS = 64
PRE_SAMPLES = 160            # 1 s before onset
TRIAL_SAMPLES = 2 * PRE_SAMPLES + 1   # first 2 s of each segment -> 321
DEFAULT_BASE_URL = "https://physionet.org/files/eegmmidb/1.0.0"
ALL_RUNS = tuple(range(1, 15))

# runs 1-2 are eyes-open/closed baselines and unused
ACTIVITY_RUNS = {
    1: (3, 7, 11),
    2: (4, 8, 12),
    3: (5, 9, 13),
    4: (6, 10, 14),
}
LABEL_MAP = {"T1": 0, "T2": 1}

TRAIN_SUBJECTS = tuple(range(1, 88))
VALIDATION_SUBJECTS = tuple(range(88, 99))
TEST_SUBJECTS = tuple(range(99, 110))


@dataclass(frozen=True)
class Trial:
    data: np.ndarray = field(repr=False)  # (channels, TRIAL_SAMPLES)
    label: int
    subject_id: int
    activity: int


@dataclass
class SubjectDataset:
    """All retained trials of one subject for one activity, split by class."""

    subject_id: int
    activity: int
    class0: np.ndarray = field(repr=False)  # (n0, channels, samples)
    class1: np.ndarray = field(repr=False)

    @property
    def counts(self) -> tuple[int, int]:
        return len(self.class0), len(self.class1)

    def min_per_class(self) -> int:
        return min(self.counts)

    @classmethod
    def from_trials(cls, subject_id: int, activity: int,
                    trials: list[Trial]) -> "SubjectDataset":
        for t in trials:
            if t.subject_id != subject_id or t.activity != activity:
                raise ValueError("trial tagged with a different subject/activity")
        shape = (0, EXPECTED_CHANNELS, TRIAL_SAMPLES)
        by_class = {0: [], 1: []}
        for t in trials:
            by_class[t.label].append(t.data)
        return cls(
            subject_id=subject_id,
            activity=activity,
            class0=np.stack(by_class[0]) if by_class[0] else np.empty(shape),
            class1=np.stack(by_class[1]) if by_class[1] else np.empty(shape),
        )


@dataclass(frozen=True)
class Episode:
    """Class-balanced, disjoint support/query trial sets of one subject."""

    support_x: np.ndarray = field(repr=False)
    support_y: np.ndarray = field(repr=False)
    query_x: np.ndarray = field(repr=False)
    query_y: np.ndarray = field(repr=False)
    subject_id: int = -1
    activity: int = -1

    @property
    def support(self):
        return self.support_x, self.support_y

    @property
    def query(self):
        return self.query_x, self.query_y


# ----------------------------------------------------------------------
# download

def fetch_dataset(dest_dir, subject_range: tuple[int, int] = (1, 109),
                  runs=ALL_RUNS, base_url: str = DEFAULT_BASE_URL,
                  retries: int = 3, progress=None) -> dict:
    """Mirror the EDF tree for the requested subjects into ``dest_dir``.

    Files already present with the server's byte length are skipped, so the
    call is idempotent; truncated files are re-downloaded.  Returns counts
    {"downloaded": n, "skipped": n, "paths": [...]}.
    """
    dest_dir = Path(dest_dir)
    lo, hi = subject_range
    downloaded, skipped, paths = 0, 0, []
    for subject in range(lo, hi + 1):
        subj_dir = dest_dir / f"S{subject:03d}"
        subj_dir.mkdir(parents=True, exist_ok=True)
        for run in runs:
            name = f"S{subject:03d}R{run:02d}.edf"
            url = f"{base_url}/S{subject:03d}/{name}"
            target = subj_dir / name
            if _fetch_one(url, target, retries):
                downloaded += 1
            else:
                skipped += 1
            paths.append(target)
            if progress is not None:
                progress(str(target))
    return {"downloaded": downloaded, "skipped": skipped, "paths": paths}


def _remote_length(response) -> int | None:
    value = response.headers.get("Content-Length")
    return int(value) if value is not None else None


def _fetch_one(url: str, target: Path, retries: int) -> bool:
    last_error: Exception | None = None
    for attempt in range(retries):
        try:
            with urllib.request.urlopen(url) as response:
                expected = _remote_length(response)
                if target.exists() and expected is not None \
                        and target.stat().st_size == expected:
                    return False
                part = target.with_suffix(target.suffix + ".part")
                with open(part, "wb") as fh:
                    while True:
                        chunk = response.read(1 << 20)
                        if not chunk:
                            break
                        fh.write(chunk)
                if expected is not None and part.stat().st_size != expected:
                    part.unlink()
                    raise DataFormatError(
                        f"{url}: got {part.stat().st_size} bytes, expected {expected}")
                part.replace(target)
                return True
        except (urllib.error.URLError, OSError, DataFormatError) as exc:
            last_error = exc
            log.warning("fetch attempt %d/%d failed for %s: %s",
                        attempt + 1, retries, url, exc)
            time.sleep(min(2.0 ** attempt - 1.0, 5.0))
    raise DataFormatError(f"could not fetch {url}: {last_error}")


# ----------------------------------------------------------------------
# events and epochs

def extract_events(recording: RawRecording, activity: int) -> list[tuple[int, int]]:
    """(onset_sample, label) pairs for the requested activity; rest periods
    (T0) are discarded."""
    if activity not in ACTIVITY_RUNS:
        raise ValueError(f"activity must be 1..4, got {activity}")
    if recording.run_id not in ACTIVITY_RUNS[activity]:
        raise ValueError(
            f"run {recording.run_id} does not belong to activity {activity}")
    events = []
    for ann in recording.annotations:
        if ann.text == "T0":
            continue
        if ann.text not in LABEL_MAP:
            raise DataFormatError(f"unknown annotation code {ann.text!r}")
        events.append((int(round(ann.onset * recording.fs)), LABEL_MAP[ann.text]))
    return events


def epoch_extract(recording: RawRecording,
                  events: list[tuple[int, int]]) -> tuple[list[Trial], int]:
    """Cut one trial per event spanning samples [onset-160, onset+160].

    Events whose window leaves the recording are dropped; the second return
    value counts them.
    """
    pre = int(round(recording.fs))
    trials, dropped = [], 0
    for onset_sample, label in events:
        lo = onset_sample - pre
        hi = onset_sample + pre
        if lo < 0 or hi >= recording.n_samples:
            dropped += 1
            continue
        trials.append(Trial(
            data=recording.signals[:, lo:hi + 1].copy(),
            label=label,
            subject_id=recording.subject_id,
            activity=_activity_of_run(recording.run_id),
        ))
    return trials, dropped


def _activity_of_run(run_id: int) -> int:
    for activity, runs in ACTIVITY_RUNS.items():
        if run_id in runs:
            return activity
    raise ValueError(f"run {run_id} maps to no activity")


def build_splits(subject_ids) -> dict[str, list[int]]:
    """Partition subjects into train (1-87) / validation (88-98) / test (99-109)."""
    splits = {"train": [], "validation": [], "test": []}
    for sid in sorted(subject_ids):
        if sid in TRAIN_SUBJECTS:
            splits["train"].append(sid)
        elif sid in VALIDATION_SUBJECTS:
            splits["validation"].append(sid)
        elif sid in TEST_SUBJECTS:
            splits["test"].append(sid)
        else:
            raise ValueError(f"subject id {sid} outside 1..109")
    missing = sorted(set(range(1, 110)) - set(subject_ids))
    if missing:
        log.warning("subjects missing from the corpus: %s", missing)
    return splits


# ----------------------------------------------------------------------
# episodes

def sample_episode(dataset: SubjectDataset, k_support: int = 10, k_query: int = 11,
                   rng: np.random.Generator | None = None) -> Episode:
    """Uniform, class-balanced support/query split without replacement."""
    if rng is None:
        raise ValueError("sample_episode needs an rng")
    n0, n1 = dataset.counts
    need = k_support + k_query
    if n0 < need or n1 < need:
        raise InsufficientDataError(
            f"subject {dataset.subject_id} activity {dataset.activity}: "
            f"{(n0, n1)} trials/class, need {need}")
    sup_x, sup_y, qry_x, qry_y = [], [], [], []
    for label, pool in ((0, dataset.class0), (1, dataset.class1)):
        picked = rng.choice(len(pool), size=need, replace=False)
        sup_x.append(pool[picked[:k_support]])
        qry_x.append(pool[picked[k_support:]])
        sup_y.append(np.full(k_support, label, dtype=np.intp))
        qry_y.append(np.full(k_query, label, dtype=np.intp))
    return Episode(
        support_x=np.concatenate(sup_x),
        support_y=np.concatenate(sup_y),
        query_x=np.concatenate(qry_x),
        query_y=np.concatenate(qry_y),
        subject_id=dataset.subject_id,
        activity=dataset.activity,
    )


# ----------------------------------------------------------------------
# epoch archive: manifest.json + one binary file per (subject, activity)
# holding float64 LE trials in C order (trial, channel, time) followed by
# one label byte per trial.

ARCHIVE_VERSION = 1
MANIFEST_NAME = "manifest.json"


def write_archive(directory, datasets: list[SubjectDataset], fs: float = EXPECTED_FS,
                  filter_info: dict | None = None, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shapes = {arr.shape[1:] for ds in datasets
              for arr in (ds.class0, ds.class1) if len(arr)}
    if len(shapes) > 1:
        raise ValueError(f"mixed trial shapes in archive: {sorted(shapes)}")
    shape = shapes.pop() if shapes else (EXPECTED_CHANNELS, TRIAL_SAMPLES)
    entries = {}
    for ds in sorted(datasets, key=lambda d: (d.subject_id, d.activity)):
        name = f"S{ds.subject_id:03d}_A{ds.activity}.bin"
        trials = np.concatenate([ds.class0, ds.class1]) if (len(ds.class0) or
                                                            len(ds.class1)) else \
            np.empty((0,) + shape)
        labels = np.concatenate([
            np.zeros(len(ds.class0), dtype=np.uint8),
            np.ones(len(ds.class1), dtype=np.uint8),
        ])
        with open(directory / name, "wb") as fh:
            fh.write(np.ascontiguousarray(trials, dtype="<f8").tobytes())
            fh.write(labels.tobytes())
        entries.setdefault(str(ds.subject_id), {})[str(ds.activity)] = {
            "file": name,
            "n_trials": int(len(labels)),
            "class_counts": [int(len(ds.class0)), int(len(ds.class1))],
        }
    manifest = {
        "format_version": ARCHIVE_VERSION,
        "fs": fs,
        "shape": list(shape),
        "label_map": LABEL_MAP,
        "filter": filter_info or {},
        "subjects": entries,
    }
    if extra:
        manifest.update(extra)
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def read_archive(directory) -> tuple[dict[tuple[int, int], SubjectDataset], dict]:
    """Load every (subject, activity) dataset; validates counts against the
    manifest and the file sizes on disk."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST_NAME).read_text())
    except FileNotFoundError as exc:
        raise DataFormatError(f"no {MANIFEST_NAME} in {directory}") from exc
    if manifest.get("format_version") != ARCHIVE_VERSION:
        raise DataFormatError(
            f"archive version {manifest.get('format_version')} unsupported")
    channels, samples = manifest["shape"]
    datasets = {}
    for sid_str, per_activity in manifest["subjects"].items():
        for act_str, entry in per_activity.items():
            path = directory / entry["file"]
            n = entry["n_trials"]
            expected_bytes = n * channels * samples * 8 + n
            raw = path.read_bytes()
            if len(raw) != expected_bytes:
                raise DataFormatError(
                    f"{path}: {len(raw)} bytes, manifest implies {expected_bytes}")
            trials = np.frombuffer(raw[:n * channels * samples * 8], dtype="<f8")
            trials = trials.reshape(n, channels, samples).copy()
            labels = np.frombuffer(raw[n * channels * samples * 8:], dtype=np.uint8)
            counts = entry["class_counts"]
            if [int((labels == 0).sum()), int((labels == 1).sum())] != counts:
                raise DataFormatError(f"{path}: label counts disagree with manifest")
            datasets[(int(sid_str), int(act_str))] = SubjectDataset(
                subject_id=int(sid_str),
                activity=int(act_str),
                class0=trials[labels == 0],
                class1=trials[labels == 1],
            )
    return datasets, manifest
