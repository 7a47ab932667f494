"""Reader for EDF/EDF+ recordings (256-byte fixed header, 256 bytes per
signal header, 16-bit little-endian two's-complement samples, TAL-encoded
annotation channel)."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataFormatError

ANNOTATION_LABEL = "EDF Annotations"
_FILENAME_RE = re.compile(r"S(\d{3})R(\d{2})\.edf$", re.IGNORECASE)


@dataclass(frozen=True)
class Annotation:
    onset: float      # seconds from recording start
    duration: float   # seconds
    text: str


@dataclass(frozen=True)
class RawRecording:
    subject_id: int | None
    run_id: int | None
    fs: float
    channel_labels: list[str]
    signals: np.ndarray = field(repr=False)  # (channels, samples), physical units
    annotations: list[Annotation]

    @property
    def n_channels(self) -> int:
        return self.signals.shape[0]

    @property
    def n_samples(self) -> int:
        return self.signals.shape[1]

    def with_signals(self, signals: np.ndarray) -> "RawRecording":
        if signals.shape != self.signals.shape:
            raise ValueError("replacement signals must keep the original shape")
        return replace(self, signals=signals)


def _text(raw: bytes) -> str:
    return raw.decode("ascii", errors="replace").strip()


def _number(raw: bytes, cast, what: str):
    try:
        return cast(raw.decode("ascii").strip())
    except (UnicodeDecodeError, ValueError) as exc:
        raise DataFormatError(f"malformed header field {what}: {raw!r}") from exc


def ids_from_filename(path) -> tuple[int | None, int | None]:
    m = _FILENAME_RE.search(Path(path).name)
    if not m:
        return None, None
    return int(m.group(1)), int(m.group(2))


def parse_edf(path) -> RawRecording:
    """Parse one EDF/EDF+ file into physical-unit signals plus annotations.

    Raises :class:`DataFormatError` on malformed headers, inconsistent
    record sizes or a missing annotation channel.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 256:
        raise DataFormatError(f"{path}: file shorter than the 256-byte header")

    header_bytes = _number(raw[184:192], int, "header bytes")
    n_records = _number(raw[236:244], int, "record count")
    record_duration = _number(raw[244:252], float, "record duration")
    ns = _number(raw[252:256], int, "signal count")
    if ns < 1:
        raise DataFormatError(f"{path}: no signals declared")
    if header_bytes != 256 * (ns + 1):
        raise DataFormatError(
            f"{path}: header claims {header_bytes} bytes, expected {256 * (ns + 1)}")
    if len(raw) < header_bytes:
        raise DataFormatError(f"{path}: truncated signal headers")

    def fields(offset: int, width: int) -> list[bytes]:
        base = 256 + offset * ns
        return [raw[base + i * width: base + (i + 1) * width] for i in range(ns)]

    # field-major layout: label 16, transducer 80, dimension 8, then the
    # numeric ranges at byte offsets 104/112/120/128, prefiltering 80, spr 8
    labels = [_text(b) for b in fields(0, 16)]
    phys_min = [_number(b, float, "physical minimum") for b in fields(104, 8)]
    phys_max = [_number(b, float, "physical maximum") for b in fields(112, 8)]
    dig_min = [_number(b, float, "digital minimum") for b in fields(120, 8)]
    dig_max = [_number(b, float, "digital maximum") for b in fields(128, 8)]
    spr = [_number(b, int, "samples per record") for b in fields(216, 8)]

    total_per_record = sum(spr)
    record_bytes = 2 * total_per_record
    payload = raw[header_bytes:]
    if n_records == -1:
        if record_bytes == 0 or len(payload) % record_bytes:
            raise DataFormatError(f"{path}: cannot infer record count")
        n_records = len(payload) // record_bytes
    if len(payload) != n_records * record_bytes:
        raise DataFormatError(
            f"{path}: payload is {len(payload)} bytes, expected "
            f"{n_records} records x {record_bytes} bytes")

    samples = np.frombuffer(payload, dtype="<i2").reshape(n_records, total_per_record)
    offsets = np.concatenate([[0], np.cumsum(spr)])

    ann_index = None
    channels: list[np.ndarray] = []
    channel_labels: list[str] = []
    rates: set[float] = set()
    for i, label in enumerate(labels):
        block = samples[:, offsets[i]:offsets[i + 1]]
        if label == ANNOTATION_LABEL:
            ann_index = i
            ann_block = block
            continue
        if dig_max[i] == dig_min[i]:
            raise DataFormatError(f"{path}: zero digital range on signal {i}")
        scale = (phys_max[i] - phys_min[i]) / (dig_max[i] - dig_min[i])
        channels.append((block.ravel() - dig_min[i]) * scale + phys_min[i])
        channel_labels.append(label)
        if record_duration <= 0:
            raise DataFormatError(f"{path}: non-positive record duration")
        rates.add(spr[i] / record_duration)

    if ann_index is None:
        raise DataFormatError(f"{path}: missing annotation channel")
    if not channels:
        raise DataFormatError(f"{path}: no signal channels besides annotations")
    if len(rates) != 1:
        raise DataFormatError(f"{path}: mixed sampling rates {sorted(rates)}")

    annotations: list[Annotation] = []
    for r in range(n_records):
        _parse_tals(ann_block[r].tobytes(), annotations, path)

    subject_id, run_id = ids_from_filename(path)
    return RawRecording(
        subject_id=subject_id,
        run_id=run_id,
        fs=rates.pop(),
        channel_labels=channel_labels,
        signals=np.vstack(channels),
        annotations=annotations,
    )


def _parse_tals(raw: bytes, out: list[Annotation], path) -> None:
    """Decode one record's time-stamped annotation lists."""
    for tal in raw.split(b"\x00"):
        if not tal:
            continue
        head, *texts = tal.split(b"\x14")
        if not head or head[:1] not in (b"+", b"-"):
            raise DataFormatError(f"{path}: malformed annotation {tal!r}")
        if b"\x15" in head:
            onset_raw, duration_raw = head.split(b"\x15", 1)
            duration = _number(duration_raw, float, "annotation duration")
        else:
            onset_raw, duration = head, 0.0
        onset = _number(onset_raw, float, "annotation onset")
        for text in texts:
            if text:
                out.append(Annotation(onset, duration, text.decode("ascii")))
