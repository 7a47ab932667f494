"""Hand-rolled EDF+ writer used to author byte-exact test fixtures."""

import numpy as np


def _field(value, width):
    s = str(value)
    if len(s) > width:
        raise ValueError(f"field {s!r} wider than {width}")
    return s.ljust(width).encode("ascii")


def tal_bytes(onset, texts, duration=None):
    head = f"{onset:+g}".encode()
    if duration is not None:
        head += b"\x15" + f"{duration:g}".encode()
    body = b"".join(t.encode() + b"\x14" for t in texts)
    return head + b"\x14" + body + b"\x00"


def write_edf(path, digital, fs, annotations=(), labels=None,
              phys_min=-32768, phys_max=32767, dig_min=-32768, dig_max=32767,
              record_duration=1.0, ann_spr=32, include_annotation_channel=True):
    """Write an EDF+ file from int16 digital samples shaped (channels, samples).

    ``annotations`` is a list of (onset_seconds, duration_seconds, text); each
    lands in the data record containing its onset.
    """
    digital = np.asarray(digital, dtype="<i2")
    n_ch, n_samples = digital.shape
    spr = int(round(fs * record_duration))
    if n_samples % spr:
        raise ValueError("sample count must be a whole number of records")
    n_records = n_samples // spr
    labels = labels or [f"EEG {i:03d}" for i in range(n_ch)]
    ns = n_ch + (1 if include_annotation_channel else 0)

    header = b"".join([
        _field(0, 8),                      # version
        _field("X test patient", 80),
        _field("X test recording", 80),
        _field("01.01.01", 8),
        _field("00.00.00", 8),
        _field(256 * (ns + 1), 8),
        _field("EDF+C", 44),
        _field(n_records, 8),
        _field(f"{record_duration:g}", 8),
        _field(ns, 4),
    ])

    def column(values, width):
        return b"".join(_field(v, width) for v in values)

    sig_labels = list(labels) + (["EDF Annotations"] if include_annotation_channel else [])
    sprs = [spr] * n_ch + ([ann_spr] if include_annotation_channel else [])
    header += column(sig_labels, 16)
    header += column([""] * ns, 80)                       # transducer
    header += column(["uV"] * n_ch + [""] * (ns - n_ch), 8)
    header += column([phys_min] * n_ch + [-1] * (ns - n_ch), 8)
    header += column([phys_max] * n_ch + [1] * (ns - n_ch), 8)
    header += column([dig_min] * n_ch + [-32768] * (ns - n_ch), 8)
    header += column([dig_max] * n_ch + [32767] * (ns - n_ch), 8)
    header += column([""] * ns, 80)                       # prefiltering
    header += column(sprs, 8)
    header += column([""] * ns, 32)                       # reserved

    by_record = [[] for _ in range(n_records)]
    for onset, duration, text in annotations:
        idx = int(onset // record_duration)
        if not 0 <= idx < n_records:
            raise ValueError(f"annotation at {onset}s outside recording")
        by_record[idx].append((onset, duration, text))

    body = bytearray()
    for r in range(n_records):
        for c in range(n_ch):
            body += digital[c, r * spr:(r + 1) * spr].tobytes()
        if include_annotation_channel:
            block = tal_bytes(r * record_duration, [])  # record timestamp
            for onset, duration, text in by_record[r]:
                block += tal_bytes(onset, [text], duration)
            budget = 2 * ann_spr
            if len(block) > budget:
                raise ValueError("annotation block overflows; raise ann_spr")
            body += block + b"\x00" * (budget - len(block))

    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(bytes(body))
    return path
