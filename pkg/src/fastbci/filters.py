"""Windowed-sinc FIR filters for the preprocessing pipeline.

Band-pass taps come from the classic Hamming-windowed ideal response with
half-amplitude points at the requested edges; the band-stop filter is the
spectral complement (unit impulse at the center tap minus the band-pass),
so the two responses of identical edges sum to an all-pass exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .edf import RawRecording


@dataclass(frozen=True)
class FirFilter:
    taps: np.ndarray = field(repr=False)
    mode: str
    low_hz: float
    high_hz: float
    fs: float
    transition_hz: float
    window: str = "hamming"

    def __post_init__(self):
        if len(self.taps) % 2 != 1:
            raise ValueError("tap count must be odd (linear phase)")

    def describe(self) -> dict:
        return {
            "mode": self.mode,
            "low_hz": self.low_hz,
            "high_hz": self.high_hz,
            "fs": self.fs,
            "transition_hz": self.transition_hz,
            "window": self.window,
            "taps": len(self.taps),
        }


def design_fir(mode: str, low_hz: float, high_hz: float, fs: float,
               transition_hz: float = 2.0) -> FirFilter:
    """Design a linear-phase band-pass or band-stop filter."""
    if mode not in ("band_pass", "band_stop"):
        raise ValueError(f"unknown filter mode {mode!r}")
    if not (0.0 < low_hz < high_hz < fs / 2.0):
        raise ValueError(f"edges must satisfy 0 < {low_hz} < {high_hz} < {fs / 2}")
    if transition_hz <= 0:
        raise ValueError("transition width must be positive")

    # window-method length for a Hamming window: ~3.3 / normalized transition
    numtaps = int(np.ceil(3.3 * fs / transition_hz))
    if numtaps % 2 == 0:
        numtaps += 1
    n = np.arange(numtaps) - (numtaps - 1) / 2.0

    def lowpass(cutoff_hz):
        return 2.0 * cutoff_hz / fs * np.sinc(2.0 * cutoff_hz * n / fs)

    window = 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(numtaps) / (numtaps - 1))
    taps = (lowpass(high_hz) - lowpass(low_hz)) * window
    if mode == "band_stop":
        taps = -taps
        taps[(numtaps - 1) // 2] += 1.0
    return FirFilter(taps=taps, mode=mode, low_hz=low_hz, high_hz=high_hz,
                     fs=fs, transition_hz=transition_hz)


def filter_apply(recording: RawRecording, filt: FirFilter) -> RawRecording:
    """Convolve every channel with the taps.

    The output is time-aligned (the (taps-1)/2 group delay is removed) and
    edges see zero padding, so it has the same length as the input.
    """
    if abs(filt.fs - recording.fs) > 1e-9:
        raise ValueError(
            f"filter designed for fs={filt.fs}, recording has fs={recording.fs}")
    filtered = fftconvolve(recording.signals, filt.taps[None, :], mode="same", axes=1)
    return recording.with_signals(filtered)
