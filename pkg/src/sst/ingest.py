"""Turning signals into training data: epoch slicing against a hypnogram,
rational-rate resampling, label sidecar files, and the synthetic generator
used for desk-scale runs."""

from __future__ import annotations

from fractions import Fraction

import numpy as np
from scipy.signal import firwin, resample_poly

from .edf import Hypnogram, SignalTrace
from .errors import ConfigError, DataError, ParseError
from .sampling import EpochStore

LABEL_CHARS = "W123R"

# per-class oscillation frequencies as fractions of fs; distinct and below
# Nyquist for any even fs >= 10
DEFAULT_CLASS_FREQ_FRACTIONS = (0.02, 0.06, 0.11, 0.17, 0.23)

MAX_RESAMPLE_FACTOR = 64


def epoch_and_label(trace: SignalTrace, hyp: Hypnogram, epoch_s: float = 30.0,
                    subject: str = "unknown"):
    """Slice a trace into epoch records labeled by the covering stage.

    Returns (records, dropped): records are (subject, (1, T) signal, label);
    epochs whose span is not fully covered by a single known stage are
    dropped and counted.
    """
    t_float = trace.fs * epoch_s
    T = int(round(t_float))
    if abs(t_float - T) > 1e-9 or T <= 0:
        raise ConfigError(
            f"epoch length {epoch_s}s at {trace.fs}Hz is {t_float} samples, not an integer"
        )
    n_epochs = len(trace.samples) // T
    records = []
    dropped = 0
    for k in range(n_epochs):
        stage = hyp.stage_for_span(k * epoch_s, (k + 1) * epoch_s)
        if stage is None:
            dropped += 1
            continue
        records.append((subject, trace.samples[k * T : (k + 1) * T].reshape(1, T), stage))
    return records, dropped


def resample(trace: SignalTrace, target_fs: float) -> SignalTrace:
    """Polyphase rational resampling to target_fs.

    The low-pass is a Kaiser-windowed sinc, 64 taps per phase, with each
    polyphase branch normalized to unit DC gain so constants pass through
    exactly. Output length is ceil(n * L / M).
    """
    if trace.fs <= 0 or target_fs <= 0:
        raise ConfigError(f"rates must be positive: {trace.fs} -> {target_fs}")
    ratio = Fraction(target_fs / trace.fs).limit_denominator(1000)
    L, M = ratio.numerator, ratio.denominator
    if abs(L / M - target_fs / trace.fs) > 1e-9:
        raise ConfigError(f"rate ratio {trace.fs} -> {target_fs} is not a small rational")
    if max(L, M) > MAX_RESAMPLE_FACTOR:
        raise ConfigError(
            f"rate ratio {L}/{M} too steep (limit {MAX_RESAMPLE_FACTOR}); resample in stages"
        )
    if L == M:
        return SignalTrace(label=trace.label, fs=float(target_fs),
                           samples=trace.samples.copy(), phys_dim=trace.phys_dim)

    h = firwin(64 * L + 1, 1.0 / max(L, M), window=("kaiser", 8.6))
    for p in range(L):
        h[p::L] /= L * h[p::L].sum()
    out = resample_poly(trace.samples, L, M, window=h)
    return SignalTrace(label=trace.label, fs=float(target_fs), samples=out,
                       phys_dim=trace.phys_dim)


def select_trace(traces: list[SignalTrace], label_match: str) -> SignalTrace:
    """First trace whose label contains label_match, case-insensitive."""
    needle = label_match.lower()
    for trace in traces:
        if needle in trace.label.lower():
            return trace
    available = ", ".join(repr(t.label) for t in traces)
    raise DataError(f"no signal label contains {label_match!r}; available: {available}")


def labels_to_text(labels) -> str:
    out = []
    for i, y in enumerate(np.asarray(labels, dtype=np.int64)):
        if not 0 <= y <= 4:
            raise DataError(f"label {y} at position {i} outside 0..4")
        out.append(LABEL_CHARS[y])
    return "\n".join(out) + "\n"


def labels_from_text(text: str) -> np.ndarray:
    labels = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if len(line) != 1 or line not in LABEL_CHARS:
            raise ParseError(f"label sidecar line {lineno}: unknown stage {line!r}")
        labels.append(LABEL_CHARS.index(line))
    return np.array(labels, dtype=np.int64)


def synth_dataset(
    n_subjects: int,
    epochs_per_subject: int,
    fs: int,
    class_freqs=None,
    noise_sd: float = 0.1,
    amplitude: float = 1.0,
    self_transition: float = 0.7,
    epoch_s: float = 30.0,
    rng: np.random.Generator | None = None,
) -> EpochStore:
    """Five distinct oscillation classes plus white noise, with labels from a
    sticky stage-transition chain so sequences carry realistic runs."""
    rng = rng if rng is not None else np.random.default_rng(0)
    if n_subjects <= 0 or epochs_per_subject <= 0:
        raise ConfigError("synth_dataset needs positive subject and epoch counts")
    if class_freqs is None:
        class_freqs = [f * fs for f in DEFAULT_CLASS_FREQ_FRACTIONS]
    if len(class_freqs) != 5 or len(set(class_freqs)) != 5:
        raise ConfigError(f"need 5 distinct class frequencies, got {class_freqs}")
    if max(class_freqs) >= fs / 2:
        raise ConfigError(f"class frequency {max(class_freqs)} is at or above Nyquist ({fs / 2})")
    if not 0.0 <= self_transition < 1.0:
        raise ConfigError(f"self_transition must be in [0, 1), got {self_transition}")

    T = int(round(fs * epoch_s))
    t = np.arange(T) / fs
    records = []
    for subject in range(n_subjects):
        label = int(rng.integers(0, 5))
        for _ in range(epochs_per_subject):
            phase = rng.uniform(0.0, 2.0 * np.pi)
            x = amplitude * np.sin(2.0 * np.pi * class_freqs[label] * t + phase)
            if noise_sd > 0:
                x = x + noise_sd * rng.standard_normal(T)
            records.append((f"synth{subject:03d}", x.reshape(1, T), label))
            if rng.random() >= self_transition:
                label = (label + int(rng.integers(1, 5))) % 5
    return EpochStore(records)
