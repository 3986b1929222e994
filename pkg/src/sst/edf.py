"""EDF reading and writing plus TAL annotation decoding.

EDF files carry a 256-byte fixed-width ASCII header, one more 256-byte block
per signal (field-major), then data records of little-endian int16 samples.
The parser is strict by default; lenient mode repairs sloppy ASCII and
reports what it repaired instead of failing.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParseError

HEADER_FIELDS = (  # (name, width)
    ("version", 8),
    ("patient", 80),
    ("recording", 80),
    ("start_date", 8),
    ("start_time", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("n_records", 8),
    ("record_duration_s", 8),
    ("n_signals", 4),
)

SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("phys_dim", 8),
    ("phys_min", 8),
    ("phys_max", 8),
    ("dig_min", 8),
    ("dig_max", 8),
    ("prefilter", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)

STAGE_W, STAGE_N1, STAGE_N2, STAGE_N3, STAGE_REM = range(5)

DEFAULT_STAGE_MAP = {
    "Sleep stage W": STAGE_W,
    "Sleep stage 1": STAGE_N1,
    "Sleep stage 2": STAGE_N2,
    "Sleep stage 3": STAGE_N3,
    "Sleep stage 4": STAGE_N3,
    "Sleep stage N1": STAGE_N1,
    "Sleep stage N2": STAGE_N2,
    "Sleep stage N3": STAGE_N3,
    "Sleep stage N4": STAGE_N3,
    "Sleep stage R": STAGE_REM,
    "Sleep stage ?": None,
    "Movement time": None,
}


@dataclass
class EdfSignalHeader:
    label: str
    transducer: str
    phys_dim: str
    phys_min: float
    phys_max: float
    dig_min: int
    dig_max: int
    prefilter: str
    samples_per_record: int
    reserved: str = ""


@dataclass
class EdfHeader:
    version: str
    patient: str
    recording: str
    start_date: str
    start_time: str
    header_bytes: int
    reserved: str
    n_records: int
    record_duration_s: float
    n_signals: int
    signals: list[EdfSignalHeader] = field(default_factory=list)


@dataclass
class SignalTrace:
    label: str
    fs: float
    samples: np.ndarray                 # physical units, float64
    phys_dim: str = ""
    digital: np.ndarray | None = None   # raw int16, kept for exact rewrites


class _Cursor:
    def __init__(self, data: bytes, strict: bool, warnings: list[str]):
        self.data = data
        self.pos = 0
        self.strict = strict
        self.warnings = warnings

    def field(self, width: int, name: str) -> tuple[str, int]:
        at = self.pos
        if at + width > len(self.data):
            raise ParseError(f"header truncated in field {name}", offset=at)
        raw = self.data[at : at + width]
        self.pos += width
        try:
            text = raw.decode("ascii")
        except UnicodeDecodeError:
            if self.strict:
                raise ParseError(f"field {name} is not ASCII", offset=at) from None
            text = raw.decode("ascii", errors="replace")
            self.warnings.append(f"field {name} at offset {at}: non-ASCII bytes replaced")
        return text.strip(), at

    def int_field(self, width: int, name: str) -> tuple[int, int]:
        text, at = self.field(width, name)
        try:
            return int(text), at
        except ValueError:
            if not self.strict:
                m = re.search(r"-?\d+", text)
                if m:
                    self.warnings.append(f"field {name} at offset {at}: parsed {m.group()!r} out of {text!r}")
                    return int(m.group()), at
            raise ParseError(f"field {name} is not an integer: {text!r}", offset=at) from None

    def float_field(self, width: int, name: str) -> tuple[float, int]:
        text, at = self.field(width, name)
        try:
            return float(text), at
        except ValueError:
            if not self.strict:
                m = re.search(r"-?\d+(\.\d+)?([eE][+-]?\d+)?", text)
                if m:
                    self.warnings.append(f"field {name} at offset {at}: parsed {m.group()!r} out of {text!r}")
                    return float(m.group()), at
            raise ParseError(f"field {name} is not a number: {text!r}", offset=at) from None


def parse_edf(data: bytes, strict: bool = True):
    """Decode one EDF file. Returns (EdfHeader, [SignalTrace], warnings)."""
    warnings: list[str] = []
    if len(data) < 256:
        raise ParseError(f"file is {len(data)} bytes, EDF header needs 256", offset=len(data))
    cur = _Cursor(data, strict, warnings)

    version, _ = cur.field(8, "version")
    patient, _ = cur.field(80, "patient")
    recording, _ = cur.field(80, "recording")
    start_date, _ = cur.field(8, "start_date")
    start_time, _ = cur.field(8, "start_time")
    header_bytes, hb_at = cur.int_field(8, "header_bytes")
    reserved, _ = cur.field(44, "reserved")
    n_records, nr_at = cur.int_field(8, "n_records")
    record_duration_s, _ = cur.float_field(8, "record_duration_s")
    n_signals, ns_at = cur.int_field(4, "n_signals")

    if n_signals <= 0:
        raise ParseError(f"n_signals must be positive, got {n_signals}", offset=ns_at)
    if header_bytes != 256 * (1 + n_signals):
        raise ParseError(
            f"header_bytes is {header_bytes}, must be 256*(1+{n_signals}) = {256 * (1 + n_signals)}",
            offset=hb_at,
        )
    if len(data) < header_bytes:
        raise ParseError("file ends inside the signal header block", offset=len(data))

    columns: dict[str, list] = {}
    offsets: dict[str, list[int]] = {}
    for name, width in SIGNAL_FIELDS:
        values, ats = [], []
        for i in range(n_signals):
            fname = f"signal {i} {name}"
            if name in ("phys_min", "phys_max"):
                v, at = cur.float_field(width, fname)
            elif name in ("dig_min", "dig_max", "samples_per_record"):
                v, at = cur.int_field(width, fname)
            else:
                v, at = cur.field(width, fname)
            values.append(v)
            ats.append(at)
        columns[name] = values
        offsets[name] = ats

    signals = []
    for i in range(n_signals):
        sig = EdfSignalHeader(**{name: columns[name][i] for name, _ in SIGNAL_FIELDS})
        if sig.dig_min >= sig.dig_max:
            raise ParseError(
                f"signal {i}: digital min {sig.dig_min} >= max {sig.dig_max}",
                offset=offsets["dig_min"][i],
            )
        if sig.phys_min == sig.phys_max:
            raise ParseError(
                f"signal {i}: physical min == max == {sig.phys_min}",
                offset=offsets["phys_min"][i],
            )
        if sig.samples_per_record <= 0:
            raise ParseError(
                f"signal {i}: samples_per_record must be positive, got {sig.samples_per_record}",
                offset=offsets["samples_per_record"][i],
            )
        signals.append(sig)

    if n_records < 0:
        if strict:
            raise ParseError(f"n_records is {n_records}", offset=nr_at)
        per_record = sum(s.samples_per_record for s in signals) * 2
        n_records = (len(data) - header_bytes) // per_record
        warnings.append(f"n_records was -1, inferred {n_records} from file size")

    header = EdfHeader(
        version=version, patient=patient, recording=recording,
        start_date=start_date, start_time=start_time, header_bytes=header_bytes,
        reserved=reserved, n_records=n_records, record_duration_s=record_duration_s,
        n_signals=n_signals, signals=signals,
    )

    spr = np.array([s.samples_per_record for s in signals], dtype=np.int64)
    per_record = int(spr.sum())
    expected = header_bytes + n_records * per_record * 2
    if len(data) != expected:
        raise ParseError(
            f"file is {len(data)} bytes, header promises {expected} "
            f"({n_records} records of {per_record * 2} bytes)",
            offset=min(len(data), expected),
        )
    flat = np.frombuffer(data, dtype="<i2", count=n_records * per_record, offset=header_bytes)
    table = flat.reshape(n_records, per_record)
    bounds = np.concatenate([[0], np.cumsum(spr)])

    traces = []
    for i, sig in enumerate(signals):
        digital = np.ascontiguousarray(table[:, bounds[i] : bounds[i + 1]]).reshape(-1)
        gain = (sig.phys_max - sig.phys_min) / (sig.dig_max - sig.dig_min)
        physical = (digital.astype(np.float64) - sig.dig_min) * gain + sig.phys_min
        traces.append(
            SignalTrace(
                label=sig.label,
                fs=sig.samples_per_record / header.record_duration_s,
                samples=physical,
                phys_dim=sig.phys_dim,
                digital=digital,
            )
        )
    return header, traces, warnings


def _pack(value, width: int, name: str) -> bytes:
    if isinstance(value, float):
        text = f"{value:.10g}"
        if text.endswith(".0"):
            text = text[:-2]
    else:
        text = str(value)
    raw = text.encode("ascii")
    if len(raw) > width:
        raise DataError(f"EDF field {name} value {text!r} exceeds {width} ASCII bytes")
    return raw.ljust(width)


def write_edf(header: EdfHeader, digital: list[np.ndarray]) -> bytes:
    """Serialize a header plus per-signal int16 digital sample arrays."""
    if len(digital) != header.n_signals:
        raise DataError(f"{len(digital)} signal arrays for {header.n_signals} header entries")
    header.header_bytes = 256 * (1 + header.n_signals)
    chunks = []
    for name, width in HEADER_FIELDS:
        chunks.append(_pack(getattr(header, name), width, name))
    for name, width in SIGNAL_FIELDS:
        for i, sig in enumerate(header.signals):
            chunks.append(_pack(getattr(sig, name), width, f"signal {i} {name}"))

    arrays = []
    for i, (sig, arr) in enumerate(zip(header.signals, digital)):
        arr = np.asarray(arr)
        if arr.size != header.n_records * sig.samples_per_record:
            raise DataError(
                f"signal {i}: {arr.size} samples, header promises "
                f"{header.n_records}*{sig.samples_per_record}"
            )
        if arr.min() < sig.dig_min or arr.max() > sig.dig_max:
            raise DataError(f"signal {i}: digital values leave [{sig.dig_min}, {sig.dig_max}]")
        arrays.append(arr.astype("<i2").reshape(header.n_records, sig.samples_per_record))
    for r in range(header.n_records):
        for arr in arrays:
            chunks.append(arr[r].tobytes())
    return b"".join(chunks)


def digital_from_physical(samples: np.ndarray, sig: EdfSignalHeader) -> np.ndarray:
    """Quantize physical values into the signal's digital range (clipping)."""
    gain = (sig.dig_max - sig.dig_min) / (sig.phys_max - sig.phys_min)
    digital = np.rint((np.asarray(samples, dtype=np.float64) - sig.phys_min) * gain + sig.dig_min)
    return np.clip(digital, sig.dig_min, sig.dig_max).astype(np.int16)


@dataclass
class Hypnogram:
    """Onset-sorted, non-overlapping stage annotations.

    Stage None marks spans scored as something other than the 5 classes
    (movement, unscored); epochs over them are dropped downstream.
    """

    entries: list  # (onset_s, duration_s, stage int 0..4 or None)

    def __post_init__(self):
        self.entries = sorted(self.entries, key=lambda e: e[0])
        for (o1, d1, _), (o2, _, _) in zip(self.entries, self.entries[1:]):
            if o1 + d1 > o2 + 1e-9:
                raise DataError(
                    f"hypnogram entries overlap: [{o1}, {o1 + d1}) and onset {o2}"
                )

    def stage_for_span(self, t0: float, t1: float):
        """Stage fully covering [t0, t1), or None."""
        for onset, duration, stage in self.entries:
            if onset <= t0 + 1e-9 and t1 <= onset + duration + 1e-9:
                return stage
            if onset > t0:
                break
        return None


def parse_tal_annotations(data: bytes, stage_map: dict | None = None) -> Hypnogram:
    """Decode a TAL byte stream: records of +onset[\\x15dur]\\x14text\\x14...\\x00."""
    stage_map = DEFAULT_STAGE_MAP if stage_map is None else stage_map
    entries = []
    for index, record in enumerate(data.split(b"\x00")):
        if not record:
            continue
        try:
            text = record.decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError(f"TAL record {index}: not valid UTF-8") from None
        if text[0] not in "+-":
            raise ParseError(f"TAL record {index}: onset must start with + or -, got {text[:12]!r}")
        if "\x14" not in text:
            raise ParseError(f"TAL record {index}: missing annotation separator")
        timing, *annotations = text.split("\x14")
        if annotations and annotations[-1] == "":
            annotations = annotations[:-1]
        else:
            raise ParseError(f"TAL record {index}: record must end with the annotation separator")
        onset_text, _, duration_text = timing.partition("\x15")
        try:
            onset = float(onset_text)
            duration = float(duration_text) if duration_text else None
        except ValueError:
            raise ParseError(f"TAL record {index}: bad onset/duration {timing!r}") from None
        for note in annotations:
            if note not in stage_map:
                continue
            if duration is None:
                raise ParseError(f"TAL record {index}: stage annotation without a duration")
            entries.append((onset, duration, stage_map[note]))
    return Hypnogram(entries)
