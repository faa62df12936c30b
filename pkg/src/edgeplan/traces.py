"""Trace, fleet, and container-catalog data model.

Ingests the canonical CSV formats, emits them back in canonical byte-stable
form, and generates deterministic synthetic traces (diurnal sinusoid plus
Gaussian noise plus multiplicative burst hours) for experiments.
"""

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

TIMESTAMP_FMT = "%Y-%m-%dT%H:%M:%SZ"
TRACE_HEADER = "provider_id,timestamp,bandwidth_mbps"
FLEET_HEADER = "server_id,bandwidth_mbps,cpu_cores,memory_gb,disk_gb,energy_cost_per_hour"
CATALOG_HEADER = "flavor_id,cpu_cores,memory_gb,disk_gb,bandwidth_mbps,cost_per_hour"

HOUR = timedelta(hours=1)


class TraceError(ValueError):
    """Malformed trace/fleet/catalog input (bad row, gap, duplicate, bad value)."""


def _check_hour_aligned(ts: datetime, what: str) -> None:
    if ts.tzinfo is None or ts.utcoffset() != timedelta(0):
        raise TraceError(f"{what} must be timezone-aware UTC, got {ts!r}")
    if ts.minute or ts.second or ts.microsecond:
        raise TraceError(f"{what} must be aligned to an hour boundary, got {ts!r}")


@dataclass(frozen=True, eq=False)
class TraceSeries:
    """One provider's hourly bandwidth samples, contiguous from `start`."""

    provider_id: str
    start: datetime
    samples: np.ndarray

    def __post_init__(self):
        _check_hour_aligned(self.start, f"start of {self.provider_id!r}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise TraceError(f"{self.provider_id!r}: samples must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(samples)):
            raise TraceError(f"{self.provider_id!r}: samples contain non-finite values")
        if np.any(samples < 0):
            raise TraceError(f"{self.provider_id!r}: samples contain negative values")
        samples = samples.copy()
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, TraceSeries):
            return NotImplemented
        return (
            self.provider_id == other.provider_id
            and self.start == other.start
            and np.array_equal(self.samples, other.samples)
        )

    def hour_at(self, index: int) -> datetime:
        return self.start + index * HOUR


@dataclass(frozen=True)
class ServerSpec:
    """An edge server: capacity in four dimensions plus hourly energy cost."""

    server_id: str
    bandwidth_capacity: float
    cpu_capacity: float
    memory_capacity: float
    disk_capacity: float
    energy_cost_per_hour: float

    def __post_init__(self):
        for name in ("bandwidth_capacity", "cpu_capacity", "memory_capacity", "disk_capacity"):
            if not getattr(self, name) > 0:
                raise TraceError(f"server {self.server_id!r}: {name} must be > 0")
        if self.energy_cost_per_hour < 0:
            raise TraceError(f"server {self.server_id!r}: energy_cost_per_hour must be >= 0")


@dataclass(frozen=True)
class ContainerFlavor:
    """A discrete container resource bundle selectable from the catalog."""

    flavor_id: str
    cpu: float
    memory: float
    disk: float
    bandwidth: float
    cost_per_hour: float

    def __post_init__(self):
        for name in ("cpu", "memory", "disk", "bandwidth", "cost_per_hour"):
            if not getattr(self, name) > 0:
                raise TraceError(f"flavor {self.flavor_id!r}: {name} must be > 0")


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic trace generator."""

    provider_count: int
    days: int
    base_level: float = 100.0
    diurnal_amplitude: float = 40.0
    noise_std: float = 5.0
    burst_probability: float = 0.0
    burst_multiplier: float = 1.0
    seed: int = 0
    start: datetime = field(default=datetime(2020, 12, 12, tzinfo=timezone.utc))

    def __post_init__(self):
        if self.provider_count < 1:
            raise ValueError("provider_count must be >= 1")
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if not 0.0 <= self.burst_probability <= 1.0:
            raise ValueError("burst_probability must be in [0, 1]")
        if self.burst_multiplier < 1.0:
            raise ValueError("burst_multiplier must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        _check_hour_aligned(self.start, "start")


def _format_float(x: float) -> str:
    # repr gives the shortest string that round-trips a 64-bit float
    return repr(float(x))


def _csv_safe(value: str, what: str) -> str:
    if any(c in value for c in ',"\r\n') or value == "":
        raise TraceError(f"{what} {value!r} is not representable in the canonical CSV")
    return value


def _parse_timestamp(text: str, line_no: int) -> datetime:
    try:
        ts = datetime.strptime(text, TIMESTAMP_FMT).replace(tzinfo=timezone.utc)
    except ValueError:
        raise TraceError(f"line {line_no}: bad timestamp {text!r}") from None
    if ts.minute or ts.second:
        raise TraceError(f"line {line_no}: timestamp {text!r} is not hour-aligned")
    return ts


def _parse_positive_float(text: str, line_no: int, what: str, allow_zero: bool = True) -> float:
    try:
        value = float(text)
    except ValueError:
        raise TraceError(f"line {line_no}: bad {what} {text!r}") from None
    if not math.isfinite(value):
        raise TraceError(f"line {line_no}: {what} must be finite, got {text!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise TraceError(f"line {line_no}: {what} must be {'>= 0' if allow_zero else '> 0'}, got {text!r}")
    return value


def _read_rows(text: str, header: str, what: str):
    """Yield (line_no, fields) for every data row, after validating the header."""
    reader = csv.reader(io.StringIO(text))
    n_cols = len(header.split(","))
    try:
        first = next(reader)
    except StopIteration:
        raise TraceError(f"{what}: empty input, expected header {header!r}") from None
    if first != header.split(","):
        raise TraceError(f"{what}: bad header {','.join(first)!r}, expected {header!r}")
    for line_no, fields in enumerate(reader, start=2):
        if not fields:
            continue
        if len(fields) != n_cols:
            raise TraceError(f"line {line_no}: expected {n_cols} fields, got {len(fields)}")
        yield line_no, fields


def parse_trace_csv(text: str) -> list[TraceSeries]:
    """Parse the canonical trace CSV into one TraceSeries per provider.

    Rows may arrive in any order; they are grouped by provider and sorted by
    timestamp. Raises TraceError on malformed rows (with the line number),
    duplicate timestamps, non-hourly gaps, or negative/non-finite bandwidth.
    """
    by_provider: dict[str, list[tuple[datetime, float]]] = {}
    for line_no, (provider_id, ts_text, bw_text) in _read_rows(text, TRACE_HEADER, "trace CSV"):
        if not provider_id:
            raise TraceError(f"line {line_no}: empty provider_id")
        ts = _parse_timestamp(ts_text, line_no)
        bw = _parse_positive_float(bw_text, line_no, "bandwidth")
        by_provider.setdefault(provider_id, []).append((ts, bw))

    traces = []
    for provider_id in sorted(by_provider):
        rows = sorted(by_provider[provider_id], key=lambda r: r[0])
        for (prev_ts, _), (ts, _) in zip(rows, rows[1:]):
            if ts == prev_ts:
                raise TraceError(f"provider {provider_id!r}: duplicate timestamp {ts.strftime(TIMESTAMP_FMT)}")
            if ts - prev_ts != HOUR:
                missing = (prev_ts + HOUR).strftime(TIMESTAMP_FMT)
                raise TraceError(f"provider {provider_id!r}: gap in hourly samples, missing {missing}")
        traces.append(
            TraceSeries(provider_id, rows[0][0], np.array([bw for _, bw in rows]))
        )
    return traces


def emit_trace_csv(traces: list[TraceSeries]) -> str:
    """Emit traces in canonical form: providers sorted by id, rows by time."""
    lines = [TRACE_HEADER]
    for series in sorted(traces, key=lambda s: s.provider_id):
        pid = _csv_safe(series.provider_id, "provider_id")
        for i, value in enumerate(series.samples):
            ts = series.hour_at(i).strftime(TIMESTAMP_FMT)
            lines.append(f"{pid},{ts},{_format_float(value)}")
    return "\n".join(lines) + "\n"


def parse_fleet_csv(text: str) -> list[ServerSpec]:
    """Parse the fleet CSV into ServerSpec records, sorted by server_id."""
    servers = {}
    for line_no, fields in _read_rows(text, FLEET_HEADER, "fleet CSV"):
        server_id = fields[0]
        if server_id in servers:
            raise TraceError(f"line {line_no}: duplicate server_id {server_id!r}")
        bw, cpu, mem, disk = (
            _parse_positive_float(fields[i], line_no, name, allow_zero=False)
            for i, name in ((1, "bandwidth_mbps"), (2, "cpu_cores"), (3, "memory_gb"), (4, "disk_gb"))
        )
        energy = _parse_positive_float(fields[5], line_no, "energy_cost_per_hour")
        servers[server_id] = ServerSpec(server_id, bw, cpu, mem, disk, energy)
    return [servers[sid] for sid in sorted(servers)]


def emit_fleet_csv(fleet: list[ServerSpec]) -> str:
    lines = [FLEET_HEADER]
    for s in sorted(fleet, key=lambda s: s.server_id):
        sid = _csv_safe(s.server_id, "server_id")
        values = (s.bandwidth_capacity, s.cpu_capacity, s.memory_capacity, s.disk_capacity, s.energy_cost_per_hour)
        lines.append(sid + "," + ",".join(_format_float(v) for v in values))
    return "\n".join(lines) + "\n"


def parse_catalog_csv(text: str) -> list[ContainerFlavor]:
    """Parse the flavor-catalog CSV, sorted by flavor_id."""
    flavors = {}
    for line_no, fields in _read_rows(text, CATALOG_HEADER, "catalog CSV"):
        flavor_id = fields[0]
        if flavor_id in flavors:
            raise TraceError(f"line {line_no}: duplicate flavor_id {flavor_id!r}")
        cpu, mem, disk, bw, cost = (
            _parse_positive_float(fields[i], line_no, name, allow_zero=False)
            for i, name in (
                (1, "cpu_cores"), (2, "memory_gb"), (3, "disk_gb"), (4, "bandwidth_mbps"), (5, "cost_per_hour"),
            )
        )
        flavors[flavor_id] = ContainerFlavor(flavor_id, cpu, mem, disk, bw, cost)
    return [flavors[fid] for fid in sorted(flavors)]


def emit_catalog_csv(catalog: list[ContainerFlavor]) -> str:
    lines = [CATALOG_HEADER]
    for f in sorted(catalog, key=lambda f: f.flavor_id):
        fid = _csv_safe(f.flavor_id, "flavor_id")
        values = (f.cpu, f.memory, f.disk, f.bandwidth, f.cost_per_hour)
        lines.append(fid + "," + ",".join(_format_float(v) for v in values))
    return "\n".join(lines) + "\n"


def generate_synthetic_traces(cfg: SynthConfig) -> list[TraceSeries]:
    """Generate `provider_count` deterministic hourly traces of `days` days.

    Each provider p gets a phase-shifted diurnal sinusoid around the base
    level, plus Gaussian noise, clipped at zero. Each hour is independently a
    burst with probability `burst_probability`, which multiplies the value by
    `burst_multiplier`. Equal configs (including seed) give equal outputs.
    """
    rng = np.random.default_rng(cfg.seed)
    n_hours = cfg.days * 24
    hour_of_day = (cfg.start.hour + np.arange(n_hours)) % 24
    width = len(str(cfg.provider_count - 1))
    traces = []
    for p in range(cfg.provider_count):
        phase = 2.0 * np.pi * p / cfg.provider_count
        values = cfg.base_level + cfg.diurnal_amplitude * np.sin(2.0 * np.pi * hour_of_day / 24.0 + phase)
        values = values + rng.normal(0.0, cfg.noise_std, n_hours)
        values = np.maximum(values, 0.0)
        bursts = rng.random(n_hours) < cfg.burst_probability
        values[bursts] *= cfg.burst_multiplier
        traces.append(TraceSeries(f"p{p:0{width}d}", cfg.start, values))
    return traces


def slice_hours(series: TraceSeries, from_hour: int, to_hour: int) -> TraceSeries:
    """Contiguous sub-series covering hours [from_hour, to_hour)."""
    if not 0 <= from_hour < to_hour <= len(series):
        raise IndexError(
            f"slice [{from_hour}, {to_hour}) out of range for series of length {len(series)}"
        )
    return TraceSeries(
        series.provider_id,
        series.start + from_hour * HOUR,
        series.samples[from_hour:to_hour],
    )
