"""Synthetic activity generation, CERT-style ingestion, and windowed features.

Events are bucketed into contiguous fixed-duration windows (default one
hour) on a grid anchored at a global start time.  Each (user, window)
pair reduces to a 12-dimensional feature vector; per-user sequences of T
windows feed the encoder.  Users with fewer than T windows are padded at
the front with explicit all-zero windows and carry the pad count so the
encoder can skip those steps.

Timestamps are seconds since the epoch and are interpreted as local
time; off-hours means 00:00-06:00.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .arrayio import read_blob, write_blob
from .errors import ContractError, DataError
from .numerics import SeededRng

EVENT_KINDS = (
    "logon", "logoff", "file-access", "removable-device",
    "process-exec", "command", "email", "http",
)

FEATURE_NAMES = (
    "logon_count",
    "offhours_logon_count",
    "distinct_hosts",
    "file_access_count",
    "file_read_write_ratio",
    "removable_device_events",
    "process_exec_count",
    "distinct_commands",
    "email_count",
    "email_external_ratio",
    "http_count",
    "bytes_moved_log",
)

N_FEATURES = len(FEATURE_NAMES)
DEFAULT_WINDOW_SECONDS = 86400.0  # one-day windows; T=100 spans ~3 months
OFF_HOURS_END = 6  # off-hours = [00:00, 06:00)

SCENARIOS = ("data-theft", "privilege-abuse", "sabotage")

# Per-scenario intensity multipliers (>= 1) keyed by the mechanism they
# drive.  Scenarios deliberately touch several feature families at once:
# exfiltration involves staging reads and web uploads, privilege abuse
# spills into odd hours, sabotage moves data around.
DEFAULT_INTENSITIES = {
    "data-theft": {"removable_device": 8.0, "bytes_moved": 8.0, "offhours_logon": 6.0,
                   "file_access": 4.0, "http": 3.0},
    "privilege-abuse": {"distinct_hosts": 5.0, "process_exec": 6.0,
                        "distinct_commands": 5.0, "file_access": 3.0,
                        "offhours_logon": 3.0},
    "sabotage": {"file_access": 6.0, "file_write_share": 5.0, "process_exec": 5.0,
                 "bytes_moved": 4.0, "http": 3.0},
}


@dataclass(frozen=True, slots=True)
class ActivityRecord:
    user: str
    timestamp: float
    kind: str
    attributes: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise DataError(f"unknown event kind {self.kind!r}")
        if not math.isfinite(self.timestamp):
            raise DataError("timestamp must be finite")


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str
    onset: int
    duration: int
    intensity: dict[str, float]

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ContractError(f"unknown scenario {self.scenario!r}")
        if self.onset < 0 or self.duration < 1:
            raise ContractError("onset must be >= 0 and duration >= 1")
        if any(v < 1.0 for v in self.intensity.values()):
            raise ContractError("intensity multipliers must be >= 1")


@dataclass
class BehaviorSequence:
    user: str
    features: np.ndarray  # (T, d), raw or standardized
    window_duration: float
    window_end: float
    n_pad: int = 0
    label: str = "benign"
    onset: int | None = None
    duration: int | None = None
    standardized: bool = False

    @property
    def t_len(self) -> int:
        return self.features.shape[0]


@dataclass
class FeatureScaler:
    """Per-feature standardization statistics, fit on training data only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, sequences: list[BehaviorSequence]) -> "FeatureScaler":
        rows = [s.features[s.n_pad:] for s in sequences]
        if not rows:
            raise ContractError("cannot fit a scaler on an empty corpus")
        stacked = np.concatenate(rows, axis=0)
        mean = stacked.mean(axis=0)
        std = np.sqrt(stacked.var(axis=0))
        std = np.where(std < 1e-12, 1.0, std)
        return cls(mean=mean, std=std)

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std

    def apply(self, seq: BehaviorSequence) -> BehaviorSequence:
        if seq.standardized:
            raise ContractError("sequence is already standardized")
        return replace(seq, features=self.transform(seq.features), standardized=True)


# -- feature extraction -------------------------------------------------------


def _hour_of_day(ts: float) -> int:
    return int((ts % 86400.0) // 3600.0)


def window_features(events: list[ActivityRecord]) -> np.ndarray:
    """Reduce the events of one (user, window) bucket to the 12 features."""
    logons = offhours = files = reads = writes = device = procs = 0
    emails = external = https = 0
    hosts: set[str] = set()
    commands: set[str] = set()
    total_bytes = 0.0
    for ev in events:
        attrs = ev.attributes
        if "host" in attrs:
            hosts.add(attrs["host"])
        if "bytes" in attrs:
            total_bytes += float(attrs["bytes"])
        if ev.kind == "logon":
            logons += 1
            if _hour_of_day(ev.timestamp) < OFF_HOURS_END:
                offhours += 1
        elif ev.kind == "file-access":
            files += 1
            mode = attrs.get("mode")
            if mode == "read":
                reads += 1
            elif mode == "write":
                writes += 1
        elif ev.kind == "removable-device":
            device += 1
        elif ev.kind == "process-exec":
            procs += 1
        elif ev.kind == "command":
            if "cmd" in attrs:
                commands.add(attrs["cmd"])
        elif ev.kind == "email":
            emails += 1
            if attrs.get("external") == "1":
                external += 1
        elif ev.kind == "http":
            https += 1
    rw_total = reads + writes
    return np.array([
        logons,
        offhours,
        len(hosts),
        files,
        reads / rw_total if rw_total else 0.0,
        device,
        procs,
        len(commands),
        emails,
        external / emails if emails else 0.0,
        https,
        math.log1p(total_bytes),
    ], dtype=np.float64)


def window_series(records: list[ActivityRecord], window_duration: float,
                  start_time: float | None = None,
                  ) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-user contiguous window features spanning each user's activity.

    Returns {user: (features (W, d), window_end_times (W,))} where W covers
    the user's first through last active window on the shared grid.  Every
    event lands in exactly one window.
    """
    if window_duration <= 0:
        raise ContractError("window duration must be positive")
    if not records:
        return {}
    t0 = start_time if start_time is not None else min(r.timestamp for r in records)
    t0 = math.floor(t0 / window_duration) * window_duration

    buckets: dict[str, dict[int, list[ActivityRecord]]] = {}
    for rec in records:
        idx = int((rec.timestamp - t0) // window_duration)
        buckets.setdefault(rec.user, {}).setdefault(idx, []).append(rec)

    out: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for user, by_window in buckets.items():
        lo, hi = min(by_window), max(by_window)
        n_windows = hi - lo + 1
        feats = np.zeros((n_windows, N_FEATURES))
        ends = np.empty(n_windows)
        for w in range(lo, hi + 1):
            if w in by_window:
                feats[w - lo] = window_features(by_window[w])
            ends[w - lo] = t0 + (w + 1) * window_duration
        out[user] = (feats, ends)
    return out


def extract_features(records: list[ActivityRecord], window_duration: float,
                     t_len: int, start_time: float | None = None,
                     ) -> list[BehaviorSequence]:
    """Per-user raw (unstandardized) sequences of exactly t_len windows.

    Users with a longer history keep their most recent t_len windows;
    shorter histories are front-padded with zero windows and flagged via
    n_pad.  Returns sequences ordered by user id.
    """
    series = window_series(records, window_duration, start_time)
    sequences = []
    for user in sorted(series):
        feats, ends = series[user]
        if feats.shape[0] >= t_len:
            window = feats[-t_len:]
            n_pad = 0
        else:
            n_pad = t_len - feats.shape[0]
            window = np.vstack([np.zeros((n_pad, N_FEATURES)), feats])
        sequences.append(BehaviorSequence(
            user=user, features=window, window_duration=window_duration,
            window_end=float(ends[-1]), n_pad=n_pad))
    return sequences


# -- synthetic generation -----------------------------------------------------

# Smooth diurnal curve: a sine bump over the 07:00-23:00 span so adjacent
# hours differ gradually instead of stepping.  Session-driven kinds
# (logons) nearly vanish at night; background activity (automation, sync
# jobs, queued mail) keeps a substantial night floor.
_STRONG_KINDS = frozenset({"logon", "logoff"})


def _diurnal(hour: int, kind: str = "logon") -> float:
    h = hour % 24
    bump = math.sin(math.pi * (h - 7.0) / 16.0) if 7 <= h < 23 else 0.0
    if kind in _STRONG_KINDS:
        return 0.06 + 0.94 * bump
    return 0.5 + 0.5 * bump


@dataclass
class UserProfile:
    """Per-user benign rate parameters, sampled once and then fixed."""

    user: str
    day_rates: dict[str, float]
    hosts: list[str]
    commands: list[str]
    read_share: float
    external_share: float

    def rate(self, kind: str, hour: int) -> float:
        return self.day_rates[kind] * _diurnal(hour, kind)


# Peak-hour event rates per hour.  Wide ranges give users distinctive
# profiles (between-user spread dominates the per-feature variance), and
# high absolute rates keep relative Poisson noise per window small.
# Peak-hour base rates; each user's rate is the base times a role
# multiplier times a mild personal jitter, so the population forms
# distinct job-function clusters with individual variation inside each.
# Events are generated on an hourly grid regardless of window duration.
_BASE_RATES = {
    "logon": 0.2,
    "logoff": 0.2,
    "file-access": 0.65,
    "removable-device": 0.015,
    "process-exec": 0.45,
    "command": 0.3,
    "email": 0.22,
    "http": 0.9,
}

ROLES = ("dev", "analyst", "sales", "admin", "support")

_ROLE_RATE_MULT = {
    "dev": {"logon": 1.0, "logoff": 1.0, "file-access": 1.2, "removable-device": 1.0,
            "process-exec": 2.0, "command": 2.2, "email": 0.5, "http": 0.8},
    "analyst": {"logon": 1.0, "logoff": 1.0, "file-access": 2.2, "removable-device": 1.0,
                "process-exec": 0.8, "command": 0.7, "email": 1.0, "http": 1.8},
    "sales": {"logon": 1.6, "logoff": 1.6, "file-access": 0.5, "removable-device": 1.0,
              "process-exec": 0.4, "command": 0.3, "email": 2.2, "http": 1.6},
    "admin": {"logon": 1.3, "logoff": 1.3, "file-access": 0.9, "removable-device": 2.0,
              "process-exec": 1.7, "command": 1.8, "email": 0.6, "http": 0.6},
    "support": {"logon": 1.8, "logoff": 1.8, "file-access": 0.7, "removable-device": 1.0,
                "process-exec": 0.6, "command": 0.5, "email": 1.8, "http": 1.1},
}

_ROLE_READ_SHARE = {"dev": (0.55, 0.75), "analyst": (0.8, 0.95), "sales": (0.7, 0.9),
                    "admin": (0.5, 0.7), "support": (0.65, 0.85)}
_ROLE_EXTERNAL_SHARE = {"dev": (0.05, 0.15), "analyst": (0.1, 0.25), "sales": (0.4, 0.6),
                        "admin": (0.02, 0.1), "support": (0.25, 0.45)}
_ROLE_HOSTS = {"dev": (1, 3), "analyst": (1, 2), "sales": (1, 2), "admin": (5, 9),
               "support": (2, 4)}
_ROLE_CMDS = {"dev": (8, 14), "analyst": (3, 6), "sales": (2, 4), "admin": (9, 15),
              "support": (3, 6)}


def _role_of(idx: int) -> str:
    return ROLES[idx % len(ROLES)]


def _sample_profile(user: str, idx: int, rng: SeededRng) -> UserProfile:
    role = _role_of(idx)
    mult = _ROLE_RATE_MULT[role]
    rates = {}
    for kind, base in _BASE_RATES.items():
        jitter = 0.7 + 0.6 * rng.uniform()
        rates[kind] = base * mult[kind] * jitter
    h_lo, h_hi = _ROLE_HOSTS[role]
    n_hosts = h_lo + rng.index_below(h_hi - h_lo + 1)
    hosts = [f"pc-{idx:04d}-{j}" for j in range(n_hosts)]
    c_lo, c_hi = _ROLE_CMDS[role]
    n_cmds = c_lo + rng.index_below(c_hi - c_lo + 1)
    commands = [f"cmd{(idx * 13 + j) % 200:03d}" for j in range(n_cmds)]
    r_lo, r_hi = _ROLE_READ_SHARE[role]
    e_lo, e_hi = _ROLE_EXTERNAL_SHARE[role]
    return UserProfile(
        user=user, day_rates=rates, hosts=hosts, commands=commands,
        read_share=r_lo + (r_hi - r_lo) * rng.uniform(),
        external_share=e_lo + (e_hi - e_lo) * rng.uniform(),
    )


def default_scenario(scenario: str, t_len: int, rng: SeededRng,
                     intensity_scale: float = 1.0) -> ScenarioSpec:
    """Draw onset/duration for a scenario; intensities scaled from defaults.

    intensity_scale=1 gives the default multipliers; 0 collapses every
    multiplier to 1 (no behavioral change), >1 amplifies.
    """
    duration = min(8 + rng.index_below(9), max(1, t_len // 2))  # 8..16 windows
    lo = min(int(t_len * 0.3), t_len - duration)
    hi = t_len - duration
    onset = lo + rng.index_below(hi - lo + 1)
    base = DEFAULT_INTENSITIES[scenario]
    intensity = {k: 1.0 + (v - 1.0) * intensity_scale for k, v in base.items()}
    return ScenarioSpec(scenario=scenario, onset=onset, duration=duration,
                        intensity=intensity)


def _scenario_rates(profile: UserProfile, spec: ScenarioSpec, hour: int) -> dict[str, float]:
    """Benign rates perturbed by the active scenario for one window.

    Boosts are additive in population-base units so the anomaly is the
    same absolute size no matter how quiet the user's own role is, and
    every perturbation vanishes at intensity 1.
    """
    rates = {kind: profile.rate(kind, hour) for kind in EVENT_KINDS}
    intensity = spec.intensity

    def boost(kind: str, key: str, scale: float = 1.0) -> None:
        gain = intensity.get(key, 1.0) - 1.0
        if gain > 0.0:
            rates[kind] += gain * scale * _BASE_RATES[kind]

    if "removable_device" in intensity:
        gain = intensity["removable_device"] - 1.0
        rates["removable-device"] += gain * (rates["removable-device"] + 0.2)
    if "offhours_logon" in intensity and hour < OFF_HOURS_END:
        gain = intensity["offhours_logon"] - 1.0
        rates["logon"] += 0.08 * gain
        rates["file-access"] += 0.1 * gain * _BASE_RATES["file-access"]
    boost("file-access", "file_access")
    boost("process-exec", "process_exec")
    boost("command", "distinct_commands")
    boost("http", "http")
    if "distinct_hosts" in intensity:
        rates["logon"] += min(intensity["distinct_hosts"] - 1.0, 2.0) * _BASE_RATES["logon"]
    return rates


@dataclass
class Corpus:
    sequences: list[BehaviorSequence]
    records: list[ActivityRecord]
    t_len: int
    window_duration: float
    seed: int

    @property
    def users(self) -> list[str]:
        return [s.user for s in self.sequences]


def generate(population: int, insider_fraction: float, rng: SeededRng,
             t_len: int = 100, window_duration: float = DEFAULT_WINDOW_SECONDS,
             start_time: float = 0.0, intensity_scale: float = 1.0,
             ) -> Corpus:
    """Labeled synthetic corpus plus the raw event log that reproduces it.

    The first floor(insider_fraction * population) users (by index) become
    insiders; each is assigned a scenario round-robin and a seeded
    onset/duration.  Benign behavior for a given user is identical across
    intensity scales because attack perturbations draw from separate
    streams.
    """
    if not (0.0 <= insider_fraction <= 1.0):
        raise ContractError(f"insider fraction must be in [0, 1], got {insider_fraction}")
    if population < 1:
        raise ContractError("population must be at least 1")

    n_insiders = int(math.floor(insider_fraction * population))
    records: list[ActivityRecord] = []
    labeled: list[tuple[str, str, int | None, int | None]] = []

    for idx in range(population):
        user = f"u{idx:04d}"
        profile = _sample_profile(user, idx, rng.derive(10_000 + idx))
        spec = None
        if idx < n_insiders:
            scenario = SCENARIOS[idx % len(SCENARIOS)]
            spec = default_scenario(scenario, t_len, rng.derive(30_000 + idx),
                                    intensity_scale=intensity_scale)
        records.extend(_user_events(profile, idx, spec, t_len, window_duration,
                                    start_time, rng))
        if spec is None:
            labeled.append((user, "benign", None, None))
        else:
            labeled.append((user, spec.scenario, spec.onset, spec.duration))

    records.sort(key=lambda r: (r.timestamp, r.user, r.kind))
    sequences = extract_features(records, window_duration, t_len, start_time=start_time)
    by_user = {s.user: s for s in sequences}
    out = []
    for user, label, onset, duration in labeled:
        if user not in by_user:
            # a user with zero events still needs a (fully padded) sequence
            by_user[user] = BehaviorSequence(
                user=user, features=np.zeros((t_len, N_FEATURES)),
                window_duration=window_duration,
                window_end=start_time + t_len * window_duration, n_pad=t_len)
        seq = by_user[user]
        seq.label, seq.onset, seq.duration = label, onset, duration
        out.append(seq)
    return Corpus(sequences=out, records=records,
                  t_len=t_len, window_duration=window_duration, seed=rng.seed)


def _user_events(profile: UserProfile, idx: int, spec: ScenarioSpec | None,
                 t_len: int, window_duration: float, start_time: float,
                 rng: SeededRng) -> list[ActivityRecord]:
    """Hourly Poisson event generation spanning t_len windows.

    Hourly counts for all (hour, kind) cells are drawn in one vectorized
    pass per stream.  Attack perturbations draw from a separate stream,
    so a user's benign activity is bitwise identical whether or not a
    scenario is active.
    """
    benign_rng = rng.derive(20_000 + idx)
    attack_rng = rng.derive(40_000 + idx)
    events: list[ActivityRecord] = []
    total_hours = math.ceil(t_len * window_duration / 3600.0)

    hours = np.arange(total_hours)
    hod = ((start_time + hours * 3600.0) % 86400.0 // 3600.0).astype(np.int64)
    base = np.empty((total_hours, len(EVENT_KINDS)))
    for j, kind in enumerate(EVENT_KINDS):
        factors = np.array([_diurnal(h, kind) for h in range(24)])
        base[:, j] = profile.day_rates[kind] * factors[hod]
    counts = benign_rng.poisson(base)
    for h, j in zip(*np.nonzero(counts)):
        h_start = start_time + float(h) * 3600.0
        events.extend(_make_events(profile, EVENT_KINDS[j], int(counts[h, j]),
                                   h_start, 3600.0, benign_rng, spec=None))

    if spec is not None:
        in_attack = (hours * 3600.0 // window_duration >= spec.onset) & \
                    (hours * 3600.0 // window_duration < spec.onset + spec.duration)
        attack_hours = hours[in_attack]
        extra = np.zeros((attack_hours.shape[0], len(EVENT_KINDS)))
        for row, h in enumerate(attack_hours):
            hour = int(hod[h])
            perturbed = _scenario_rates(profile, spec, hour)
            for j, kind in enumerate(EVENT_KINDS):
                extra[row, j] = max(0.0, perturbed[kind] - base[h, j])
        extra_counts = attack_rng.poisson(extra)
        for row, j in zip(*np.nonzero(extra_counts)):
            h = int(attack_hours[row])
            h_start = start_time + h * 3600.0
            events.extend(_make_events(profile, EVENT_KINDS[j],
                                       int(extra_counts[row, j]),
                                       h_start, 3600.0, attack_rng, spec=spec))
    return events


_BYTES_LOC = {"file-access": 9.0, "removable-device": 13.0, "http": 7.0, "email": 10.0}


def _make_events(profile: UserProfile, kind: str, count: int, w_start: float,
                 window_duration: float, rng: SeededRng,
                 spec: ScenarioSpec | None) -> list[ActivityRecord]:
    intensity = spec.intensity if spec is not None else {}
    out = []
    for _ in range(count):
        ts = w_start + rng.uniform() * window_duration
        attrs: dict[str, str] = {}
        if kind in ("logon", "logoff", "file-access", "process-exec"):
            hosts = profile.hosts
            extra_hosts = int(round(intensity.get("distinct_hosts", 1.0))) - 1
            if extra_hosts > 0:
                hosts = hosts + [f"srv-{j:03d}" for j in range(extra_hosts)]
            attrs["host"] = hosts[rng.index_below(len(hosts))]
        if kind in _BYTES_LOC:
            scale = intensity.get("bytes_moved", 1.0)
            attrs["bytes"] = str(int(scale * math.exp(_BYTES_LOC[kind] + rng.normal())))
        if kind == "file-access":
            write_share = 1.0 - profile.read_share
            if "file_write_share" in intensity:
                write_share = min(0.95, write_share * intensity["file_write_share"])
            attrs["mode"] = "write" if rng.uniform() < write_share else "read"
        if kind == "command":
            cmds = profile.commands
            extra_cmds = int(2 * (intensity.get("distinct_commands", 1.0) - 1.0))
            if extra_cmds > 0:
                cmds = cmds + [f"cmd{(199 - j) % 200:03d}" for j in range(extra_cmds)]
            attrs["cmd"] = cmds[rng.index_below(len(cmds))]
        if kind == "email":
            attrs["external"] = "1" if rng.uniform() < profile.external_share else "0"
        out.append(ActivityRecord(user=profile.user, timestamp=ts, kind=kind,
                                  attributes=attrs))
    return out


# -- corpus persistence -------------------------------------------------------


def save_corpus(corpus: Corpus, directory: Path | str) -> str:
    """Write sequences.bin, labels.csv, and events.csv; returns the digest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n = len(corpus.sequences)
    t_len = corpus.t_len
    feats = np.stack([s.features for s in corpus.sequences])
    n_pad = np.array([float(s.n_pad) for s in corpus.sequences])
    ends = np.array([s.window_end for s in corpus.sequences])
    header = {
        "schema": "corpus",
        "schema_version": 1,
        "users": corpus.users,
        "t_len": t_len,
        "n_features": N_FEATURES,
        "window_duration": corpus.window_duration,
        "seed": corpus.seed,
    }
    digest = write_blob(directory / "sequences.bin", header,
                        {"features": feats, "n_pad": n_pad, "window_end": ends})
    with open(directory / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "label", "onset", "duration"])
        for s in corpus.sequences:
            writer.writerow([s.user, s.label,
                             "" if s.onset is None else s.onset,
                             "" if s.duration is None else s.duration])
    with open(directory / "events.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "timestamp", "kind", "attributes"])
        for rec in corpus.records:
            attrs = ";".join(f"{k}={v}" for k, v in sorted(rec.attributes.items()))
            writer.writerow([rec.user, repr(rec.timestamp), rec.kind, attrs])
    return digest


def load_corpus(directory: Path | str) -> Corpus:
    directory = Path(directory)
    header, arrays, _ = read_blob(directory / "sequences.bin")
    if header.get("schema") != "corpus":
        raise DataError(f"{directory}: sequences.bin is not a corpus file")
    labels: dict[str, tuple[str, int | None, int | None]] = {}
    labels_path = directory / "labels.csv"
    if labels_path.exists():
        with open(labels_path, newline="") as fh:
            for row in csv.DictReader(fh):
                onset = int(row["onset"]) if row["onset"] else None
                duration = int(row["duration"]) if row["duration"] else None
                labels[row["user"]] = (row["label"], onset, duration)
    sequences = []
    for i, user in enumerate(header["users"]):
        label, onset, duration = labels.get(user, ("benign", None, None))
        sequences.append(BehaviorSequence(
            user=user,
            features=arrays["features"][i],
            window_duration=header["window_duration"],
            window_end=float(arrays["window_end"][i]),
            n_pad=int(arrays["n_pad"][i]),
            label=label, onset=onset, duration=duration))
    records = []
    events_path = directory / "events.csv"
    if events_path.exists():
        records = load_raw_log(events_path)
    return Corpus(sequences=sequences, records=records,
                  t_len=header["t_len"], window_duration=header["window_duration"],
                  seed=header.get("seed", 0))


def load_raw_log(path: Path | str) -> list[ActivityRecord]:
    """Parse the raw event CSV (user,timestamp,kind,attributes)."""
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            attrs = {}
            if row["attributes"]:
                for pair in row["attributes"].split(";"):
                    key, _, value = pair.partition("=")
                    attrs[key] = value
            records.append(ActivityRecord(
                user=row["user"], timestamp=float(row["timestamp"]),
                kind=row["kind"], attributes=attrs))
    return records


# -- CERT r6.2 ingestion ------------------------------------------------------

# Column layouts of the CERT r6.2 per-source CSVs we consume.  Dates are
# "%m/%d/%Y %H:%M:%S".  Extra columns are ignored.
CERT_SOURCES = {
    "logon.csv": ("logon", ["id", "date", "user", "pc", "activity"]),
    "device.csv": ("removable-device", ["id", "date", "user", "pc", "activity"]),
    "file.csv": ("file-access", ["id", "date", "user", "pc", "filename"]),
    "email.csv": ("email", ["id", "date", "user", "pc", "to", "from"]),
    "http.csv": ("http", ["id", "date", "user", "pc", "url"]),
}

_INTERNAL_DOMAIN = "@dtaa.com"


def _parse_cert_date(text: str) -> float:
    from datetime import datetime, timezone

    dt = datetime.strptime(text, "%m/%d/%Y %H:%M:%S")
    return dt.replace(tzinfo=timezone.utc).timestamp()


def ingest_cert(directory: Path | str) -> tuple[list[ActivityRecord], int]:
    """Read CERT r6.2 CSVs into ActivityRecords.

    Malformed rows are skipped and counted, never fatal.  Returns
    (records, malformed_count).
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"CERT directory not found: {directory}")
    records: list[ActivityRecord] = []
    malformed = 0
    found_any = False
    for filename, (default_kind, _) in CERT_SOURCES.items():
        path = directory / filename
        if not path.exists():
            continue
        found_any = True
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                try:
                    ts = _parse_cert_date(row["date"])
                    user = row["user"]
                    if not user:
                        raise ValueError("empty user")
                except (KeyError, ValueError, TypeError):
                    malformed += 1
                    continue
                kind = default_kind
                attrs: dict[str, str] = {}
                if row.get("pc"):
                    attrs["host"] = row["pc"]
                activity = (row.get("activity") or "").strip().lower()
                if filename == "logon.csv" and activity == "logoff":
                    kind = "logoff"
                if filename == "file.csv":
                    if any(w in activity for w in ("write", "copy", "delete")) or \
                            (row.get("to_removable_media") or "").lower() == "true":
                        attrs["mode"] = "write"
                    else:
                        attrs["mode"] = "read"
                    if row.get("filename"):
                        attrs["path"] = row["filename"]
                if filename == "email.csv":
                    to = row.get("to") or ""
                    external = any(addr and _INTERNAL_DOMAIN not in addr
                                   for addr in to.split(";"))
                    attrs["external"] = "1" if external else "0"
                    if row.get("size"):
                        attrs["bytes"] = row["size"]
                if filename == "http.csv" and row.get("url"):
                    attrs["url"] = row["url"]
                records.append(ActivityRecord(user=user, timestamp=ts, kind=kind,
                                              attributes=attrs))
    if not found_any:
        raise DataError(f"no CERT source files in {directory} "
                        f"(expected any of {', '.join(CERT_SOURCES)})")
    if not records:
        raise DataError(f"zero parseable rows in {directory}")
    records.sort(key=lambda r: (r.timestamp, r.user))
    return records, malformed
