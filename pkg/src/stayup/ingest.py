"""Event-log ingestion: CSV parsing, bedtime extraction, count aggregation,
and raw behavioral features.

A "night" runs from the configured boundary (noon by default) to the next
day's boundary, so signals after midnight attach to the preceding evening.
The bedtime of a night is the end time of the last network session falling
inside the observation window (21:00 plus 16 half-hour bins by default);
bins are half-open, so a signal exactly on a boundary lands in the later bin.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

APP_CATEGORIES = ("game", "video", "other")
VENUES = ("canteen", "bath", "other")
GENDERS = ("male", "female")
COHORTS = ("freshman", "sophomore", "junior")

DEFAULT_MIN_NIGHTS = 20
DEFAULT_BREAKFAST_WINDOW = (time(5, 0), time(9, 30))
DEFAULT_GPA_MAX = 5.0

CSV_SCHEMAS = {
    "net_sessions": ["student_id", "end_time", "app_category", "duration_minutes"],
    "transactions": ["student_id", "time", "venue", "amount"],
    "borrows": ["student_id", "time"],
    "grades": ["student_id", "gpa"],
    "demographics": ["student_id", "gender", "cohort"],
}


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class NetSessionRecord:
    student_id: str
    end_time: datetime
    app_category: str
    duration_minutes: int


@dataclass(frozen=True)
class TransactionRecord:
    student_id: str
    time: datetime
    venue: str
    amount: float


@dataclass(frozen=True)
class BorrowRecord:
    student_id: str
    time: datetime


@dataclass(frozen=True)
class GradeRecord:
    student_id: str
    gpa: float


@dataclass(frozen=True)
class DemographicRecord:
    student_id: str
    gender: str
    cohort: str


@dataclass(frozen=True)
class NightWindowConfig:
    window_start: time = time(21, 0)
    bin_minutes: int = 30
    bin_count: int = 16
    night_boundary: time = time(12, 0)

    def __post_init__(self):
        if self.bin_minutes <= 0 or self.bin_count <= 0:
            raise ValueError("bin geometry must be positive")
        start = self.window_start.hour * 60 + self.window_start.minute
        boundary = self.night_boundary.hour * 60 + self.night_boundary.minute
        if start < boundary:
            raise ValueError("window must start at or after the night boundary")
        if start + self.window_minutes > 24 * 60 + boundary:
            raise ValueError("window must end before the next night boundary")

    @property
    def window_minutes(self) -> int:
        return self.bin_minutes * self.bin_count

    def night_of(self, dt: datetime) -> date:
        """Calendar date of the night a timestamp belongs to."""
        if dt.time() >= self.night_boundary:
            return dt.date()
        return dt.date() - timedelta(days=1)

    def locate(self, dt: datetime) -> tuple[date, int | None]:
        """Night date plus bin index, or None when outside the window."""
        night = self.night_of(dt)
        start = datetime.combine(night, self.window_start)
        offset = (dt - start).total_seconds() / 60.0
        if 0 <= offset < self.window_minutes:
            return night, int(offset // self.bin_minutes)
        return night, None

    def bin_start(self, night: date, bin_index: int) -> datetime:
        return datetime.combine(night, self.window_start) + timedelta(
            minutes=bin_index * self.bin_minutes
        )


@dataclass(frozen=True)
class BedtimeObservation:
    student_id: str
    night_index: int
    bin_index: int


@dataclass
class SleepCountVector:
    student_id: str
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1 or np.any(self.counts < 0):
            raise ValueError("counts must be a non-negative vector")


@dataclass
class RawFeatureRecord:
    student_id: str
    books_borrowed: int
    mean_daily_surf_minutes: float
    game_minutes: float
    video_minutes: float
    breakfast_count: int
    bath_interval_variance: float | None  # None when fewer than 2 bath events
    mean_daily_spend: float
    gpa: float
    gender: str


@dataclass
class ParseReport:
    loaded: dict[str, int] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)
    reasons: dict[str, dict[str, int]] = field(default_factory=dict)

    def note_skip(self, kind: str, reason: str):
        self.skipped[kind] = self.skipped.get(kind, 0) + 1
        self.reasons.setdefault(kind, {})
        self.reasons[kind][reason] = self.reasons[kind].get(reason, 0) + 1


@dataclass
class EventStore:
    sessions: list[NetSessionRecord]
    transactions: list[TransactionRecord]
    borrows: list[BorrowRecord]
    grades: dict[str, GradeRecord]
    demographics: dict[str, DemographicRecord]
    report: ParseReport


@dataclass(frozen=True)
class LogPaths:
    net_sessions: Path
    transactions: Path
    borrows: Path
    grades: Path
    demographics: Path

    @classmethod
    def from_dir(cls, directory) -> "LogPaths":
        d = Path(directory)
        return cls(*(d / f"{kind}.csv" for kind in CSV_SCHEMAS))

    def as_dict(self) -> dict[str, Path]:
        return {kind: getattr(self, kind) for kind in CSV_SCHEMAS}


def _parse_timestamp(text: str) -> datetime:
    try:
        return datetime.fromisoformat(text.strip())
    except ValueError:
        raise ValueError(f"bad timestamp {text!r}") from None


def _read_rows(path: Path, kind: str):
    columns = CSV_SCHEMAS[kind]
    if not path.exists():
        raise IngestError(f"missing input file: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None or set(header) != set(columns):
            raise IngestError(
                f"{path}: header {header!r} does not match expected columns {columns}"
            )
        for line_no, row in enumerate(reader, start=2):
            yield line_no, row


def parse_logs(paths: LogPaths, strict: bool = False,
               gpa_max: float = DEFAULT_GPA_MAX) -> EventStore:
    """Load the five event-log CSVs.

    Malformed rows raise IngestError (with file and line) in strict mode and
    are skipped and counted otherwise. A student id that never appears in
    the demographics file is treated the same way.
    """
    report = ParseReport()
    mapping = paths.as_dict()

    def handle(kind: str, path: Path, line_no: int, reason: str):
        if strict:
            raise IngestError(f"{path}:{line_no}: {reason}")
        report.note_skip(kind, reason)

    demographics: dict[str, DemographicRecord] = {}
    path = mapping["demographics"]
    for line_no, row in _read_rows(path, "demographics"):
        sid = (row["student_id"] or "").strip()
        gender = (row["gender"] or "").strip()
        cohort = (row["cohort"] or "").strip()
        if not sid:
            handle("demographics", path, line_no, "empty student_id")
            continue
        if gender not in GENDERS:
            handle("demographics", path, line_no, f"bad gender {gender!r}")
            continue
        if cohort not in COHORTS:
            handle("demographics", path, line_no, f"bad cohort {cohort!r}")
            continue
        if sid in demographics:
            handle("demographics", path, line_no, f"duplicate student {sid}")
            continue
        demographics[sid] = DemographicRecord(sid, gender, cohort)
    report.loaded["demographics"] = len(demographics)

    def known(kind: str, path: Path, line_no: int, sid: str) -> bool:
        if sid in demographics:
            return True
        handle(kind, path, line_no, f"unknown student {sid}")
        return False

    sessions: list[NetSessionRecord] = []
    path = mapping["net_sessions"]
    for line_no, row in _read_rows(path, "net_sessions"):
        try:
            sid = (row["student_id"] or "").strip()
            end_time = _parse_timestamp(row["end_time"] or "")
            category = (row["app_category"] or "").strip()
            duration = int(row["duration_minutes"])
            if category not in APP_CATEGORIES:
                raise ValueError(f"bad app_category {category!r}")
            if duration < 0:
                raise ValueError("negative duration")
        except (ValueError, TypeError) as exc:
            handle("net_sessions", path, line_no, str(exc))
            continue
        if not known("net_sessions", path, line_no, sid):
            continue
        sessions.append(NetSessionRecord(sid, end_time, category, duration))
    report.loaded["net_sessions"] = len(sessions)

    transactions: list[TransactionRecord] = []
    path = mapping["transactions"]
    for line_no, row in _read_rows(path, "transactions"):
        try:
            sid = (row["student_id"] or "").strip()
            ts = _parse_timestamp(row["time"] or "")
            venue = (row["venue"] or "").strip()
            amount = float(row["amount"])
            if venue not in VENUES:
                raise ValueError(f"bad venue {venue!r}")
            if amount < 0:
                raise ValueError("negative amount")
        except (ValueError, TypeError) as exc:
            handle("transactions", path, line_no, str(exc))
            continue
        if not known("transactions", path, line_no, sid):
            continue
        transactions.append(TransactionRecord(sid, ts, venue, amount))
    report.loaded["transactions"] = len(transactions)

    borrows: list[BorrowRecord] = []
    path = mapping["borrows"]
    for line_no, row in _read_rows(path, "borrows"):
        try:
            sid = (row["student_id"] or "").strip()
            ts = _parse_timestamp(row["time"] or "")
        except (ValueError, TypeError) as exc:
            handle("borrows", path, line_no, str(exc))
            continue
        if not known("borrows", path, line_no, sid):
            continue
        borrows.append(BorrowRecord(sid, ts))
    report.loaded["borrows"] = len(borrows)

    grades: dict[str, GradeRecord] = {}
    path = mapping["grades"]
    for line_no, row in _read_rows(path, "grades"):
        try:
            sid = (row["student_id"] or "").strip()
            gpa = float(row["gpa"])
            if not 0 <= gpa <= gpa_max:
                raise ValueError(f"gpa {gpa} outside [0, {gpa_max}]")
        except (ValueError, TypeError) as exc:
            handle("grades", path, line_no, str(exc))
            continue
        if not known("grades", path, line_no, sid):
            continue
        if sid in grades:
            handle("grades", path, line_no, f"duplicate student {sid}")
            continue
        grades[sid] = GradeRecord(sid, gpa)
    report.loaded["grades"] = len(grades)

    return EventStore(sessions, transactions, borrows, grades, demographics, report)


def extract_bedtimes(sessions: Iterable[NetSessionRecord],
                     cfg: NightWindowConfig) -> list[BedtimeObservation]:
    """Latest in-window signal per student per night, mapped to its bin.

    Night indices count from the earliest night touched by any session, so
    they are comparable across students. Nights without an in-window signal
    yield no observation.
    """
    last_signal: dict[tuple[str, date], datetime] = {}
    first_night: date | None = None
    for rec in sessions:
        night, bin_index = cfg.locate(rec.end_time)
        if first_night is None or night < first_night:
            first_night = night
        if bin_index is None:
            continue
        key = (rec.student_id, night)
        if key not in last_signal or rec.end_time > last_signal[key]:
            last_signal[key] = rec.end_time
    observations = []
    for (sid, night), end_time in last_signal.items():
        _, bin_index = cfg.locate(end_time)
        observations.append(BedtimeObservation(sid, (night - first_night).days, bin_index))
    observations.sort(key=lambda o: (o.student_id, o.night_index))
    return observations


def aggregate_sleep_counts(observations: Iterable[BedtimeObservation],
                           cfg: NightWindowConfig,
                           min_nights: int = DEFAULT_MIN_NIGHTS) -> dict[str, SleepCountVector]:
    """Per-student counts of nights per bin; thin students are dropped."""
    if min_nights < 1:
        raise ValueError("min_nights must be >= 1")
    per_student: dict[str, np.ndarray] = {}
    for obs in observations:
        if obs.bin_index >= cfg.bin_count:
            raise ValueError("bin index outside the configured window")
        counts = per_student.setdefault(obs.student_id, np.zeros(cfg.bin_count, dtype=np.int64))
        counts[obs.bin_index] += 1
    return {
        sid: SleepCountVector(sid, counts)
        for sid, counts in sorted(per_student.items())
        if int(counts.sum()) >= min_nights
    }


def infer_study_days(store: EventStore) -> int:
    """Span in days covered by any timestamp in the store."""
    stamps = [r.end_time for r in store.sessions]
    stamps += [r.time for r in store.transactions]
    stamps += [r.time for r in store.borrows]
    if not stamps:
        raise ValueError("no timestamped records to infer the study span from")
    return (max(stamps).date() - min(stamps).date()).days + 1


def compute_raw_features(store: EventStore, study_days: int,
                         breakfast_window: tuple[time, time] = DEFAULT_BREAKFAST_WINDOW,
                         ) -> dict[str, RawFeatureRecord]:
    """Raw (pre-discretization) behavioral quantities per student.

    Students present in demographics but missing a grade record are omitted.
    Students with fewer than two bath transactions get a None
    bath_interval_variance; excluding them is the caller's call.
    """
    if study_days < 1:
        raise ValueError("study_days must be >= 1")
    bf_start, bf_end = breakfast_window

    surf = {sid: 0.0 for sid in store.demographics}
    game = dict(surf)
    video = dict(surf)
    for rec in store.sessions:
        surf[rec.student_id] += rec.duration_minutes
        if rec.app_category == "game":
            game[rec.student_id] += rec.duration_minutes
        elif rec.app_category == "video":
            video[rec.student_id] += rec.duration_minutes

    spend = {sid: 0.0 for sid in store.demographics}
    breakfast_days: dict[str, set[date]] = {sid: set() for sid in store.demographics}
    bath_times: dict[str, list[datetime]] = {sid: [] for sid in store.demographics}
    for rec in store.transactions:
        spend[rec.student_id] += rec.amount
        if rec.venue == "canteen" and bf_start <= rec.time.time() < bf_end:
            breakfast_days[rec.student_id].add(rec.time.date())
        elif rec.venue == "bath":
            bath_times[rec.student_id].append(rec.time)

    borrowed: dict[str, int] = {sid: 0 for sid in store.demographics}
    for rec in store.borrows:
        borrowed[rec.student_id] += 1

    features: dict[str, RawFeatureRecord] = {}
    for sid in sorted(store.demographics):
        grade = store.grades.get(sid)
        if grade is None:
            continue
        baths = sorted(bath_times[sid])
        if len(baths) >= 2:
            gaps = np.diff([b.toordinal() for b in (t.date() for t in baths)])
            variance = float(np.var(gaps))
        else:
            variance = None
        features[sid] = RawFeatureRecord(
            student_id=sid,
            books_borrowed=borrowed[sid],
            mean_daily_surf_minutes=surf[sid] / study_days,
            game_minutes=game[sid],
            video_minutes=video[sid],
            breakfast_count=len(breakfast_days[sid]),
            bath_interval_variance=variance,
            mean_daily_spend=spend[sid] / study_days,
            gpa=grade.gpa,
            gender=store.demographics[sid].gender,
        )
    return features


def write_sleep_counts_csv(path, counts: Mapping[str, SleepCountVector], bin_count: int = 16):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["student_id"] + [f"c{i}" for i in range(bin_count)])
        for sid in sorted(counts):
            writer.writerow([sid] + [int(x) for x in counts[sid].counts])


def read_sleep_counts_csv(path) -> dict[str, SleepCountVector]:
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        bins = len(header) - 1
        for row in reader:
            out[row[0]] = SleepCountVector(row[0], np.array([int(x) for x in row[1:1 + bins]]))
    return out


FEATURE_COLUMNS = [
    "student_id", "books_borrowed", "mean_daily_surf_minutes", "game_minutes",
    "video_minutes", "breakfast_count", "bath_interval_variance",
    "mean_daily_spend", "gpa", "gender",
]


def write_features_csv(path, features: Mapping[str, RawFeatureRecord]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FEATURE_COLUMNS)
        for sid in sorted(features):
            rec = features[sid]
            variance = "" if rec.bath_interval_variance is None else f"{rec.bath_interval_variance:.12g}"
            writer.writerow([
                rec.student_id, rec.books_borrowed, f"{rec.mean_daily_surf_minutes:.12g}",
                f"{rec.game_minutes:.12g}", f"{rec.video_minutes:.12g}", rec.breakfast_count,
                variance, f"{rec.mean_daily_spend:.12g}", f"{rec.gpa:.12g}", rec.gender,
            ])


def read_features_csv(path) -> dict[str, RawFeatureRecord]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            variance = row["bath_interval_variance"]
            out[row["student_id"]] = RawFeatureRecord(
                student_id=row["student_id"],
                books_borrowed=int(row["books_borrowed"]),
                mean_daily_surf_minutes=float(row["mean_daily_surf_minutes"]),
                game_minutes=float(row["game_minutes"]),
                video_minutes=float(row["video_minutes"]),
                breakfast_count=int(row["breakfast_count"]),
                bath_interval_variance=float(variance) if variance else None,
                mean_daily_spend=float(row["mean_daily_spend"]),
                gpa=float(row["gpa"]),
                gender=row["gender"],
            )
    return out
