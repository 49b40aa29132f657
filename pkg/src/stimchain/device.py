"""Simulated constant-current neurostimulation device.

Covers the dosing order and its safety envelope, the current-regulator
calibration table, the session state machine with linear ramps, sham
(placebo) behavior, weekly scheduling limits, and the line-oriented
session-log format used for cloud storage.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from enum import Enum
from typing import Callable, Optional

from . import crypto, encoding

# Safety envelope. A prescription outside any of these bounds is refused
# both on-device and on-chain.
CURRENT_MIN_MA = 1.0
CURRENT_MAX_MA = 2.0
DURATION_MIN_MIN = 5
DURATION_MAX_MIN = 30
SESSIONS_PER_WEEK_MAX = 5
WEEKS_MAX = 8

RAMP_SECONDS = 30
HARD_CAP_MA = 2.0

HANDS = ("I", "II", "III")


class DeviceState(Enum):
    IDLE = "Idle"
    RAMP_UP = "RampUp"
    STIMULATING = "Stimulating"
    RAMP_DOWN = "RampDown"
    COMPLETED = "Completed"
    ABORTED = "Aborted"
    FAULT = "Fault"


RUNNING_STATES = {DeviceState.RAMP_UP, DeviceState.STIMULATING, DeviceState.RAMP_DOWN}


class Arm(Enum):
    ACTIVE = "Active"
    SHAM = "Sham"


@dataclass(frozen=True)
class HeadPosition:
    """Position on the headband coordinate system: hand I..III, offset -5..+5."""

    hand: str
    base_offset: int


@dataclass(frozen=True)
class ElectrodeMontage:
    anode: HeadPosition
    cathode: HeadPosition


@dataclass(frozen=True)
class ShamPolicy:
    """Arm-assignment policy: 'none' (always active) or seeded 'crossover'."""

    kind: str  # "none" | "crossover"
    fraction: float = 0.0
    seed: int = 0

    @classmethod
    def none(cls) -> "ShamPolicy":
        return cls(kind="none")

    @classmethod
    def crossover(cls, fraction: float, seed: int) -> "ShamPolicy":
        if not 0.0 <= fraction <= 1.0:
            raise ValueError(f"sham fraction {fraction} outside [0, 1]")
        return cls(kind="crossover", fraction=fraction, seed=seed)


@dataclass(frozen=True)
class Prescription:
    """Clinician-signed dosing order; current in mA at 0.01 mA resolution."""

    prescription_id: str
    patient_id: str
    prescriber_id: str
    current_setpoint: float
    session_duration: int  # whole minutes
    sessions_per_week: int
    total_weeks: int
    montage: ElectrodeMontage
    sham_policy: ShamPolicy
    signature: bytes = b""

    def signing_payload(self) -> dict:
        """Canonical-encodable view of the fields covered by the signature."""
        return {
            "prescription_id": self.prescription_id,
            "patient_id": self.patient_id,
            "prescriber_id": self.prescriber_id,
            "current_centi_ma": int(round(self.current_setpoint * 100)),
            "session_duration_min": self.session_duration,
            "sessions_per_week": self.sessions_per_week,
            "total_weeks": self.total_weeks,
            "montage": {
                "anode": {"hand": self.montage.anode.hand, "base_offset": self.montage.anode.base_offset},
                "cathode": {"hand": self.montage.cathode.hand, "base_offset": self.montage.cathode.base_offset},
            },
            "sham": {
                "kind": self.sham_policy.kind,
                "fraction_ppm": int(round(self.sham_policy.fraction * 1_000_000)),
                "seed": self.sham_policy.seed,
            },
        }

    def signing_bytes(self) -> bytes:
        return encoding.encode(self.signing_payload())

    def signed_by(self, prescriber: "crypto.Identity") -> "Prescription":
        return replace(self, signature=prescriber.sign(self.signing_bytes()))

    @classmethod
    def from_payload(cls, payload: dict, signature: bytes = b"") -> "Prescription":
        m = payload["montage"]
        sham = payload["sham"]
        return cls(
            prescription_id=payload["prescription_id"],
            patient_id=payload["patient_id"],
            prescriber_id=payload["prescriber_id"],
            current_setpoint=payload["current_centi_ma"] / 100.0,
            session_duration=payload["session_duration_min"],
            sessions_per_week=payload["sessions_per_week"],
            total_weeks=payload["total_weeks"],
            montage=ElectrodeMontage(
                anode=HeadPosition(m["anode"]["hand"], m["anode"]["base_offset"]),
                cathode=HeadPosition(m["cathode"]["hand"], m["cathode"]["base_offset"]),
            ),
            sham_policy=ShamPolicy(
                kind=sham["kind"],
                fraction=sham["fraction_ppm"] / 1_000_000.0,
                seed=sham["seed"],
            ),
            signature=signature,
        )


@dataclass(frozen=True)
class Violation:
    field_name: str
    observed: object
    allowed: str


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[Violation, ...] = ()
    unverifiable: Optional[str] = None  # set when the order itself can't be trusted


def validate_prescription(
    p: Prescription, prescriber_pub: Optional[bytes] = None
) -> ValidationReport:
    """Check a dosing order against the safety envelope.

    With *prescriber_pub* given, an absent or invalid signature yields the
    distinct 'unverifiable' outcome instead of range violations.
    """
    if prescriber_pub is not None:
        if not p.signature:
            return ValidationReport(ok=False, unverifiable="missing signature")
        if not crypto.verify(prescriber_pub, p.signing_bytes(), p.signature):
            return ValidationReport(ok=False, unverifiable="signature does not verify")

    violations: list[Violation] = []
    if not CURRENT_MIN_MA <= p.current_setpoint <= CURRENT_MAX_MA:
        violations.append(
            Violation("current_setpoint", p.current_setpoint, f"[{CURRENT_MIN_MA},{CURRENT_MAX_MA}] mA")
        )
    if not DURATION_MIN_MIN <= p.session_duration <= DURATION_MAX_MIN:
        violations.append(
            Violation("session_duration", p.session_duration, f"[{DURATION_MIN_MIN},{DURATION_MAX_MIN}] min")
        )
    if not 1 <= p.sessions_per_week <= SESSIONS_PER_WEEK_MAX:
        violations.append(
            Violation("sessions_per_week", p.sessions_per_week, f"[1,{SESSIONS_PER_WEEK_MAX}]")
        )
    if not 1 <= p.total_weeks <= WEEKS_MAX:
        violations.append(Violation("total_weeks", p.total_weeks, f"[1,{WEEKS_MAX}]"))
    for label, pos in (("anode", p.montage.anode), ("cathode", p.montage.cathode)):
        if pos.hand not in HANDS:
            violations.append(Violation(f"montage.{label}.hand", pos.hand, "{I,II,III}"))
        if not -5 <= pos.base_offset <= 5:
            violations.append(Violation(f"montage.{label}.base_offset", pos.base_offset, "[-5,+5]"))
    if p.montage.anode == p.montage.cathode:
        violations.append(Violation("montage", "anode == cathode", "distinct positions"))
    return ValidationReport(ok=not violations, violations=tuple(violations))


# --- Current regulator ---------------------------------------------------


class RegulatorError(Exception):
    pass


@dataclass(frozen=True)
class RegulatorCalibration:
    """Monotone code -> output-current table for the digi-pot regulator."""

    table: tuple[float, ...]  # index = code, value = mA

    def __post_init__(self):
        if not self.table or self.table[0] != 0.0:
            raise RegulatorError("calibration must start at code 0 -> 0 mA")
        prev = -1.0
        for code, out in enumerate(self.table):
            if out < prev:
                raise RegulatorError(f"calibration not monotone at code {code}")
            if out > HARD_CAP_MA + 1e-9:
                raise RegulatorError(f"calibration exceeds {HARD_CAP_MA} mA hard cap at code {code}")
            prev = out

    @classmethod
    def default(cls) -> "RegulatorCalibration":
        # 0.01 mA per code up to code 200; higher codes clamp at 2.00 mA.
        return cls(tuple(min(code, 200) * 0.01 for code in range(256)))

    def output(self, code: int) -> float:
        if not 0 <= code < len(self.table):
            raise RegulatorError(f"code {code} outside calibration table")
        return self.table[code]

    @property
    def max_output(self) -> float:
        return self.table[-1]


def code_for_current(cal: RegulatorCalibration, target_ma: float) -> int:
    """Code whose output is closest to *target_ma*; ties break to the lower code."""
    if target_ma < 0 or target_ma > cal.max_output + 1e-9:
        raise RegulatorError(f"target {target_ma} mA outside calibrated range [0, {cal.max_output}]")
    best_code, best_err = 0, abs(cal.table[0] - target_ma)
    for code, out in enumerate(cal.table):
        err = abs(out - target_ma)
        if err < best_err - 1e-12:  # strict improvement only: never move up on a tie
            best_code, best_err = code, err
    return best_code


# --- Sham arm assignment -------------------------------------------------


def assign_arm(policy: ShamPolicy, patient_id: str, session_index: int) -> Arm:
    """Deterministic arm draw from (seed, patient, session index)."""
    if policy.kind == "none" or policy.fraction <= 0.0:
        return Arm.ACTIVE
    digest = hashlib.sha256(
        f"arm:{policy.seed}:{patient_id}:{session_index}".encode()
    ).digest()
    u = int.from_bytes(digest[:8], "big") / 2**64
    return Arm.SHAM if u < policy.fraction else Arm.ACTIVE


# --- Telemetry and session log -------------------------------------------


@dataclass(frozen=True)
class TelemetrySample:
    at: datetime
    current: int  # integer device units as logged (mA rounded)
    current_ma: float = 0.0  # full-resolution reading, device-internal
    state: Optional[DeviceState] = None  # device-internal tag

    def log_line(self) -> str:
        d, t = self.at.date(), self.at.time()
        return f"Date:{d.year}/{d.month}/{d.day}, Time:{t.hour}-{t.minute}-{t.second}, Current:{self.current},"


@dataclass
class SessionRecord:
    patient_name: str
    treatment_length: int  # minutes
    samples: list[TelemetrySample] = field(default_factory=list)
    arm: Optional[Arm] = None  # sealed; never serialized

    def patient_visible(self) -> "SessionRecord":
        """Projection a patient may see: arm and internal state tags dropped."""
        return SessionRecord(
            patient_name=self.patient_name,
            treatment_length=self.treatment_length,
            samples=[TelemetrySample(at=s.at, current=s.current) for s in self.samples],
            arm=None,
        )


_DATA_LINE_RE = re.compile(
    r"^Date:(\d{4})/(\d{1,2})/(\d{1,2}), Time:(\d{1,2})-(\d{1,2})-(\d{1,2}), Current:(\d+),$"
)
_HEADER_NAME_RE = re.compile(r"^Patient name: (.*)$")
_HEADER_LEN_RE = re.compile(r"^Treatment length: (\d+) mins$")


class SessionLogError(ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


def serialize_session(record: SessionRecord) -> bytes:
    """Render the cloud session-log text: LF endings, unpadded date/time fields."""
    lines = [
        f"Patient name: {record.patient_name}",
        f"Treatment length: {record.treatment_length} mins",
    ]
    lines.extend(s.log_line() for s in record.samples)
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_session(data: bytes) -> SessionRecord:
    """Parse a session log; returns the patient-visible projection."""
    text = data.decode("utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise SessionLogError(1, "missing header: expected 'Patient name: ...'")
    m = _HEADER_NAME_RE.match(lines[0])
    if not m:
        raise SessionLogError(1, "missing header: expected 'Patient name: ...'")
    name = m.group(1)
    if len(lines) < 2:
        raise SessionLogError(2, "missing header: expected 'Treatment length: <n> mins'")
    m = _HEADER_LEN_RE.match(lines[1])
    if not m:
        raise SessionLogError(2, "missing header: expected 'Treatment length: <n> mins'")
    length = int(m.group(1))
    samples: list[TelemetrySample] = []
    for i, line in enumerate(lines[2:], start=3):
        m = _DATA_LINE_RE.match(line)
        if not m:
            raise SessionLogError(i, f"malformed data line: {line!r}")
        year, month, day, hour, minute, second, current = map(int, m.groups())
        try:
            at = datetime(year, month, day, hour, minute, second)
        except ValueError as exc:
            raise SessionLogError(i, f"invalid date/time: {exc}") from exc
        samples.append(TelemetrySample(at=at, current=current))
    return SessionRecord(patient_name=name, treatment_length=length, samples=samples)


# --- Scheduling ----------------------------------------------------------


@dataclass(frozen=True)
class ScheduleDecision:
    allowed: bool
    reason: Optional[str] = None  # "weekly_limit" | "course_complete"


def week_key(at: datetime) -> tuple[int, int]:
    iso = at.isocalendar()
    return (iso[0], iso[1])


def check_schedule(
    history: list[datetime], p: Prescription, now: datetime
) -> ScheduleDecision:
    """Enforce sessions-per-week and total course length.

    *history* holds completed session start times, sorted ascending. Weeks
    are ISO weeks (Monday 00:00).
    """
    if history:
        course_end = history[0] + timedelta(weeks=p.total_weeks)
        if now >= course_end:
            return ScheduleDecision(False, "course_complete")
    this_week = week_key(now)
    count = sum(1 for t in history if week_key(t) == this_week)
    if count >= p.sessions_per_week:
        return ScheduleDecision(False, "weekly_limit")
    return ScheduleDecision(True)


# --- The device state machine -------------------------------------------


class DeviceError(Exception):
    pass


class DeviceBusy(DeviceError):
    pass


def _round_units(ma: float) -> int:
    return int(ma + 0.5)


@dataclass
class Device:
    """Single session-at-a-time stimulation device.

    All time comes from the injected session start plus 1 Hz ticks; the
    device never reads a wall clock.
    """

    calibration: RegulatorCalibration = field(default_factory=RegulatorCalibration.default)
    state: DeviceState = DeviceState.IDLE
    prescription: Optional[Prescription] = None
    arm: Optional[Arm] = None
    elapsed_s: int = 0
    measured_ma: float = 0.0
    started_at: Optional[datetime] = None
    charge_mas: float = 0.0  # accumulated mA*s over the session
    abort_reason: Optional[str] = None
    # (elapsed_s -> reported mA) sensor-fault injections for testing the
    # anomaly path; they corrupt readings, not the regulator output.
    reading_faults: dict[int, float] = field(default_factory=dict)

    def start_session(
        self,
        p: Prescription,
        arm: Arm,
        start_at: datetime,
        prescriber_pub: Optional[bytes] = None,
    ) -> None:
        if self.state is not DeviceState.IDLE:
            raise DeviceBusy(f"device is {self.state.value}, not Idle")
        report = validate_prescription(p, prescriber_pub)
        if not report.ok:
            detail = report.unverifiable or "; ".join(
                f"{v.field_name}={v.observed} allowed {v.allowed}" for v in report.violations
            )
            raise DeviceError(f"prescription refused: {detail}")
        self.prescription = p
        self.arm = arm
        self.state = DeviceState.RAMP_UP
        self.elapsed_s = 0
        self.measured_ma = 0.0
        self.charge_mas = 0.0
        self.started_at = start_at
        self.abort_reason = None

    def _regulated(self, target_ma: float) -> float:
        target = min(max(target_ma, 0.0), self.calibration.max_output)
        return self.calibration.output(code_for_current(self.calibration, target))

    def tick(self) -> TelemetrySample:
        """Advance simulated time by one second and emit a telemetry sample."""
        if self.state not in RUNNING_STATES:
            at = (self.started_at or datetime(1970, 1, 1)) + timedelta(seconds=self.elapsed_s)
            return TelemetrySample(at=at, current=0, current_ma=0.0, state=self.state)
        p = self.prescription
        assert p is not None and self.started_at is not None
        self.elapsed_s += 1
        plateau_end = p.session_duration * 60
        if self.elapsed_s < RAMP_SECONDS:
            self.state = DeviceState.RAMP_UP
            commanded = p.current_setpoint * self.elapsed_s / RAMP_SECONDS
        elif self.elapsed_s < plateau_end:
            self.state = DeviceState.STIMULATING
            commanded = p.current_setpoint
        elif self.elapsed_s < plateau_end + RAMP_SECONDS:
            self.state = DeviceState.RAMP_DOWN
            commanded = p.current_setpoint * (1 - (self.elapsed_s - plateau_end) / RAMP_SECONDS)
        else:
            self.state = DeviceState.COMPLETED
            commanded = 0.0
        actual = 0.0 if self.arm is Arm.SHAM else self._regulated(commanded)
        if self.state is DeviceState.COMPLETED:
            actual = 0.0
        self.measured_ma = actual
        self.charge_mas += actual  # 1 s per tick
        reported = self.reading_faults.get(self.elapsed_s, actual)
        at = self.started_at + timedelta(seconds=self.elapsed_s)
        return TelemetrySample(
            at=at, current=_round_units(reported), current_ma=reported, state=self.state
        )

    def abort(self, reason: str) -> None:
        """Drive current to zero and stop; idempotent outside running states."""
        if self.state not in RUNNING_STATES:
            return
        self.state = DeviceState.ABORTED
        self.measured_ma = 0.0
        self.abort_reason = reason

    def fault(self, reason: str) -> None:
        self.state = DeviceState.FAULT
        self.measured_ma = 0.0
        self.abort_reason = reason

    def reset(self) -> None:
        if self.state in RUNNING_STATES:
            raise DeviceBusy("cannot reset a running device")
        self.state = DeviceState.IDLE
        self.prescription = None
        self.arm = None
        self.elapsed_s = 0
        self.measured_ma = 0.0
        self.abort_reason = None
        self.reading_faults = {}

    @property
    def running(self) -> bool:
        return self.state in RUNNING_STATES

    def total_charge_coulombs(self) -> float:
        return self.charge_mas / 1000.0


def run_full_session(
    p: Prescription,
    arm: Arm,
    start_at: datetime,
    patient_name: str = "",
    calibration: Optional[RegulatorCalibration] = None,
    on_sample: Optional[Callable[[TelemetrySample], None]] = None,
) -> tuple[Device, SessionRecord]:
    """Drive a device through a complete session at 1 Hz; convenience for tests."""
    dev = Device(calibration=calibration or RegulatorCalibration.default())
    dev.start_session(p, arm, start_at)
    record = SessionRecord(
        patient_name=patient_name, treatment_length=p.session_duration, arm=arm
    )
    while dev.running:
        sample = dev.tick()
        record.samples.append(sample)
        if on_sample:
            on_sample(sample)
    return dev, record
