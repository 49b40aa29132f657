"""Shared fixtures and oracle helpers for the test suite."""

from __future__ import annotations

from datetime import datetime
from pathlib import Path

import pytest

from stimchain import crypto
from stimchain import device as devmod

FIXTURES = Path(__file__).parent / "fixtures"

EPOCH = datetime(2021, 9, 20, 9, 0, 0)  # a Monday


def make_prescription(
    current_ma: float = 1.0,
    duration_min: int = 20,
    per_week: int = 5,
    weeks: int = 6,
    patient: str = "pat-1",
    doctor: str = "doc-1",
    rx_id: str = "rx-1",
    sham: devmod.ShamPolicy | None = None,
) -> devmod.Prescription:
    return devmod.Prescription(
        prescription_id=rx_id,
        patient_id=patient,
        prescriber_id=doctor,
        current_setpoint=current_ma,
        session_duration=duration_min,
        sessions_per_week=per_week,
        total_weeks=weeks,
        montage=devmod.ElectrodeMontage(
            devmod.HeadPosition("I", 2), devmod.HeadPosition("II", -2)
        ),
        sham_policy=sham or devmod.ShamPolicy.none(),
    )


def ramp_profile_oracle(setpoint_ma: float, duration_min: int) -> list[float]:
    """Independent integration oracle: expected regulated current at each
    whole second of a session, computed directly from the declared profile
    (30 s linear ramp up, plateau, 30 s linear ramp down)."""
    total_s = duration_min * 60
    out = []
    for elapsed in range(1, total_s + 30 + 1):
        if elapsed < 30:
            out.append(setpoint_ma * elapsed / 30.0)
        elif elapsed < total_s:
            out.append(setpoint_ma)
        else:
            out.append(setpoint_ma * (1.0 - (elapsed - total_s) / 30.0))
    return out


@pytest.fixture
def identities():
    """Deterministic key material for a small cast."""
    return {
        name: crypto.Identity.derive(name, 99)
        for name in ("authority", "doc-1", "pat-1", "pat-2", "val-0")
    }
