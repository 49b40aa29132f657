"""Facade behaviour: auth, role enforcement, streaming, record reads."""

import pytest

from stimchain import crypto
from stimchain.api import ApiError, ApiService
from stimchain.scenario import Runner, ScenarioConfig

SEED = 404


@pytest.fixture()
def setting():
    """A running cluster with authority/doctor/patient registered via the API."""
    runner = Runner(ScenarioConfig(seed=SEED, duration_s=600, workload=[]))
    runner.prepare()
    api = ApiService(runner)
    auth = api.session_for(runner.authority)
    api.handle({"method": "register", "token": auth,
                "params": {"kind": "doctor", "id": "doc-1"}})
    api.handle({"method": "register", "token": auth,
                "params": {"kind": "patient", "id": "pat-1", "name": "Rosa Park"}})
    api.handle({"method": "register", "token": auth,
                "params": {"kind": "doctor", "id": "doc-2"}})
    api.handle({"method": "assign", "token": auth,
                "params": {"doctor": "doc-1", "patient": "pat-1"}})
    doc = api.session_for(runner._identity("doc-1"))
    pat = api.session_for(runner._identity("pat-1"))
    api.handle({"method": "prescribe", "token": doc,
                "params": {"patient": "pat-1", "current_ma": 1.0,
                           "duration_min": 5, "per_week": 5, "weeks": 6}})
    return api, runner, {"auth": auth, "doc": doc, "pat": pat}


def advance(runner, ms):
    runner.sim.run_until(time_ms=runner.sim.now_ms + ms)


# --- authentication --------------------------------------------------------


def test_login_round_trip(setting):
    api, runner, _ = setting
    ident = runner._identity("doc-1")
    nonce = api.challenge("doc-1")
    token = api.login("doc-1", ident.sign(nonce))
    assert api._caller(token) == "doc-1"


def test_login_with_wrong_key_fails(setting):
    api, runner, _ = setting
    impostor = crypto.Identity.derive("someone-else", SEED)
    nonce = api.challenge("doc-1")
    with pytest.raises(ApiError) as e:
        api.login("doc-1", impostor.sign(nonce))
    assert e.value.status == "unauthenticated"


def test_stale_token_rejected(setting):
    api, _, _ = setting
    with pytest.raises(ApiError) as e:
        api.handle({"method": "list_records", "token": "bogus", "params": {}})
    assert e.value.status == "unauthenticated"


def test_unknown_method_is_bad_request(setting):
    api, _, t = setting
    with pytest.raises(ApiError) as e:
        api.handle({"method": "drop_tables", "token": t["pat"], "params": {}})
    assert e.value.status == "bad_request"


# --- roles -----------------------------------------------------------------


def test_patient_cannot_register(setting):
    api, _, t = setting
    with pytest.raises(ApiError) as e:
        api.handle({"method": "register", "token": t["pat"],
                    "params": {"kind": "doctor", "id": "doc-x"}})
    assert e.value.status == "forbidden"


def test_patient_cannot_prescribe(setting):
    api, _, t = setting
    with pytest.raises(ApiError) as e:
        api.handle({"method": "prescribe", "token": t["pat"],
                    "params": {"patient": "pat-1", "current_ma": 1.0,
                               "duration_min": 5}})
    assert e.value.status == "forbidden"


def test_unassigned_doctor_cannot_start_session(setting):
    api, runner, _ = setting
    doc2 = api.session_for(runner._identity("doc-2"))
    with pytest.raises(ApiError) as e:
        api.handle({"method": "start_session", "token": doc2,
                    "params": {"patient": "pat-1"}})
    assert e.value.status == "forbidden"


def test_validate_prescription_mirrors_device(setting):
    api, _, t = setting
    ok = api.handle({"method": "validate_prescription", "token": t["doc"],
                     "params": {"current_ma": 2.0, "duration_min": 30,
                                "per_week": 5, "weeks": 8}})
    assert ok["ok"] and ok["violations"] == []
    bad = api.handle({"method": "validate_prescription", "token": t["doc"],
                      "params": {"current_ma": 2.1, "duration_min": 31,
                                 "per_week": 6, "weeks": 9}})
    assert not bad["ok"]
    assert {v["field"] for v in bad["violations"]} == {
        "current_setpoint", "session_duration", "sessions_per_week", "total_weeks",
    }


# --- sessions and telemetry -------------------------------------------------


def test_session_and_stream_resume(setting):
    api, runner, t = setting
    out = api.handle({"method": "start_session", "token": t["pat"],
                      "params": {"patient": "pat-1"}})
    session = out["session"]
    advance(runner, 20_000)
    first = api.handle({"method": "stream_telemetry", "token": t["pat"],
                        "params": {"session": session}})
    assert first["frames"], "expected live frames after 20 simulated seconds"
    seqs = [f["seq"] for f in first["frames"]]
    assert seqs == list(range(1, len(seqs) + 1))
    ack = seqs[-1]
    advance(runner, 10_000)
    resumed = api.handle({"method": "stream_telemetry", "token": t["pat"],
                          "params": {"session": session, "after": ack}})
    assert resumed["frames"][0]["seq"] == ack + 1
    assert all(f["seq"] > ack for f in resumed["frames"])


def test_stranger_cannot_stream(setting):
    api, runner, t = setting
    out = api.handle({"method": "start_session", "token": t["pat"],
                      "params": {"patient": "pat-1"}})
    advance(runner, 5_000)
    doc2 = api.session_for(runner._identity("doc-2"))
    with pytest.raises(ApiError) as e:
        api.handle({"method": "stream_telemetry", "token": doc2,
                    "params": {"session": out["session"]}})
    assert e.value.status == "forbidden"


def test_abort_round_trip(setting):
    api, runner, t = setting
    out = api.handle({"method": "start_session", "token": t["pat"],
                      "params": {"patient": "pat-1"}})
    advance(runner, 10_000)
    res = api.handle({"method": "abort_session", "token": t["doc"],
                      "params": {"session": out["session"], "reason": "doc_abort"}})
    assert res["state"] == "Aborted"


# --- access workflow --------------------------------------------------------


def finished_session(api, runner, t):
    api.handle({"method": "start_session", "token": t["pat"],
                "params": {"patient": "pat-1"}})
    advance(runner, 340_000)  # 5-minute session incl. ramps, plus commit slack


def test_record_read_pipeline(setting):
    api, runner, t = setting
    finished_session(api, runner, t)
    api.handle({"method": "request_access", "token": t["doc"],
                "params": {"patient": "pat-1"}})
    pending = api.handle({"method": "list_requests", "token": t["pat"], "params": {}})
    assert pending["pending"] == [{"doctor": "doc-1", "scope": {"kind": "all"}}]
    api.handle({"method": "grant_access", "token": t["pat"],
                "params": {"doctor": "doc-1"}})
    records = api.handle({"method": "list_records", "token": t["doc"],
                          "params": {"patient": "pat-1"}})["records"]
    assert len(records) == 6  # 330 samples in batches of 60
    body = api.handle({"method": "read_record", "token": t["doc"],
                       "params": {"patient": "pat-1",
                                  "content_id": records[0]["content_id"]}})
    assert len(body["samples"]) == 60
    assert all(s["current"] >= 0 for s in body["samples"])


def test_read_without_grant_is_forbidden(setting):
    api, runner, t = setting
    finished_session(api, runner, t)
    records = api.handle({"method": "list_records", "token": t["pat"],
                          "params": {}})["records"]
    with pytest.raises(ApiError) as e:
        api.handle({"method": "read_record", "token": t["doc"],
                    "params": {"patient": "pat-1",
                               "content_id": records[0]["content_id"]}})
    assert e.value.status == "forbidden"


def test_other_patient_records_hidden(setting):
    api, _, t = setting
    with pytest.raises(ApiError) as e:
        api.handle({"method": "list_records", "token": t["pat"],
                    "params": {"patient": "pat-2"}})
    assert e.value.status == "forbidden"


# --- audit -----------------------------------------------------------------


def test_audit_lists_reads_and_uploads(setting):
    api, runner, t = setting
    finished_session(api, runner, t)
    api.handle({"method": "request_access", "token": t["doc"],
                "params": {"patient": "pat-1"}})
    api.handle({"method": "grant_access", "token": t["pat"],
                "params": {"doctor": "doc-1"}})
    records = api.handle({"method": "list_records", "token": t["doc"],
                          "params": {"patient": "pat-1"}})["records"]
    api.handle({"method": "read_record", "token": t["doc"],
                "params": {"patient": "pat-1",
                           "content_id": records[0]["content_id"]}})
    report = api.handle({"method": "audit", "token": t["pat"],
                         "params": {"patient": "pat-1"}})
    kinds = [e["kind"] for e in report["events"]]
    assert kinds.count("DataUpload") == 6
    assert kinds.count("AccessRead") == 1
    assert report["chain_ok"]
    heights = [e["height"] for e in report["events"]]
    assert heights == sorted(heights)


def test_chain_audit_reports_height(setting):
    api, runner, t = setting
    advance(runner, 10_000)
    out = api.handle({"method": "chain_audit", "token": t["pat"], "params": {}})
    assert out["ok"] and out["height"] > 0
