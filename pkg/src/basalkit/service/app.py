"""JSON-over-HTTP advisor API.

Versioned paths under /v1. The service is advisory: a dose enters the log
only when explicitly posted; recommendation and what-if reads never mutate
state. Times are integer minutes since therapy start; glucose is mg/dL;
doses are U.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import time as _time
from dataclasses import dataclass, field

import numpy as np
from fastapi import Depends, FastAPI, HTTPException, Request
from pydantic import BaseModel

from basalkit import timegrid
from basalkit.control import TitrationConfig, rhc_recommend, soc_recommend
from basalkit.estimator import EstimationError, ObservationLog, map_estimate
from basalkit.fasting import ModelParams, PriorSpec, envelope, predict_trajectory
from basalkit.pk import DoseEvent, DrugParams, Subject, get_drug
from basalkit.service.store import DuplicatePatient, EventStore, UnknownPatient

logger = logging.getLogger("basalkit.service")


class CreatePatient(BaseModel):
    id: str
    body_weight: float
    drug: str = "degludec"
    config: dict = {}
    prior: dict = {}


class FbgReading(BaseModel):
    time: int
    value: float


class DoseTaken(BaseModel):
    time: int
    units: float


@dataclass
class PatientState:
    """Replayed view of one patient's event log."""

    patient_id: str
    subject: Subject
    drug: DrugParams
    config: TitrationConfig
    prior: PriorSpec
    obs_times: list[int] = field(default_factory=list)
    obs_values: list[float] = field(default_factory=list)
    doses: list[DoseEvent] = field(default_factory=list)
    estimate: ModelParams | None = None
    last_event_time: int = -1

    @property
    def params(self) -> ModelParams:
        return self.estimate if self.estimate is not None else self.prior.mean_params()

    @property
    def u_prev(self) -> float:
        return self.doses[-1].units if self.doses else 0.0

    @property
    def next_day(self) -> int:
        """Day index the next injection would fall on."""
        day = 0
        if self.doses:
            day = self.doses[-1].time // timegrid.MINUTES_PER_DAY + 1
        if self.obs_times:
            day = max(day, self.obs_times[-1] // timegrid.MINUTES_PER_DAY)
        return day

    def apply_fbg(self, t: int, value: float) -> None:
        self.obs_times.append(t)
        self.obs_values.append(value)
        log = ObservationLog.build(self.obs_times, self.obs_values, self.doses)
        try:
            self.estimate = map_estimate(
                log, self.prior, self.drug, self.subject,
                x0=self.estimate, truncation_min=timegrid.PK_TRUNCATION_MIN,
            )
        except EstimationError:
            logger.warning("estimate for %s did not converge; keeping previous", self.patient_id)
        self.last_event_time = t

    def apply_dose(self, t: int, units: float) -> None:
        self.doses.append(DoseEvent(time=t, units=units))
        self.last_event_time = t


def _profile_from_request(req: CreatePatient) -> dict:
    if req.body_weight <= 0:
        raise HTTPException(422, "body_weight must be positive")
    try:
        get_drug(req.drug)
        config = TitrationConfig(**req.config)
        prior_kwargs = {}
        if "means" in req.prior:
            prior_kwargs["means"] = tuple(req.prior["means"])
        if "log_sds" in req.prior:
            prior_kwargs["log_sds"] = tuple(req.prior["log_sds"])
        prior = PriorSpec(**prior_kwargs)
    except (ValueError, TypeError, KeyError) as exc:
        raise HTTPException(422, f"invalid profile: {exc}") from exc
    return {
        "id": req.id,
        "body_weight": req.body_weight,
        "drug": req.drug,
        "config": dataclasses.asdict(config),
        "prior": dataclasses.asdict(prior),
    }


def replay(patient_id: str, events: list[dict]) -> PatientState:
    """Rebuild the derived state by replaying the event log in order."""
    if not events or events[0].get("type") != "created":
        raise ValueError(f"corrupt event log for {patient_id}")
    profile = events[0]["profile"]
    prior_raw = profile["prior"]
    state = PatientState(
        patient_id=patient_id,
        subject=Subject(profile["body_weight"]),
        drug=get_drug(profile["drug"]),
        config=TitrationConfig(**profile["config"]),
        prior=PriorSpec(tuple(prior_raw["means"]), tuple(prior_raw["log_sds"])),
    )
    for event in events[1:]:
        if event["type"] == "fbg":
            state.apply_fbg(event["time"], event["value"])
        elif event["type"] == "dose":
            state.apply_dose(event["time"], event["units"])
        else:
            raise ValueError(f"unknown event type {event['type']!r}")
    return state


def _trajectory_payload(state: PatientState, dose: float) -> dict:
    traj = predict_trajectory(
        state.params, state.doses, dose, state.config.horizon_days,
        state.drug, state.subject, start_day=state.next_day,
        truncation_min=timegrid.PK_TRUNCATION_MIN,
    )
    clamped = np.maximum(traj, 1.0)
    lows, highs = zip(*(envelope(float(v), state.params.p2, state.config.alpha) for v in clamped))
    return {
        "days": list(range(state.next_day, state.next_day + state.config.horizon_days + 1)),
        "trajectory": [float(v) for v in clamped],
        "envelope_low": list(lows),
        "envelope_high": list(highs),
    }


def create_app(
    data_dir: str,
    api_token: str | None = None,
) -> FastAPI:
    app = FastAPI(title="basalkit advisor", version="1")
    store = EventStore(data_dir)
    states: dict[str, PatientState] = {}

    def auth(request: Request) -> None:
        if api_token and request.headers.get("x-api-token") != api_token:
            raise HTTPException(401, "missing or bad API token")

    @app.middleware("http")
    async def log_requests(request: Request, call_next):
        start = _time.perf_counter()
        response = await call_next(request)
        logger.info(
            "%s %s -> %d (%.1f ms)",
            request.method, request.url.path, response.status_code,
            (_time.perf_counter() - start) * 1000.0,
        )
        return response

    def get_state(patient_id: str) -> PatientState:
        if patient_id not in states:
            try:
                events = store.events(patient_id)
            except (UnknownPatient, ValueError) as exc:
                raise HTTPException(404, f"unknown patient {patient_id!r}") from exc
            states[patient_id] = replay(patient_id, events)
        return states[patient_id]

    @app.post("/v1/patients", status_code=201, dependencies=[Depends(auth)])
    def create_patient(req: CreatePatient):
        profile = _profile_from_request(req)
        try:
            store.create(req.id, profile)
        except DuplicatePatient:
            raise HTTPException(409, f"patient {req.id!r} already exists") from None
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        return {"id": req.id}

    @app.get("/v1/patients/{patient_id}", dependencies=[Depends(auth)])
    def get_patient(patient_id: str):
        state = get_state(patient_id)
        p = state.params
        return {
            "id": patient_id,
            "body_weight": state.subject.body_weight,
            "drug": state.drug.name,
            "config": dataclasses.asdict(state.config),
            "prior": dataclasses.asdict(state.prior),
            "current_dose": state.u_prev,
            "estimate": {"p0": p.p0, "p1": p.p1, "p2": p.p2},
            "events": len(state.obs_times) + len(state.doses),
        }

    @app.post("/v1/patients/{patient_id}/fbg", dependencies=[Depends(auth)])
    def log_fbg(patient_id: str, reading: FbgReading):
        state = get_state(patient_id)
        if reading.value <= 0:
            raise HTTPException(422, "FBG reading must be positive")
        with store.lock(patient_id):
            if reading.time <= state.last_event_time:
                raise HTTPException(
                    409, f"timestamp {reading.time} not after last event {state.last_event_time}"
                )
            store.append(patient_id, {"type": "fbg", "time": reading.time, "value": reading.value})
            state.apply_fbg(reading.time, reading.value)
        p = state.params
        return {"logged": True, "estimate": {"p0": p.p0, "p1": p.p1, "p2": p.p2}}

    @app.post("/v1/patients/{patient_id}/doses", dependencies=[Depends(auth)])
    def log_dose(patient_id: str, dose: DoseTaken):
        state = get_state(patient_id)
        if dose.units < 0:
            raise HTTPException(422, "dose units must be >= 0")
        with store.lock(patient_id):
            if dose.time <= state.last_event_time:
                raise HTTPException(
                    409, f"timestamp {dose.time} not after last event {state.last_event_time}"
                )
            store.append(patient_id, {"type": "dose", "time": dose.time, "units": dose.units})
            state.apply_dose(dose.time, dose.units)
        return {"logged": True, "current_dose": state.u_prev}

    @app.get("/v1/patients/{patient_id}/recommendation", dependencies=[Depends(auth)])
    def recommendation(patient_id: str):
        state = get_state(patient_id)
        rec = rhc_recommend(
            state.params, state.prior, state.config, state.doses, state.u_prev,
            state.drug, state.subject, start_day=state.next_day,
            truncation_min=timegrid.PK_TRUNCATION_MIN,
        )
        window = state.obs_values[-state.config.fbg_window:]
        soc = soc_recommend(window, state.config) if window else None
        p = state.params
        d = rec.diagnostics
        return {
            "delta_u": rec.delta_u,
            "new_dose": rec.new_dose,
            "previous_dose": state.u_prev,
            "bound": d.bound,
            "constraint_active": abs(abs(rec.delta_u) - d.bound) < 1e-12,
            "estimate": {"p0": p.p0, "p1": p.p1, "p2": p.p2},
            "costs": {
                "q_hypo": d.q_hypo,
                "q_hyper": d.q_hyper,
                "regularization": d.regularization,
                "total": d.total_cost,
            },
            "days": list(range(state.next_day, state.next_day + state.config.horizon_days + 1)),
            "trajectory": list(d.trajectory),
            "envelope_low": list(d.envelope_low),
            "envelope_high": list(d.envelope_high),
            "soc_delta_u": soc,
        }

    @app.get("/v1/patients/{patient_id}/whatif", dependencies=[Depends(auth)])
    def what_if(patient_id: str, dose: float):
        state = get_state(patient_id)
        if dose < 0:
            raise HTTPException(422, "hypothetical dose must be >= 0")
        return {"dose": dose, **_trajectory_payload(state, dose)}

    @app.get("/v1/patients/{patient_id}/history", dependencies=[Depends(auth)])
    def history(patient_id: str, offset: int = 0, limit: int = 100):
        get_state(patient_id)  # 404 on unknown id
        events = store.events(patient_id)[1:]  # profile record excluded
        offset = max(0, offset)
        limit = max(0, limit)
        page = events[offset : offset + limit]
        return {"total": len(events), "offset": offset, "events": page}

    return app


def main() -> None:  # pragma: no cover - thin launcher
    import argparse

    import uvicorn

    parser = argparse.ArgumentParser(description="Run the advisor service")
    parser.add_argument("--port", type=int, default=int(os.environ.get("BASALKIT_PORT", "8000")))
    parser.add_argument("--data-dir", default=os.environ.get("BASALKIT_DATA_DIR", "./advisor-data"))
    parser.add_argument("--token", default=os.environ.get("BASALKIT_API_TOKEN"))
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    uvicorn.run(create_app(args.data_dir, args.token), host="0.0.0.0", port=args.port)


if __name__ == "__main__":  # pragma: no cover
    main()
