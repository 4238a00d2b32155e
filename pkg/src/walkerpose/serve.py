"""Line-delimited JSON classification service (TCP and stdio).

One JSON object per line in both directions; every request line gets
exactly one response line, in order.  `frame` messages return a
classification; `calibrate`, `reset` and `configure` return acks.
Calibration state is per connection (baselines are per user); loaded
models and configs are immutable and shared read-only across connections.

Wire protocol reference: docs/protocol.md.
"""
from __future__ import annotations

import json
import socketserver
import sys
import time
from dataclasses import dataclass, field
from typing import IO, Optional

import numpy as np

from . import features as feat
from . import gbt
from .geometric import (
    CalibrationBaseline,
    Debouncer,
    GeometricConfig,
    GeometricError,
    calibrate,
    classify_geometric,
    config_from_obj,
    default_config,
    deviation,
    load_config,
)
from .pose import LandmarkFrame, frame_from_obj, validate_frame, DatasetFormatError

DEFAULT_PORT = 7420
CONFIG_ENV_VAR = "WALKERPOSE_CONFIG"

RAW_FEATURE_COUNT = 99  # 33 landmarks x (x, y, z)


class ServeError(Exception):
    pass


@dataclass(frozen=True)
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    multi_model_path: Optional[str] = None
    risk_model_path: Optional[str] = None
    geometric_config_path: Optional[str] = None
    vocab: tuple[str, ...] = ()
    alert_debounce: int = 5
    mode: str = "tcp"  # "tcp" | "stdio"

    def __post_init__(self):
        if self.alert_debounce < 1:
            raise ServeError("alert_debounce must be >= 1")
        if self.mode not in ("tcp", "stdio"):
            raise ServeError(f"unknown mode {self.mode!r}")


@dataclass
class ModelBundle:
    """Immutable, shared across connections."""

    multi: Optional[gbt.MultiOutputGBT] = None
    risk: Optional[gbt.GBTModel] = None
    geo_config: GeometricConfig = field(default_factory=default_config)
    vocab: tuple[str, ...] = ()
    alert_debounce: int = 5
    feature_spec: feat.FeatureSpec = feat.DEFAULT_FEATURE_SPEC

    def __post_init__(self):
        modes = set()
        for model in self._models():
            modes.add(model.n_features)
        if len(modes) > 1:
            raise ServeError(f"models disagree on feature mode: {sorted(modes)}")
        if modes and next(iter(modes)) not in (feat.N_FEATURES, RAW_FEATURE_COUNT):
            raise ServeError(f"unsupported model feature count {modes}")

    def _models(self):
        out = []
        if self.multi is not None:
            out.extend(self.multi.models.values())
        if self.risk is not None:
            out.append(self.risk)
        return out

    @property
    def feature_mode(self) -> Optional[int]:
        models = self._models()
        return models[0].n_features if models else None


def load_bundle(config: ServerConfig) -> ModelBundle:
    multi = gbt.load_multi_output(config.multi_model_path) if config.multi_model_path else None
    risk = gbt.load_model(config.risk_model_path) if config.risk_model_path else None
    geo = (load_config(config.geometric_config_path)
           if config.geometric_config_path else default_config())
    return ModelBundle(multi=multi, risk=risk, geo_config=geo,
                       vocab=config.vocab, alert_debounce=config.alert_debounce)


def _frame_features(bundle: ModelBundle, frame: LandmarkFrame) -> Optional[np.ndarray]:
    mode = bundle.feature_mode
    if mode is None:
        return None
    if mode == RAW_FEATURE_COUNT:
        return frame.coords().reshape(-1)
    fv = feat.extract_features(frame, bundle.feature_spec)
    return feat.with_missing(fv.values[None], fv.valid[None])[0]


class Session:
    """Per-connection state machine: one request line -> one response dict."""

    def __init__(self, bundle: ModelBundle):
        self.bundle = bundle
        self.geo_config = bundle.geo_config
        self.alert_k = bundle.alert_debounce
        self._reset_state()

    def _reset_state(self):
        self.baseline: Optional[CalibrationBaseline] = None
        self.cal_pending = 0
        self.cal_buffer: list[LandmarkFrame] = []
        self.debouncer: Optional[Debouncer] = None
        self._bad_run = 0
        self._good_run = 0
        self._alert = False

    def handle_line(self, line: str) -> dict:
        started = time.perf_counter()
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            return {"type": "error", "error": "parse", "detail": str(exc)}
        if not isinstance(msg, dict) or "type" not in msg:
            return {"type": "error", "error": "parse",
                    "detail": "message must be an object with a 'type' tag"}
        tag = msg["type"]
        if tag == "frame":
            return self._handle_frame(msg, started)
        if tag == "calibrate":
            return self._handle_calibrate(msg)
        if tag == "reset":
            self._reset_state()
            return {"type": "ack", "action": "reset"}
        if tag == "configure":
            return self._handle_configure(msg)
        return {"type": "error", "error": "unknown_type", "detail": f"tag {tag!r}"}

    def _handle_calibrate(self, msg: dict) -> dict:
        n = msg.get("frames")
        if not isinstance(n, int) or n < self.geo_config.n_cal_min:
            return {"type": "error", "error": "bad_calibrate",
                    "detail": f"'frames' must be an int >= {self.geo_config.n_cal_min}"}
        self.cal_pending = n
        self.cal_buffer = []
        self.baseline = None
        self.debouncer = None
        return {"type": "ack", "action": "calibrate", "frames": n}

    def _handle_configure(self, msg: dict) -> dict:
        try:
            if "geometric_config" in msg:
                self.geo_config = config_from_obj(msg["geometric_config"])
                self.debouncer = None
            if "alert_debounce" in msg:
                k = msg["alert_debounce"]
                if not isinstance(k, int) or k < 1:
                    raise ServeError("alert_debounce must be an int >= 1")
                self.alert_k = k
        except (GeometricError, ServeError) as exc:
            return {"type": "error", "error": "bad_configure", "detail": str(exc)}
        return {"type": "ack", "action": "configure"}

    def _handle_frame(self, msg: dict, started: float) -> dict:
        try:
            frame = frame_from_obj(msg)
        except DatasetFormatError as exc:
            return {"type": "error", "error": "bad_frame", "detail": str(exc)}
        check = validate_frame(frame)
        if not check.ok:
            return {"type": "error", "error": "bad_frame",
                    "detail": "; ".join(check.violations)}

        geometric = self._geometric_block(frame)
        predictions = self._prediction_block(frame)
        alert = self._update_alert(predictions.get("risk_label"))
        latency_ms = (time.perf_counter() - started) * 1000.0
        return {
            "type": "classification",
            "ts": frame.timestamp_ms,
            "geometric": geometric,
            "predictions": predictions,
            "alert": alert,
            "latency_ms": round(latency_ms, 3),
        }

    def _geometric_block(self, frame: LandmarkFrame) -> dict:
        if self.cal_pending > 0:
            self.cal_buffer.append(frame)
            self.cal_pending -= 1
            if self.cal_pending > 0:
                return {"status": "calibrating", "remaining": self.cal_pending}
            try:
                self.baseline = calibrate(self.cal_buffer, self.geo_config)
            except GeometricError as exc:
                self.cal_buffer = []
                return {"status": "calibration_failed", "detail": str(exc)}
            self.cal_buffer = []
            return {"status": "calibrating", "remaining": 0}
        if self.baseline is None:
            return {"status": "not_calibrated"}
        dev = deviation(frame, self.baseline, self.geo_config.v_min)
        pose, scores = classify_geometric(dev, frame.fsr, self.geo_config)
        if self.debouncer is None:
            self.debouncer = Debouncer(self.geo_config.debounce_frames)
        smoothed = self.debouncer.push(pose)
        return {
            "status": "ok",
            "pose": smoothed.value,
            "raw_pose": pose.value,
            "scores": {k: round(v, 6) for k, v in scores.items()},
        }

    def _prediction_block(self, frame: LandmarkFrame) -> dict:
        bundle = self.bundle
        if bundle.feature_mode is None:
            return {}
        try:
            x = _frame_features(bundle, frame)
        except feat.FeatureError as exc:
            return {"error": f"feature extraction failed: {exc}"}
        out: dict = {}
        if bundle.multi is not None:
            m = bundle.multi.models
            pw = gbt.predict_proba(m["walker_choice"], x)
            pi = gbt.predict_proba(m["initial_position"], x)
            pp = gbt.predict_proba(m["posture_type"], x)
            out["walker_choice"] = bool(np.argmax(pw))
            out["walker_p"] = round(float(pw.max()), 6)
            out["initial_position"] = "standing" if np.argmax(pi) else "sitting"
            out["init_p"] = round(float(pi.max()), 6)
            posture = int(np.argmax(pp))
            out["posture_type"] = posture
            if posture < len(bundle.vocab):
                out["posture_name"] = bundle.vocab[posture]
            out["posture_p"] = round(float(pp.max()), 6)
        if bundle.risk is not None:
            pr = gbt.predict_proba(bundle.risk, x)
            out["risk_label"] = gbt.RISK_CLASS_NAMES[int(np.argmax(pr))]
            out["risk_p"] = round(float(pr.max()), 6)
        return out

    def _update_alert(self, risk_label: Optional[str]) -> bool:
        if risk_label == "bad_posture":
            self._bad_run += 1
            self._good_run = 0
        elif risk_label is not None:
            self._good_run += 1
            self._bad_run = 0
        else:
            return self._alert
        if not self._alert and self._bad_run >= self.alert_k:
            self._alert = True
        elif self._alert and self._good_run >= self.alert_k:
            self._alert = False
        return self._alert


def serve_stream(bundle: ModelBundle, instream: IO[str], outstream: IO[str]) -> int:
    """stdio transport: classify lines from instream until EOF."""
    session = Session(bundle)
    n = 0
    for line in instream:
        if not line.strip():
            continue
        response = session.handle_line(line)
        outstream.write(json.dumps(response) + "\n")
        outstream.flush()
        n += 1
    return n


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        session = Session(self.server.bundle)  # type: ignore[attr-defined]
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace")
            if not line.strip():
                continue
            response = session.handle_line(line)
            self.wfile.write((json.dumps(response) + "\n").encode("utf-8"))


class ClassificationServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, config: ServerConfig, bundle: ModelBundle):
        super().__init__((config.host, config.port), _Handler)
        self.bundle = bundle


def serve(config: ServerConfig) -> None:
    """Run the service until interrupted (tcp) or EOF (stdio)."""
    bundle = load_bundle(config)
    if config.mode == "stdio":
        serve_stream(bundle, sys.stdin, sys.stdout)
        return
    with ClassificationServer(config, bundle) as server:
        server.serve_forever()


def server_config_from_obj(obj: dict) -> ServerConfig:
    known = {"host", "port", "multi_model", "risk_model", "geometric_config",
             "vocab", "alert_debounce", "mode"}
    unknown = set(obj) - known
    if unknown:
        raise ServeError(f"unknown server config keys: {sorted(unknown)}")
    return ServerConfig(
        host=obj.get("host", "127.0.0.1"),
        port=int(obj.get("port", DEFAULT_PORT)),
        multi_model_path=obj.get("multi_model"),
        risk_model_path=obj.get("risk_model"),
        geometric_config_path=obj.get("geometric_config"),
        vocab=tuple(obj.get("vocab", ())),
        alert_debounce=int(obj.get("alert_debounce", 5)),
        mode=obj.get("mode", "tcp"),
    )
