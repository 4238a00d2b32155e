import io
import json
import socket
import threading

import numpy as np
import pytest

from walkerpose import gbt
from walkerpose.features import batch_extract, with_missing
from walkerpose.geometric import config_to_obj, default_config
from walkerpose.pose import frame_to_obj
from walkerpose.serve import (
    ClassificationServer,
    ModelBundle,
    ServeError,
    ServerConfig,
    Session,
    serve_stream,
    server_config_from_obj,
)
from walkerpose.synth import (
    GeneratorSpec, NoiseModel, TEMPLATES, ZERO_NOISE,
    generate_dataset, generate_session, session_truth,
)


def frame_line(name="standing", ts=0, fsr=None):
    template = TEMPLATES[name]
    from conftest import make_frame
    frame = make_frame(template.coords, ts=ts,
                       fsr=template.fsr if fsr is None else fsr)
    obj = frame_to_obj(frame)
    obj["type"] = "frame"
    return json.dumps(obj)


@pytest.fixture(scope="module")
def trained_bundle():
    """Small models trained on a reduced synthetic dataset."""
    ds = generate_dataset(GeneratorSpec(n_participants=3, frames_per_class=8),
                          NoiseModel(jitter_sigma=0.01, participant_sigma=0.0), seed=13)
    batch = batch_extract(ds)
    X = with_missing(batch.values, batch.valid)
    labels = {
        "walker_choice": np.array([int(r.walker_choice) for _, r in ds.samples]),
        "initial_position": np.array([int(r.initial_position.value == "standing")
                                      for _, r in ds.samples]),
        "posture_type": np.array([r.posture_type for _, r in ds.samples]),
    }
    params = {
        "walker_choice": gbt.GBTParams(n_rounds=5),
        "initial_position": gbt.GBTParams(n_rounds=5),
        "posture_type": gbt.GBTParams(objective="softmax", n_classes=17, n_rounds=5),
    }
    multi, _ = gbt.train_multi_output(X, labels, params)
    risk = np.array([gbt.RISK_CLASS_NAMES.index(r.risk_label.value)
                     for _, r in ds.samples])
    risk_model = gbt.train_single_risk(
        X, risk, gbt.GBTParams(objective="softmax", n_classes=3, n_rounds=5))
    return ModelBundle(multi=multi, risk=risk_model,
                       vocab=tuple(ds.vocabulary.names))


def test_protocol_walkthrough(trained_bundle):
    session = Session(trained_bundle)
    ack = session.handle_line(json.dumps({"type": "calibrate", "frames": 20}))
    assert ack == {"type": "ack", "action": "calibrate", "frames": 20}
    for i in range(20):
        r = session.handle_line(frame_line(ts=i * 100))
        assert r["type"] == "classification"
        assert r["geometric"]["status"] == "calibrating"
        assert r["geometric"]["remaining"] == 19 - i
    r = session.handle_line(frame_line(ts=2100))
    assert r["geometric"]["status"] == "ok"
    assert r["geometric"]["pose"] == "standing_still"
    assert r["predictions"]["posture_name"] == "standing"
    assert r["predictions"]["risk_label"] == "standing"
    assert r["alert"] is False
    assert r["latency_ms"] >= 0


def test_frame_before_calibration_still_serves_models(trained_bundle):
    session = Session(trained_bundle)
    r = session.handle_line(frame_line())
    assert r["geometric"] == {"status": "not_calibrated"}
    assert "posture_type" in r["predictions"]


def test_malformed_line_keeps_connection(trained_bundle):
    session = Session(trained_bundle)
    r = session.handle_line("{not json")
    assert r["type"] == "error" and r["error"] == "parse"
    r = session.handle_line(frame_line())
    assert r["type"] == "classification"


def test_unknown_tag(trained_bundle):
    r = Session(trained_bundle).handle_line(json.dumps({"type": "dance"}))
    assert r["error"] == "unknown_type"


def test_bad_frame_payload(trained_bundle):
    obj = {"type": "frame", "ts": 0, "pid": "p", "view": "full", "lm": [[0, 0, 0, 1]]}
    r = Session(trained_bundle).handle_line(json.dumps(obj))
    assert r["error"] == "bad_frame"


def test_reset_clears_calibration(trained_bundle):
    session = Session(trained_bundle)
    session.handle_line(json.dumps({"type": "calibrate", "frames": 10}))
    for i in range(10):
        session.handle_line(frame_line(ts=i * 100))
    assert session.baseline is not None
    r = session.handle_line(json.dumps({"type": "reset"}))
    assert r == {"type": "ack", "action": "reset"}
    assert session.baseline is None
    r = session.handle_line(frame_line())
    assert r["geometric"]["status"] == "not_calibrated"


def test_configure_rejects_bad_config(trained_bundle):
    session = Session(trained_bundle)
    r = session.handle_line(json.dumps({"type": "configure",
                                        "geometric_config": {"bogus": 1}}))
    assert r["error"] == "bad_configure"
    cfg_obj = config_to_obj(default_config())
    r = session.handle_line(json.dumps({"type": "configure",
                                        "geometric_config": cfg_obj,
                                        "alert_debounce": 3}))
    assert r == {"type": "ack", "action": "configure"}
    assert session.alert_k == 3


def test_alert_debounce_contract(trained_bundle):
    session = Session(trained_bundle)
    k = session.alert_k
    alerts = []
    # standing frames, then a sustained lean well past the alert window
    for i in range(10):
        r = session.handle_line(frame_line("standing", ts=i * 100))
        alerts.append(r["alert"])
    assert not any(alerts)
    bad_alerts = []
    for i in range(k + 5):
        r = session.handle_line(frame_line("fall_forward", ts=1000 + i * 100))
        bad_alerts.append(r["alert"])
    assert not any(bad_alerts[:k - 1])
    assert all(bad_alerts[k - 1:])
    clear = []
    for i in range(k + 5):
        r = session.handle_line(frame_line("standing", ts=3000 + i * 100))
        clear.append(r["alert"])
    assert all(clear[:k - 1])
    assert not any(clear[k - 1:])


def test_one_response_per_line_in_order(trained_bundle):
    lines = [json.dumps({"type": "calibrate", "frames": 10})]
    lines += [frame_line(ts=i * 100) for i in range(30)]
    lines.insert(7, "garbage")
    instream = io.StringIO("\n".join(lines) + "\n")
    outstream = io.StringIO()
    n = serve_stream(trained_bundle, instream, outstream)
    responses = [json.loads(l) for l in outstream.getvalue().splitlines()]
    assert n == len(lines) == len(responses)
    assert responses[0]["type"] == "ack"
    assert responses[7]["error"] == "parse"
    ts = [r["ts"] for r in responses if r.get("type") == "classification"]
    assert ts == sorted(ts)


def test_stdio_session_matches_truth(trained_bundle):
    session_ds = generate_session(noise=ZERO_NOISE, seed=0)
    frames = [f for f, _ in session_ds.samples]
    truth = session_truth(session_ds)
    lines = [json.dumps({"type": "calibrate", "frames": 20})]
    for frame in frames:
        obj = frame_to_obj(frame)
        obj["type"] = "frame"
        lines.append(json.dumps(obj))
    outstream = io.StringIO()
    serve_stream(trained_bundle, io.StringIO("\n".join(lines) + "\n"), outstream)
    responses = [json.loads(l) for l in outstream.getvalue().splitlines()][1:]
    assert len(responses) == len(frames)
    k = default_config().debounce_frames
    wrong = 0
    checked = 0
    for i, (r, expected) in enumerate(zip(responses, truth)):
        if i < 20:  # calibration window
            continue
        if i % 150 < 5 + k:  # transition + debounce tolerance
            continue
        checked += 1
        wrong += r["geometric"]["pose"] != expected
    assert checked > 1000
    assert wrong / checked <= 0.01


def test_tcp_round_trip(trained_bundle):
    config = ServerConfig(port=0)
    server = ClassificationServer(config, trained_bundle)
    port = server.server_address[1]
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        with socket.create_connection(("127.0.0.1", port), timeout=5) as sock:
            f = sock.makefile("rw", encoding="utf-8")
            f.write(frame_line() + "\n")
            f.flush()
            response = json.loads(f.readline())
            assert response["type"] == "classification"
            assert response["geometric"]["status"] == "not_calibrated"
        # second connection has independent calibration state
        with socket.create_connection(("127.0.0.1", port), timeout=5) as sock:
            f = sock.makefile("rw", encoding="utf-8")
            f.write(json.dumps({"type": "calibrate", "frames": 10}) + "\n")
            f.flush()
            assert json.loads(f.readline())["type"] == "ack"
    finally:
        server.shutdown()
        server.server_close()


def test_bundle_rejects_mixed_feature_modes(trained_bundle):
    rng = np.random.default_rng(0)
    raw_model = gbt.train_gbt(rng.normal(size=(40, 99)), rng.integers(0, 2, 40),
                              gbt.GBTParams(n_rounds=2))
    with pytest.raises(ServeError, match="feature mode"):
        ModelBundle(multi=trained_bundle.multi, risk=raw_model)


def test_server_config_parsing():
    config = server_config_from_obj({"port": 9000, "mode": "stdio"})
    assert config.port == 9000 and config.mode == "stdio"
    with pytest.raises(ServeError):
        server_config_from_obj({"bogus": 1})
    with pytest.raises(ServeError):
        ServerConfig(alert_debounce=0)


def test_restart_behaviorally_identical(trained_bundle):
    # same models + config -> identical responses modulo measured latency
    lines = [json.dumps({"type": "calibrate", "frames": 10})]
    lines += [frame_line(ts=i * 100, name=("standing" if i % 7 else "fall_forward"))
              for i in range(40)]

    def run():
        out = io.StringIO()
        serve_stream(trained_bundle, io.StringIO("\n".join(lines) + "\n"), out)
        responses = [json.loads(l) for l in out.getvalue().splitlines()]
        for r in responses:
            r.pop("latency_ms", None)
        return responses

    assert run() == run()
