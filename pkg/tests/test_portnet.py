"""Broker middleware tests: ordering, fan-out, no-replay, latency."""

import time

import pytest

from phrasebot import portnet
from phrasebot.portnet import (
    Broker,
    InvalidPortName,
    NameCollision,
    OutPort,
    Subscription,
    parse_frame,
    format_frame,
    PortMessage,
    validate_port_name,
)


@pytest.fixture()
def broker():
    b = Broker(port=0).start()
    portnet.reset_session_clock()
    yield b
    b.stop()


def test_port_name_validation():
    validate_port_name("/SpeechRecognition/Sentence")
    validate_port_name("/a")
    for bad in ("noslash", "/has space", "/trailing/", "//double", "/", "/tab\there"):
        with pytest.raises(InvalidPortName):
            validate_port_name(bad)


def test_frame_round_trip():
    msg = PortMessage("/T/x", 1.25, "hello there friend")
    assert parse_frame(format_frame(msg).decode().rstrip("\n")) == msg
    empty = PortMessage("/T/x", 0.0, "")
    assert parse_frame(format_frame(empty).decode().rstrip("\n")) == empty


def test_payload_newline_rejected(broker):
    out = OutPort("/T/nl", port=broker.port)
    with pytest.raises(ValueError):
        out.publish("two\nlines")
    out.close()


def test_fifo_order_under_stress(broker):
    """Per-publisher order is preserved for >= 10^4 messages."""
    n = 10_000
    sub = Subscription("/T/stress", port=broker.port)
    out = OutPort("/T/stress", port=broker.port)
    for i in range(n):
        out.publish(str(i))
    seen = []
    while len(seen) < n:
        msg = sub.next_message(timeout=5.0)
        assert msg is not None, f"lost messages after {len(seen)}"
        seen.append(int(msg.payload))
    assert seen == list(range(n))
    out.close()
    sub.close()


def test_fan_out_to_all_subscribers(broker):
    subs = [Subscription("/T/fan", port=broker.port) for _ in range(3)]
    out = OutPort("/T/fan", port=broker.port)
    for i in range(5):
        out.publish(f"m{i}")
    for sub in subs:
        got = [sub.next_message(timeout=2.0).payload for _ in range(5)]
        assert got == [f"m{i}" for i in range(5)]
    for sub in subs:
        sub.close()
    out.close()


def test_no_replay_for_late_subscriber(broker):
    out = OutPort("/T/late", port=broker.port)
    early = Subscription("/T/late", port=broker.port)
    out.publish("before")
    assert early.next_message(timeout=2.0).payload == "before"
    late = Subscription("/T/late", port=broker.port)
    out.publish("after")
    assert late.next_message(timeout=2.0).payload == "after"
    assert late.next_message(timeout=0.2) is None  # "before" never replayed
    assert early.next_message(timeout=2.0).payload == "after"
    out.close()
    early.close()
    late.close()


def test_out_name_collision(broker):
    a = OutPort("/T/dup", port=broker.port)
    with pytest.raises(NameCollision):
        OutPort("/T/dup", port=broker.port)
    a.close()
    time.sleep(0.2)  # broker frees the name once the socket drops
    b = OutPort("/T/dup", port=broker.port)
    b.close()


def test_timestamps_monotonic(broker):
    out = OutPort("/T/ts", port=broker.port)
    m1 = out.publish("a")
    m2 = out.publish("b")
    assert m2.timestamp >= m1.timestamp >= 0.0
    out.publish("c", at=m2.timestamp + 5.0)
    with pytest.raises(ValueError):
        out.publish("d", at=m2.timestamp)  # behind the explicit stamp above
    out.close()


def test_next_message_timeout_is_none(broker):
    sub = Subscription("/T/quiet", port=broker.port)
    t0 = time.monotonic()
    assert sub.next_message(timeout=0.3) is None
    assert time.monotonic() - t0 >= 0.25
    sub.close()


def test_closed_handle_raises(broker):
    out = OutPort("/T/closed", port=broker.port)
    out.close()
    with pytest.raises(portnet.ClosedHandle):
        out.publish("x")
    sub = Subscription("/T/closed2", port=broker.port)
    sub.close()
    with pytest.raises(portnet.ClosedHandle):
        sub.next_message(timeout=0.1)


def test_broker_unreachable():
    with pytest.raises(portnet.BrokerUnreachable):
        OutPort("/T/x", port=1)  # nothing listens on port 1


def test_loopback_latency_p99(broker):
    """p99 publish->receive latency below 10 ms on loopback."""
    sub = Subscription("/T/lat", port=broker.port)
    out = OutPort("/T/lat", port=broker.port)
    # warm-up
    out.publish("w")
    assert sub.next_message(timeout=2.0) is not None
    lats = []
    for i in range(500):
        t0 = time.perf_counter()
        out.publish(str(i))
        msg = sub.next_message(timeout=2.0)
        lats.append(time.perf_counter() - t0)
        assert msg is not None and msg.payload == str(i)
    lats.sort()
    p99 = lats[int(0.99 * len(lats)) - 1]
    assert p99 < 0.010, f"p99 latency {p99 * 1e3:.2f} ms"
    out.close()
    sub.close()


def test_env_override_for_default_port(monkeypatch):
    monkeypatch.setenv(portnet.BROKER_PORT_ENV, "7777")
    assert portnet.default_broker_port() == 7777
    monkeypatch.delenv(portnet.BROKER_PORT_ENV)
    assert portnet.default_broker_port() == portnet.DEFAULT_BROKER_PORT


def test_open_port_directions(broker):
    out = portnet.open_port("/T/dir", "out", port=broker.port)
    inp = portnet.open_port("/T/dir", "in", port=broker.port)
    assert isinstance(out, OutPort)
    assert isinstance(inp, Subscription)
    out.publish("ping")
    assert inp.next_message(timeout=2.0).payload == "ping"
    with pytest.raises(ValueError):
        portnet.open_port("/T/dir", "sideways", port=broker.port)
    out.close()
    inp.close()
