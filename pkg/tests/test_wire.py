import random
import socket
import threading
import time

import pytest
from hypothesis import given, settings, strategies as st

from gridmeter.errors import ConfigError, DecodeError, TransportError
from gridmeter.wire import (
    Metric,
    MetricPacket,
    Receiver,
    Sender,
    TransportConfig,
    decode_xml,
    encode_datagrams,
    encode_xml,
    send,
)

xml_text = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00￾￿",
                                 codec="utf-8").filter(lambda c: c >= " " or c in "\t\n\r"),
                   max_size=12)
names = st.from_regex(r"[A-Za-z0-9_.]{1,16}", fullmatch=True)
metrics = st.builds(
    Metric,
    name=names,
    value=st.integers(-10**12, 10**12).map(lambda k: k / 1000),
    units=xml_text,
    group=st.none() | xml_text,
    gaps=st.none() | st.integers(0, 10**6),
)
packets = st.builds(MetricPacket, host=xml_text.filter(bool), t=st.integers(0, 2**40),
                    metrics=st.lists(metrics, min_size=1, max_size=8).map(tuple))


def wait_for(pred, timeout=3.0):
    end = time.time() + timeout
    while time.time() < end:
        if pred():
            return True
        time.sleep(0.01)
    return pred()


@pytest.fixture
def receiver():
    r = Receiver(TransportConfig("unicast", "127.0.0.1:0"))
    got = []
    stop = threading.Event()
    th = threading.Thread(target=r.recv_loop, args=(got.append, stop), daemon=True)
    th.start()
    r.got = got
    yield r
    stop.set()
    th.join()
    r.close()


def test_grammar_instance():
    p = MetricPacket("n1", 100, (Metric("cpu_total", 42.5, "%"),))
    assert encode_xml(p) == b'<metrics host="n1" t="100"><metric name="cpu_total" val="42.5" units="%"/></metrics>'


def test_optional_attributes_and_escaping():
    p = MetricPacket('a"b', 5, (Metric("m", -0.25, "<&>", "g\n1", 3),))
    data = encode_xml(p)
    assert data == (b'<metrics host="a&quot;b" t="5"><metric name="m" val="-0.25" units="&lt;&amp;&gt;"'
                    b' group="g&#10;1" gaps="3"/></metrics>')
    assert decode_xml(data) == p


def test_value_normalised_to_three_digits():
    assert Metric("x", 1.23456).value == 1.235
    assert Metric("x", -0.0).value == 0.0


@settings(max_examples=500, deadline=None)
@given(packets)
def test_round_trip(p):
    data = encode_xml(p)
    assert encode_xml(p) == data
    assert decode_xml(data) == p


@pytest.mark.parametrize("bad", [
    b'<metrics t="1"><metric name="a" val="1" units=""/></metrics>',
    b'<metrics host="h"><metric name="a" val="1" units=""/></metrics>',
    b'<metrics host="h" t="1"></metrics>',
    b'<metrics host="h" t="1"><metric name="a" units=""/></metrics>',
    b'<metrics host="h" t="1"><metric name="a b" val="1" units=""/></metrics>',
    b'<metrics host="h" t="1"><metric name="a" val="1.2345" units=""/></metrics>',
    b'<metrics host="h" t="1"><metric name="a" val="nan" units=""/></metrics>',
    b'<metrics host="h" t="-1"><metric name="a" val="1" units=""/></metrics>',
    b'<metrics host="h" t="1"><other/></metrics>',
    b'<!DOCTYPE x [<!ENTITY a "b">]><metrics host="h" t="1"><metric name="a" val="1" units=""/></metrics>',
    b'<metrics host="h" t="1"><metric name="a" val="1" units=""/>',
    b"\xff\xfe",
    b"",
])
def test_decode_errors(bad):
    with pytest.raises(DecodeError):
        decode_xml(bad)


def test_unknown_attributes_ignored():
    p = decode_xml(b'<metrics host="h" t="1" v="2"><metric name="a" val="1" units="" slope="up"/></metrics>')
    assert p == MetricPacket("h", 1, (Metric("a", 1.0, ""),))


def test_invalid_packets_rejected():
    with pytest.raises(ValueError):
        MetricPacket("", 1, (Metric("a", 1),))
    with pytest.raises(ValueError):
        MetricPacket("h", 1, ())
    with pytest.raises(ValueError):
        Metric("bad name", 1)
    with pytest.raises(ValueError):
        Metric("a", float("inf"))


def test_split_preserves_order_and_size():
    ms = tuple(Metric(f"metric_{i}", i * 1.5, "%", f"g{i % 7}", i % 3 or None) for i in range(2000))
    p = MetricPacket("node-17", 1_700_000_000, ms)
    datagrams = encode_datagrams(p, 8192)
    assert len(datagrams) >= 2
    assert all(len(d) <= 8192 for d in datagrams)
    rejoined = [m for d in datagrams for m in decode_xml(d).metrics]
    assert tuple(rejoined) == ms
    assert all(decode_xml(d).host == "node-17" for d in datagrams)


@settings(max_examples=100, deadline=None)
@given(packets, st.integers(300, 2000))
def test_datagram_size_bound(p, limit):
    try:
        datagrams = encode_datagrams(p, limit)
    except ValueError:
        return  # a single metric larger than the limit
    assert all(len(d) <= limit for d in datagrams)
    assert tuple(m for d in datagrams for m in decode_xml(d).metrics) == p.metrics


def test_transport_config_validation():
    with pytest.raises(ConfigError):
        TransportConfig("multicast", "10.0.0.1:8649")
    with pytest.raises(ConfigError):
        TransportConfig("broadcast", "10.0.0.1:8649")
    assert TransportConfig("multicast", "239.2.11.71:8649").endpoint == ("239.2.11.71", 8649)
    assert TransportConfig("unicast", "n1").endpoint == ("n1", 8649)


def test_send_one_datagram(receiver):
    p = MetricPacket("n1", 100, (Metric("cpu_total", 42.5, "%"),))
    assert send(p, TransportConfig("unicast", f"127.0.0.1:{receiver.port}")) == 1
    assert wait_for(lambda: receiver.got)
    assert receiver.got == [p]


def test_send_oversize_counts_split(receiver):
    ms = tuple(Metric(f"m{i}", i, "B") for i in range(1500))
    p = MetricPacket("n1", 5, ms)
    expected = len(encode_datagrams(p, 8192))
    assert send(p, TransportConfig("unicast", f"127.0.0.1:{receiver.port}")) == expected
    assert wait_for(lambda: len(receiver.got) == expected)
    assert tuple(m for q in receiver.got for m in q.metrics) == ms


def test_send_to_nobody_is_not_an_error():
    s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    with Sender(TransportConfig("unicast", f"127.0.0.1:{port}")) as sender:
        p = MetricPacket("n1", 1, (Metric("a", 1),))
        for _ in range(5):
            assert sender.send(p) == 1


def test_two_hosts_interleaved(receiver):
    cfg = TransportConfig("unicast", f"127.0.0.1:{receiver.port}")
    with Sender(cfg) as a, Sender(cfg) as b:
        for t in range(10):
            a.send(MetricPacket("alpha", t, (Metric("x", t),)))
            b.send(MetricPacket("beta", t, (Metric("x", -t),)))
    assert wait_for(lambda: len(receiver.got) == 20)
    for p in receiver.got:
        assert p.metrics[0].value == (p.t if p.host == "alpha" else -p.t)


def test_corrupted_datagrams_counted(receiver):
    rng = random.Random(7)
    raw = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    good = encode_xml(MetricPacket("n1", 1, (Metric("a", 1), Metric("b", 2))))
    corrupted = 0
    for i in range(200):
        if rng.random() < 0.1:
            raw.sendto(good[: rng.randrange(len(good))], ("127.0.0.1", receiver.port))
            corrupted += 1
        else:
            raw.sendto(good, ("127.0.0.1", receiver.port))
        if i % 20 == 0:
            time.sleep(0.005)
    raw.close()
    assert wait_for(lambda: receiver.received + receiver.dropped == 200)
    assert receiver.dropped == corrupted
    assert receiver.received == 200 - corrupted


def test_multicast_loopback():
    group = "239.255.86.49"
    probe = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    probe.bind(("", 0))
    port = probe.getsockname()[1]
    probe.close()
    cfg = TransportConfig("multicast", f"{group}:{port}", multicast_if="127.0.0.1")
    with Receiver(cfg) as r:
        got = []
        stop = threading.Event()
        th = threading.Thread(target=r.recv_loop, args=(got.append, stop), daemon=True)
        th.start()
        p = MetricPacket("n1", 9, (Metric("cpu_idle", 97.25, "%"),))
        assert send(p, cfg) == 1
        assert wait_for(lambda: got)
        stop.set()
        th.join()
    assert got == [p]


def test_bind_failure():
    with Receiver(TransportConfig("unicast", "127.0.0.1:0")) as first:
        s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            s.bind(("127.0.0.1", 0))
            port = s.getsockname()[1]
            with pytest.raises(TransportError):
                Receiver(TransportConfig("unicast", f"127.0.0.1:{port}"))
        finally:
            s.close()
        assert first.port
