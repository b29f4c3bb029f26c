import pytest
from hypothesis import given, strategies as st

from ripencap.peripherals import Timer, UartChannel, estimate_transfer_seconds, uart_send


@given(st.integers(0, 10**7), st.sampled_from([9600, 57600, 115200, 921600]))
def test_estimate_is_ten_bits_per_byte_and_linear(n, baud):
    t = estimate_transfer_seconds(n, baud)
    assert t == pytest.approx(n * 10 / baud)
    assert estimate_transfer_seconds(n, 2 * baud) == pytest.approx(t / 2)


def test_zero_bytes_take_no_time():
    assert estimate_transfer_seconds(0, 115200) == 0


def test_bad_baud():
    with pytest.raises(ValueError):
        estimate_transfer_seconds(10, 0)


def test_uart_bytes_only_grow():
    ch = UartChannel()
    uart_send(ch, b"ab")
    uart_send(ch, b"c")
    assert bytes(ch.data) == b"abc"
    assert ch.transfer_seconds() == pytest.approx(30 / 115200)


def test_timer_due_after_compare_cycles():
    t = Timer()
    t.arm(100, 3)
    assert not t.due(102) and t.due(103)
    t.stop()
    assert not t.due(200)
    with pytest.raises(ValueError):
        t.arm(0, 0)
