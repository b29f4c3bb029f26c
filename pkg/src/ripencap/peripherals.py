"""Compare-mode timer, interrupt vectors and the UART exfiltration pipe."""

from __future__ import annotations

from dataclasses import dataclass, field

DEFAULT_INTERRUPT_LATENCY = 6
TIMER_IRQ = "timer"

VECTORS = {
    "timer": 0xFFEA,
    "reset": 0xFFFE,
}


@dataclass
class Timer:
    """One-shot compare timer counting CPU cycles.

    ``armed_at`` is the cycle counter value when the compare was loaded; the
    interrupt becomes pending once ``compare`` cycles have elapsed.
    """

    compare: int = 0
    running: bool = False
    irq_enabled: bool = True
    armed_at: int = 0

    def arm(self, now: int, compare: int) -> None:
        if compare < 1:
            raise ValueError("timer compare must be >= 1")
        self.compare = compare
        self.armed_at = now
        self.running = True

    def due(self, now: int) -> bool:
        return self.running and now - self.armed_at >= self.compare

    def stop(self) -> None:
        self.running = False


@dataclass
class UartChannel:
    baud: int = 115200
    data: bytearray = field(default_factory=bytearray)

    def send(self, payload: bytes) -> None:
        self.data.extend(payload)

    def transfer_seconds(self) -> float:
        return estimate_transfer_seconds(len(self.data), self.baud)


def estimate_transfer_seconds(n_bytes: int, baud: float) -> float:
    """8N1 framing: ten bit times per byte."""
    if baud <= 0:
        raise ValueError("baud must be positive")
    return n_bytes * 10 / baud


def uart_send(channel: UartChannel, payload: bytes) -> None:
    channel.send(payload)
