"""Address space and the IPE gate enforced by the memory protection unit."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

ADDRESS_SPACE = 0x10000
SEGMENT = 0x400
DENIED_WORD = 0x3FFF

# (start, end) half-open; everything else is unmapped
PERIPHERALS = (0x0000, 0x1000)
SRAM = (0x1C00, 0x3C00)
FRAM = (0x4000, 0x10000)
REGIONS = (PERIPHERALS, SRAM, FRAM)


class MemoryFault(Exception):
    """Access to an address that no device decodes."""

    def __init__(self, addr: int, accessor_pc: int = 0):
        super().__init__(f"unmapped address 0x{addr:04X} (pc=0x{accessor_pc:04X})")
        self.addr = addr


class Access(enum.Enum):
    READ = "read"
    WRITE = "write"
    EXECUTE = "execute"


@dataclass(frozen=True)
class IpeConfig:
    start: int
    end: int
    enabled: bool = True

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError("IPE start must precede end")
        if self.start % SEGMENT or self.end % SEGMENT:
            raise ValueError("IPE bounds must be 1 KB aligned")
        if not (FRAM[0] <= self.start and self.end <= FRAM[1]):
            raise ValueError("IPE region must lie in nonvolatile memory")

    def contains(self, addr: int) -> bool:
        return self.start <= addr < self.end


def is_granted(ipe: Optional[IpeConfig], addr: int, accessor_pc: int) -> bool:
    if ipe is None or not ipe.enabled:
        return True
    return not ipe.contains(addr) or ipe.contains(accessor_pc)


@dataclass(frozen=True)
class AccessRecord:
    addr: int
    accessor_pc: int
    kind: Access
    granted: bool


_MAPPED = bytearray(ADDRESS_SPACE)
for _lo, _hi in REGIONS:
    _MAPPED[_lo:_hi] = b"\x01" * (_hi - _lo)


def is_mapped(addr: int) -> bool:
    return 0 <= addr < ADDRESS_SPACE and bool(_MAPPED[addr])


class Memory:
    """Byte-addressed little-endian memory with MPU gating on data accesses.

    Every denied access is appended to ``denials``; with ``log`` set to a list
    every access is recorded there as well.
    """

    def __init__(self, ipe: Optional[IpeConfig] = None):
        self.data = bytearray(ADDRESS_SPACE)
        self.ipe = ipe
        self.denials: list = []
        self.log: Optional[list] = None
        self.write_hooks: list = []

    def clone(self) -> "Memory":
        m = Memory(self.ipe)
        m.data[:] = self.data
        return m

    def _check(self, addr: int, accessor_pc: int, n: int) -> None:
        if not (_MAPPED[addr] if 0 <= addr < ADDRESS_SPACE else 0) or \
                not (_MAPPED[addr + n - 1] if addr + n - 1 < ADDRESS_SPACE else 0):
            raise MemoryFault(addr, accessor_pc)

    def _gate(self, addr: int, accessor_pc: int, kind: Access) -> bool:
        ipe = self.ipe
        ok = ipe is None or not ipe.enabled or not (ipe.start <= addr < ipe.end) \
            or ipe.start <= accessor_pc < ipe.end
        if not ok or self.log is not None:
            rec = AccessRecord(addr, accessor_pc, kind, ok)
            if not ok:
                self.denials.append(rec)
            if self.log is not None:
                self.log.append(rec)
        return ok

    # raw access: loader, decoder fetch, test harness
    def raw_read_word(self, addr: int) -> int:
        self._check(addr, addr, 2)
        return self.data[addr] | (self.data[addr + 1] << 8)

    def raw_write(self, addr: int, payload: bytes) -> None:
        self._check(addr, addr, len(payload))
        self.data[addr:addr + len(payload)] = payload
        for hook in self.write_hooks:
            hook(addr, len(payload))

    def read(self, addr: int, accessor_pc: int, nbytes: int = 2) -> int:
        """Gated little-endian read of 1, 2 or 4 bytes."""
        if nbytes > 1:
            addr &= ~1
        self._check(addr, accessor_pc, nbytes)
        if not self._gate(addr, accessor_pc, Access.READ):
            if nbytes == 1:
                return DENIED_WORD & 0xFF
            return DENIED_WORD if nbytes == 2 else DENIED_WORD | (DENIED_WORD << 16)
        return int.from_bytes(self.data[addr:addr + nbytes], "little")

    def write(self, addr: int, value: int, accessor_pc: int, nbytes: int = 2) -> bool:
        if nbytes > 1:
            addr &= ~1
        self._check(addr, accessor_pc, nbytes)
        if not self._gate(addr, accessor_pc, Access.WRITE):
            return False
        self.data[addr:addr + nbytes] = (value & ((1 << (8 * nbytes)) - 1)).to_bytes(nbytes, "little")
        for hook in self.write_hooks:
            hook(addr, nbytes)
        return True

    def fetch_gate(self, pc: int) -> bool:
        """Execution is never blocked by IPE: any mapped address may be entered."""
        if not (0 <= pc < ADDRESS_SPACE and _MAPPED[pc]):
            raise MemoryFault(pc, pc)
        if self.log is not None:
            self.log.append(AccessRecord(pc, pc, Access.EXECUTE, True))
        return True

    def replay(self, records) -> list:
        """Grant decisions the current configuration makes for logged accesses."""
        return [r.kind is Access.EXECUTE or is_granted(self.ipe, r.addr, r.accessor_pc)
                for r in records]
