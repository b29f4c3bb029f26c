"""Instruction execution, interrupt entry and run control."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional

from .isa import (
    C_BIT, CPUOFF, GIE, N_BIT, PC, SP, SR, V_BIT, Z_BIT, DecodedForm, Format, Mode, Width,
    decode,
)
from .memory import Memory
from .peripherals import DEFAULT_INTERRUPT_LATENCY, TIMER_IRQ, VECTORS, Timer, UartChannel

REG_MASK = 0xFFFFF


class StepKind(enum.Enum):
    EXECUTED = "executed"
    INTERRUPT_ENTERED = "interrupt"
    MPU_VIOLATION = "mpu_violation"
    HALT = "halt"
    DECODE_FAULT = "decode_fault"


@dataclass(frozen=True)
class StepEvent:
    kind: StepKind
    pc_before: int
    pc_after: int
    retired: Optional[DecodedForm] = None


class MachineState:
    """Complete simulator state: registers, cycle counter, memory and peripherals."""

    def __init__(self, memory: Optional[Memory] = None, latency: int = DEFAULT_INTERRUPT_LATENCY):
        self.regs = [0] * 16
        self.cycles = 0
        self.halted = False
        self.memory = memory if memory is not None else Memory()
        self.pending_irq: Optional[str] = None
        self.timer = Timer()
        self.uart = UartChannel()
        self.latency = latency
        # bookkeeping for the cycle-additivity invariant
        self.retired_cycles = 0
        self.interrupts_taken = 0
        self._decoded: dict = {}
        self.memory.write_hooks.append(self._invalidate)

    def _invalidate(self, addr: int, n: int) -> None:
        if self._decoded:
            for a in range(addr - 7, addr + n):
                self._decoded.pop(a, None)

    def clone(self) -> "MachineState":
        other = MachineState(self.memory.clone(), self.latency)
        other.regs = list(self.regs)
        other.cycles = self.cycles
        other.halted = self.halted
        other.pending_irq = self.pending_irq
        other.timer = Timer(self.timer.compare, self.timer.running, self.timer.irq_enabled,
                            self.timer.armed_at)
        other.uart = UartChannel(self.uart.baud, bytearray(self.uart.data))
        return other

    # convenience accessors
    @property
    def pc(self) -> int:
        return self.regs[PC]

    @pc.setter
    def pc(self, v: int) -> None:
        self.regs[PC] = v & 0xFFFFE

    @property
    def sp(self) -> int:
        return self.regs[SP]

    @sp.setter
    def sp(self, v: int) -> None:
        self.regs[SP] = v & 0xFFFFE

    @property
    def sr(self) -> int:
        return self.regs[SR]

    @sr.setter
    def sr(self, v: int) -> None:
        self.regs[SR] = v & 0xFFFF

    def flag(self, bit: int) -> bool:
        return bool(self.regs[SR] & bit)

    def decode_at(self, addr: int) -> DecodedForm:
        form = self._decoded.get(addr)
        if form is None:
            form = decode(self.memory.raw_read_word, addr)
            self._decoded[addr] = form
        return form

    def push_word(self, value: int, accessor_pc: int) -> None:
        self.sp = self.regs[SP] - 2
        self.memory.write(self.regs[SP], value & 0xFFFF, accessor_pc, 2)

    def pop_word(self, accessor_pc: int) -> int:
        v = self.memory.read(self.regs[SP], accessor_pc, 2)
        self.sp = self.regs[SP] + 2
        return v


# ---------------------------------------------------------------------------
# peripherals interface

def timer_arm(state: MachineState, compare: int) -> None:
    """Raise the timer interrupt once ``compare`` cycles have elapsed from now."""
    state.timer.arm(state.cycles, compare)
    state.pending_irq = None


def interrupt_enter(state: MachineState, irq: str = TIMER_IRQ) -> None:
    """Push the next PC then SR, clear GIE and vector to the handler."""
    pc = state.regs[PC]
    state.push_word(pc, pc)
    state.push_word(state.regs[SR], pc)
    state.sr = state.regs[SR] & ~(GIE | CPUOFF)
    state.regs[PC] = state.memory.raw_read_word(VECTORS[irq])
    state.cycles += state.latency
    state.interrupts_taken += 1
    state.pending_irq = None
    if irq == TIMER_IRQ:
        state.timer.stop()


# ---------------------------------------------------------------------------
# arithmetic

def _add(d: int, s: int, carry: int, w: Width) -> tuple:
    mask, msb = w.mask, w.msb
    r = d + s + carry
    c = r > mask
    r &= mask
    v = bool((s ^ r) & (d ^ r) & msb)
    return r, c, v


def _dadd(d: int, s: int, carry: int, w: Width) -> tuple:
    digits = w.value // 4 if w is not Width.ADDR else 4
    r = 0
    for i in range(digits):
        t = ((d >> 4 * i) & 0xF) + ((s >> 4 * i) & 0xF) + carry
        carry = 1 if t > 9 else 0
        if carry:
            t -= 10
        r |= (t & 0xF) << (4 * i)
    return r, bool(carry)


def double_op(mnem: str, s: int, d: int, sr: int, w: Width) -> tuple:
    """Value-level semantics of a two-operand op.

    Returns ``(result, new_sr, writes)``; ``result`` is masked to ``w``.
    """
    mask, msb = w.mask, w.msb
    s &= mask
    d &= mask
    c_in = sr & C_BIT
    if mnem == "MOV":
        return s, sr, True
    if mnem == "BIC":
        return d & ~s & mask, sr, True
    if mnem == "BIS":
        return d | s, sr, True
    if mnem in ("ADD", "ADDC", "SUB", "SUBC", "CMP"):
        if mnem in ("ADD", "ADDC"):
            operand, carry = s, (c_in if mnem == "ADDC" else 0)
        else:
            operand, carry = (~s) & mask, (c_in if mnem == "SUBC" else 1)
        r, c, v = _add(d, operand, carry, w)
        return r, _flags(sr, r, c, v, w), mnem != "CMP"
    if mnem in ("AND", "BIT"):
        r = s & d
        return r, _flags(sr, r, r != 0, False, w), mnem == "AND"
    if mnem == "XOR":
        r = s ^ d
        return r, _flags(sr, r, r != 0, bool(s & msb and d & msb), w), True
    if mnem == "DADD":
        r, c = _dadd(d, s, c_in, w)
        return r, _flags(sr, r, c, False, w), True
    raise ValueError(mnem)


def _flags(sr: int, r: int, c: bool, v: bool, w: Width) -> int:
    sr &= ~(C_BIT | Z_BIT | N_BIT | V_BIT)
    if c:
        sr |= C_BIT
    if r == 0:
        sr |= Z_BIT
    if r & w.msb:
        sr |= N_BIT
    if v:
        sr |= V_BIT
    return sr


def single_op(mnem: str, d: int, sr: int, w: Width) -> tuple:
    mask, msb = w.mask, w.msb
    d &= mask
    if mnem == "RRC":
        r = (d >> 1) | (msb if sr & C_BIT else 0)
        return r, _flags(sr, r, bool(d & 1), False, w)
    if mnem == "RRA":
        r = (d >> 1) | (d & msb)
        return r, _flags(sr, r, bool(d & 1), False, w)
    if mnem == "SWPB":
        return ((d >> 8) | (d << 8)) & 0xFFFF, sr
    if mnem == "SXT":
        r = (d & 0xFF) | (0xFF00 if d & 0x80 else 0)
        return r, _flags(sr, r, r != 0, False, Width.WORD)
    raise ValueError(mnem)


JUMP_CONDITIONS = {
    "JNE": lambda sr: not sr & Z_BIT,
    "JEQ": lambda sr: bool(sr & Z_BIT),
    "JNC": lambda sr: not sr & C_BIT,
    "JC": lambda sr: bool(sr & C_BIT),
    "JN": lambda sr: bool(sr & N_BIT),
    "JGE": lambda sr: bool(sr & N_BIT) == bool(sr & V_BIT),
    "JL": lambda sr: bool(sr & N_BIT) != bool(sr & V_BIT),
    "JMP": lambda sr: True,
}


# ---------------------------------------------------------------------------
# execution

def _ea(state: MachineState, op, accessor: int) -> int:
    if op.mode is Mode.INDEXED:
        return (state.regs[op.reg] + op.value) & 0xFFFF
    if op.mode in (Mode.SYMBOLIC, Mode.ABSOLUTE):
        return op.value & 0xFFFF
    return state.regs[op.reg] & 0xFFFF


def _read_src(state: MachineState, op, w: Width, pc: int) -> int:
    m = op.mode
    if m is Mode.REG:
        return state.regs[op.reg] & w.mask
    if m is Mode.IMM:
        return op.value & w.mask
    n = w.nbytes
    v = state.memory.read(_ea(state, op, pc), pc, n)
    if m is Mode.AUTOINC:
        step = n if not (op.reg == SP and n == 1) else 2
        state.regs[op.reg] = (state.regs[op.reg] + step) & REG_MASK
    return v & w.mask


def _write_reg(state: MachineState, reg: int, value: int, w: Width) -> None:
    value &= w.mask
    if reg == PC:
        state.regs[PC] = value & 0xFFFFE
    elif reg == SP:
        state.regs[SP] = value & 0xFFFFE
    elif reg == SR:
        state.regs[SR] = value & 0xFFFF
    else:
        state.regs[reg] = value


def _execute(state: MachineState, f: DecodedForm, pc: int) -> None:
    regs = state.regs
    regs[PC] = (pc + f.size) & 0xFFFF
    if f.fmt is Format.JUMP:
        if JUMP_CONDITIONS[f.mnemonic](regs[SR]):
            regs[PC] = f.target
        return
    w = f.width
    if f.fmt is Format.DOUBLE:
        s = _read_src(state, f.src, w, pc)
        d_op = f.dst
        if d_op.mode is Mode.REG:
            d = regs[d_op.reg] & w.mask
            r, new_sr, writes = double_op(f.mnemonic, s, d, regs[SR], w)
            regs[SR] = new_sr
            if writes:
                _write_reg(state, d_op.reg, r, w)
        else:
            addr = _ea(state, d_op, pc)
            if f.mnemonic == "MOV":
                state.memory.write(addr, s, pc, w.nbytes)
                return
            d = state.memory.read(addr, pc, w.nbytes)
            r, new_sr, writes = double_op(f.mnemonic, s, d, regs[SR], w)
            regs[SR] = new_sr
            if writes:
                state.memory.write(addr, r, pc, w.nbytes)
        return
    if f.fmt is Format.SINGLE:
        m = f.mnemonic
        if m == "RETI":
            regs[SR] = state.pop_word(pc)
            regs[PC] = state.pop_word(pc) & 0xFFFE
            return
        op = f.src
        if m == "PUSH":
            v = _read_src(state, op, w, pc)
            state.sp = regs[SP] - 2
            state.memory.write(regs[SP], v, pc, w.nbytes)
            return
        if m == "CALL":
            target = _read_src(state, op, Width.WORD, pc)
            state.push_word(regs[PC], pc)
            regs[PC] = target & 0xFFFE
            return
        if op.mode is Mode.REG:
            r, regs[SR] = single_op(m, regs[op.reg], regs[SR], w)
            _write_reg(state, op.reg, r, w)
        else:
            addr = _ea(state, op, pc)
            d = state.memory.read(addr, pc, w.nbytes)
            if op.mode is Mode.AUTOINC:
                regs[op.reg] = (regs[op.reg] + w.nbytes) & REG_MASK
            r, regs[SR] = single_op(m, d, regs[SR], w)
            state.memory.write(addr, r, pc, w.nbytes)
        return
    _execute_cpux(state, f, pc)


def _execute_cpux(state: MachineState, f: DecodedForm, pc: int) -> None:
    regs = state.regs
    if f.mnemonic == "CALLA":
        op = f.src
        if op.mode is Mode.REG:
            target = regs[op.reg]
        elif op.mode is Mode.IMM:
            target = op.value
        else:
            target = state.memory.read(regs[op.reg] & 0xFFFF, pc, 4) & REG_MASK
        state.sp = regs[SP] - 4
        state.memory.write(regs[SP], regs[PC], pc, 4)
        regs[PC] = target & 0xFFFFE
        return
    s_op, d_op = f.src, f.dst
    if s_op.mode is Mode.REG:
        s = regs[s_op.reg]
    elif s_op.mode is Mode.IMM:
        s = s_op.value & REG_MASK
    else:
        s = state.memory.read(_ea(state, s_op, pc), pc, 4) & REG_MASK
        if s_op.mode is Mode.AUTOINC:
            regs[s_op.reg] = (regs[s_op.reg] + 4) & REG_MASK
    if f.mnemonic == "MOVA":
        if d_op.mode is Mode.REG:
            _write_reg(state, d_op.reg, s, Width.ADDR)
        else:
            state.memory.write(_ea(state, d_op, pc), s, pc, 4)
        return
    d = regs[d_op.reg]
    mnem = {"ADDA": "ADD", "SUBA": "SUB", "CMPA": "CMP"}[f.mnemonic]
    r, regs[SR], writes = double_op(mnem, s, d, regs[SR], Width.ADDR)
    if writes:
        _write_reg(state, d_op.reg, r, Width.ADDR)


def step(state: MachineState) -> StepEvent:
    """Enter a pending interrupt or retire exactly one instruction."""
    if state.halted:
        raise RuntimeError("machine is halted")
    timer = state.timer
    regs = state.regs
    if state.pending_irq is None and timer.running and timer.irq_enabled \
            and state.cycles - timer.armed_at >= timer.compare:
        state.pending_irq = TIMER_IRQ
    pc = regs[PC]
    if state.pending_irq is not None and regs[SR] & GIE:
        interrupt_enter(state, state.pending_irq)
        return StepEvent(StepKind.INTERRUPT_ENTERED, pc, regs[PC])
    mem = state.memory
    mem.fetch_gate(pc)
    form = state._decoded.get(pc) or state.decode_at(pc)
    denials = len(mem.denials)
    _execute(state, form, pc)
    state.cycles += form.cycles
    state.retired_cycles += form.cycles
    if timer.running and timer.irq_enabled and state.cycles - timer.armed_at >= timer.compare:
        state.pending_irq = TIMER_IRQ
    if regs[SR] & CPUOFF:
        state.halted = True
        return StepEvent(StepKind.HALT, pc, regs[PC], form)
    kind = StepKind.MPU_VIOLATION if len(mem.denials) != denials else StepKind.EXECUTED
    return StepEvent(kind, pc, regs[PC], form)


StopPredicate = Callable[[MachineState, StepEvent], bool]


def run_until(state: MachineState, stop: StopPredicate, max_steps: int = 10_000_000) -> StepEvent:
    """Step until ``stop`` holds or the machine halts; returns the last event."""
    event = None
    for _ in range(max_steps):
        event = step(state)
        if state.halted or stop(state, event):
            return event
    raise RuntimeError("step budget exhausted at pc=0x%04X" % state.regs[PC])
