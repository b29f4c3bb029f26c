"""Candidate generation for one instruction site.

An *observation* is a (register state before, register state after) pair,
optionally with the attacker's scratch memory before and after. Candidates
are concrete instruction forms. Each family enumerator proposes forms whose
value-level semantics fit, and :func:`verify` replays every surviving form
through the real executor, so the enumerators only have to be complete,
not exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .cpu import JUMP_CONDITIONS, MachineState, _execute, double_op, single_op
from .isa import (
    C_BIT, CG_VALUES, N_BIT, PC, SP, SR, V_BIT, Z_BIT, DecodedForm, Format, Mode, Operand, Width,
    make_form,
)
from .memory import Memory, MemoryFault

GPRS = tuple(range(4, 16))
REG_SOURCES = (SP, SR) + GPRS
REG_DESTS = (SP, SR) + GPRS
POINTERS = (SP,) + GPRS
WRITE_OPS = ("MOV", "ADD", "ADDC", "SUB", "SUBC", "DADD", "BIC", "BIS", "XOR", "AND")
FLAG_OPS = ("CMP", "BIT")
OPS = WRITE_OPS + FLAG_OPS
VECTOR_OPS = tuple(o for o in OPS if o != "DADD")
WIDTHS = (Width.WORD, Width.BYTE)
SHIFT_OPS = ("RRC", "RRA", "SWPB", "SXT")

# (op, constant) pairs with an exact twin elsewhere in the enumeration:
# ADD #-1 == SUB #1, SUB #-1 == ADD #1, ADDC #-1 == SUBC #0, SUBC #-1 == ADDC #0,
# BIS #-1 == MOV #-1, BIC #-1 == MOV #0
TWINS = {("ADD", -1), ("SUB", -1), ("ADDC", -1), ("SUBC", -1), ("BIS", -1), ("BIC", -1)}
# ops whose same-register form is a twin: BIC Rn, Rn == CLR; MOV/BIS Rn, Rn change nothing
SELF_TWINS = ("MOV", "BIS", "BIC")
# bit 0 of PC is dropped, so carry-in makes no difference to these
PC_TWINS = ("ADDC", "SUBC")


def is_twin(op: str, src: Operand, m: Optional[int], w: Width = Width.WORD) -> bool:
    if src.cg and (op, src.value) in TWINS:
        return True
    if m is not None and w is Width.BYTE and op == "MOV" and src.cg and src.value >= 0:
        return True  # byte writes to a register clear the high byte anyway
    if m == PC and op in PC_TWINS:
        return True
    return src.mode is Mode.REG and src.reg == m and op in SELF_TWINS

FLAGS = C_BIT | Z_BIT | N_BIT | V_BIT


def _s16(v: int) -> int:
    v &= 0xFFFF
    return v - 0x10000 if v & 0x8000 else v


def reg_value(m: int, r: int, w: Width) -> int:
    """Register contents after writing ``r`` with width ``w``."""
    r &= w.mask
    if m in (PC, SP):
        return r & 0xFFFFE
    return r


@dataclass
class Observation:
    pre: tuple
    post: tuple
    base: int = 0
    before: Optional[bytes] = None
    after: Optional[bytes] = None
    changed: frozenset = field(init=False)
    dmem: tuple = field(init=False)

    def __post_init__(self):
        self.changed = frozenset(r for r in POINTERS if self.pre[r] != self.post[r])
        self.dmem = ()
        if self.before is not None:
            b = np.frombuffer(self.before, np.uint8)
            a = np.frombuffer(self.after, np.uint8)
            lo, hi = self.post[SP] - 4, self.post[SP]
            self.dmem = tuple(int(x) + self.base for x in np.nonzero(b != a)[0]
                              if not lo <= int(x) + self.base < hi)
            self.bytes = b.astype(np.int64)
            self.words = self.bytes[0::2] | (self.bytes[1::2] << 8)

    @property
    def has_memory(self) -> bool:
        return self.before is not None

    def in_scratch(self, a: int, n: int) -> bool:
        return self.before is not None and self.base <= a and a + n <= self.base + len(self.before)

    def read(self, a: int, n: int, after: bool = False) -> Optional[int]:
        if n > 1:
            a &= ~1
        if not self.in_scratch(a, n):
            return None
        buf = self.after if after else self.before
        return int.from_bytes(buf[a - self.base:a - self.base + n], "little")

    def written(self, w: Width) -> Optional[int]:
        """Effective address of a single ``w``-sized store, if the diff shows one."""
        if not self.dmem:
            return None
        if w is Width.BYTE:
            return self.dmem[0] if len(self.dmem) == 1 else None
        a0 = self.dmem[0] & ~1
        return a0 if all(a0 <= a <= a0 + 1 for a in self.dmem) else None


# ---------------------------------------------------------------------------
# vectorised two-operand semantics

def vec_op(mnem: str, s, d, sr: int, w: Width):
    """numpy counterpart of :func:`cpu.double_op` (no DADD); returns (result, sr, writes)."""
    mask, msb = w.mask, w.msb
    s = np.asarray(s, dtype=np.int64) & mask
    d = np.asarray(d, dtype=np.int64) & mask
    if mnem == "MOV":
        return s, np.full(np.broadcast(s, d).shape, sr, np.int64), True
    if mnem == "BIC":
        return d & ~s & mask, np.full(np.broadcast(s, d).shape, sr, np.int64), True
    if mnem == "BIS":
        return d | s, np.full(np.broadcast(s, d).shape, sr, np.int64), True
    if mnem in ("ADD", "ADDC", "SUB", "SUBC", "CMP"):
        if mnem in ("ADD", "ADDC"):
            operand, carry = s, (sr & C_BIT if mnem == "ADDC" else 0)
        else:
            operand, carry = (~s) & mask, (sr & C_BIT if mnem == "SUBC" else 1)
        raw = d + operand + carry
        r = raw & mask
        c = raw > mask
        v = ((operand ^ r) & (d ^ r) & msb) != 0
        return r, _vec_flags(sr, r, c, v, w), mnem != "CMP"
    if mnem in ("AND", "BIT"):
        r = s & d
        return r, _vec_flags(sr, r, r != 0, np.zeros_like(r, bool), w), mnem == "AND"
    if mnem == "XOR":
        r = s ^ d
        return r, _vec_flags(sr, r, r != 0, ((s & msb) != 0) & ((d & msb) != 0), w), True
    raise ValueError(mnem)


def _vec_flags(sr, r, c, v, w):
    base = sr & ~FLAGS
    return (base | np.where(c, C_BIT, 0) | np.where(r == 0, Z_BIT, 0)
            | np.where((r & w.msb) != 0, N_BIT, 0) | np.where(v, V_BIT, 0)).astype(np.int64)


# ---------------------------------------------------------------------------
# sources

def _cg(v: int) -> Operand:
    return Operand(Mode.IMM, value=v, cg=True)


def scalar_sources(obs: Observation, w: Width, memory: bool):
    """Yield ``(operand, value, autoinc_reg, autoinc_value)`` for every
    register, constant-generator and (with ``memory``) indirect source."""
    pre = obs.pre
    for n in REG_SOURCES:
        yield Operand(Mode.REG, n), pre[n] & w.mask, None, None
    for v in CG_VALUES:
        yield _cg(v), v & w.mask, None, None
    if not memory:
        return
    for n in POINTERS:
        v = obs.read(pre[n] & 0xFFFF, w.nbytes)
        if v is None:
            continue
        yield Operand(Mode.INDIRECT, n), v, None, None
        step = 2 if (n == SP and w is Width.BYTE) else w.nbytes
        yield Operand(Mode.AUTOINC, n), v, n, (pre[n] + step) & 0xFFFFF


def status_bit_refine(candidates: list, observed_sr: int) -> list:
    """Keep ``(form, predicted_sr)`` pairs whose flags match the observed SR."""
    return [(f, sr) for f, sr in candidates if sr is None or sr == observed_sr]


# ---------------------------------------------------------------------------
# scalar enumerators

def double_to_reg(obs: Observation, addr: int, memory: bool = False) -> list:
    """Two-operand forms with a register (or PC) destination and a scalar source."""
    pre, post = obs.pre, obs.post
    out = []
    for w in WIDTHS:
        for src, s, inc, inc_val in scalar_sources(obs, w, memory):
            allowed = {inc} if inc is not None else set()
            size = 2
            for m in REG_DESTS + (PC,):
                if obs.changed - allowed - {m}:
                    continue
                if inc is not None and m != inc and post[inc] != inc_val:
                    continue
                if m == PC:
                    d_old = addr + size
                elif m == inc:
                    d_old = inc_val
                else:
                    d_old = pre[m]
                cands = []
                for op in OPS:
                    if is_twin(op, src, m, w):
                        continue
                    if m in (SR, PC, SP) and w is Width.BYTE:
                        continue
                    r, sr2, writes = double_op(op, s, d_old, pre[SR], w)
                    if m == SR:
                        if (r if writes else sr2) == post[SR]:
                            cands.append((op, None))
                        continue
                    expect = reg_value(m, r, w) if writes else d_old
                    if m == PC:
                        if not writes or (r & 0xFFFE) != post[PC]:
                            continue
                    elif expect != post[m]:
                        continue
                    cands.append((op, sr2))
                ok = status_bit_refine(cands, post[SR])
                for op, _ in ok:
                    out.append(make_form(op, w, src, Operand(Mode.REG, m)))
    return out


def single_in_reg(obs: Observation) -> list:
    pre, post = obs.pre, obs.post
    out = []
    for m in REG_DESTS:
        if obs.changed - {m} or m == SR:
            continue
        for op in SHIFT_OPS:
            for w in (WIDTHS if op in ("RRC", "RRA") else (Width.WORD,)):
                r, sr2 = single_op(op, pre[m], pre[SR], w)
                if reg_value(m, r, w) == post[m] and sr2 == post[SR]:
                    out.append(make_form(op, w, Operand(Mode.REG, m), None))
    return out


def jumps(observations: list, addr: int) -> list:
    fall = (addr + 2) & 0xFFFF
    targets = {o.post[PC] for o in observations if o.post[PC] != fall}
    if len(targets) != 1:
        return []
    t = targets.pop()
    if not -1024 <= (_s16(t - fall) >> 1) <= 1023:
        return []
    out = []
    for cond, test in JUMP_CONDITIONS.items():
        if all(not o.changed and o.post[SR] == o.pre[SR]
               and o.post[PC] == (t if test(o.pre[SR]) else fall) for o in observations):
            out.append(make_form(cond, Width.WORD, None, None, t))
    return out


# ---------------------------------------------------------------------------
# joint enumerators over probe observations (indexed operands)

def _ea_candidates(a: np.ndarray, w: Width) -> np.ndarray:
    # word accesses ignore address bit 0
    return np.concatenate([a, a + 1]) if w is not Width.BYTE else a


def _value_search(obs: Observation, op: str, w: Width, other: int, src_side: bool,
                  want_val: Optional[int], want_sr: int, writes_must_keep: bool = False) -> np.ndarray:
    """Scratch effective addresses whose contents, as the source (``src_side``)
    or destination operand, produce ``want_val``/``want_sr``."""
    vals = obs.bytes if w is Width.BYTE else obs.words
    step = 1 if w is Width.BYTE else 2
    if src_side:
        r, sr2, writes = vec_op(op, vals, other, obs.pre[SR], w)
    else:
        r, sr2, writes = vec_op(op, other, vals, obs.pre[SR], w)
    match = sr2 == want_sr
    if writes and want_val is not None:
        match &= r == want_val
    elif writes and writes_must_keep:
        match &= r == (vals & w.mask)
    idx = np.nonzero(match)[0]
    return _ea_candidates(obs.base + idx * step, w)


def _offsets(eas: np.ndarray, base: int) -> np.ndarray:
    return np.unique((eas - base) & 0xFFFF)


def _intersect(acc: Optional[dict], new: dict) -> dict:
    if acc is None:
        return {k: v for k, v in new.items() if v.size}
    out = {}
    for k, v in new.items():
        if k in acc:
            both = np.intersect1d(acc[k], v, assume_unique=True)
            if both.size:
                out[k] = both
    return out


def indexed_to_reg(observations: list, addr: int) -> list:
    """``OP x(Rn), Rm`` and ``OP x(Rn), PC`` solved jointly over the probes."""
    acc = None
    for obs in observations:
        pre, post = obs.pre, obs.post
        found: dict = {}
        if obs.dmem:
            return []
        for w in WIDTHS:
            for m in REG_DESTS + (PC,):
                if obs.changed - {m} or (m in (SR, PC, SP) and w is Width.BYTE) or m == SR:
                    continue
                d_old = addr + 4 if m == PC else pre[m]
                for op in VECTOR_OPS:
                    writes = op not in FLAG_OPS
                    if (m == PC and op in PC_TWINS) or (m == PC and not writes):
                        continue
                    if not writes and post[m] != pre[m]:
                        continue
                    if m == PC:
                        eas = _pc_search(obs, op, w, d_old)
                    else:
                        want = post[m] if writes else None
                        eas = _value_search(obs, op, w, d_old, True, want, post[SR])
                    if not eas.size:
                        continue
                    for n in POINTERS:
                        found[(op, w, n, m)] = _offsets(eas, pre[n])
        acc = _intersect(acc, found)
        if not acc:
            return []
    out = []
    for (op, w, n, m), offs in (acc or {}).items():
        for x in offs.tolist():
            out.append(make_form(op, w, Operand(Mode.INDEXED, n, _s16(x)), Operand(Mode.REG, m)))
    return out


def _pc_search(obs: Observation, op: str, w: Width, d_old: int) -> np.ndarray:
    vals = obs.words
    r, sr2, writes = vec_op(op, vals, d_old, obs.pre[SR], w)
    match = ((r & 0xFFFE) == obs.post[PC]) & (sr2 == obs.post[SR])
    return _ea_candidates(obs.base + np.nonzero(match)[0] * 2, w)


def to_indexed(observations: list, addr: int) -> list:
    """Two-operand forms with an ``x(Rm)`` destination (scalar or indexed source)."""
    # a store of the value already present leaves no diff; emulation checks those later
    observations = [o for o in observations if o.dmem] or observations
    acc = None
    for obs in observations:
        pre, post = obs.pre, obs.post
        found: dict = {}
        for w in WIDTHS:
            a_w = obs.written(w)
            if obs.dmem and a_w is None:
                continue
            if obs.dmem:
                old, new = obs.read(a_w, w.nbytes), obs.read(a_w, w.nbytes, after=True)
                dst_eas = _ea_candidates(np.array([a_w]), w)
            for src, s, inc, inc_val in scalar_sources(obs, w, True):
                if obs.changed - ({inc} if inc is not None else set()):
                    continue
                if inc is not None and post[inc] != inc_val:
                    continue
                for op in OPS:
                    if is_twin(op, src, None):
                        continue
                    if obs.dmem:
                        r, sr2, writes = double_op(op, s, old, pre[SR], w)
                        if not writes or r != new or sr2 != post[SR]:
                            continue
                        eas = dst_eas
                    else:
                        # nothing stored: only a compare/test leaves evidence, in SR
                        if op not in FLAG_OPS or post[SR] == pre[SR]:
                            continue
                        eas = _value_search(obs, op, w, s, False, None, post[SR])
                    if not eas.size:
                        continue
                    for m in POINTERS:
                        found[(op, w, src, m, None)] = _offsets(eas, pre[m])
            if obs.dmem and not obs.changed:
                # indexed source as well: the destination is pinned by the diff
                for op in WRITE_OPS:
                    if op == "DADD":
                        continue
                    src_eas = _value_search(obs, op, w, old, True, new, post[SR])
                    if not src_eas.size:
                        continue
                    for n in POINTERS:
                        xs = _offsets(src_eas, pre[n])
                        for m in POINTERS:
                            for xd in _offsets(dst_eas, pre[m]).tolist():
                                found[(op, w, n, m, xd)] = xs
        acc = _intersect(acc, found)
        if not acc:
            return []
    out = []
    for key, offs in acc.items():
        op, w = key[0], key[1]
        if key[4] is None:
            src, m = key[2], key[3]
            for x in offs.tolist():
                out.append(make_form(op, w, src, Operand(Mode.INDEXED, m, _s16(x))))
        else:
            n, m, xd = key[2], key[3], key[4]
            for x in offs.tolist():
                out.append(make_form(op, w, Operand(Mode.INDEXED, n, _s16(x)),
                                     Operand(Mode.INDEXED, m, _s16(xd))))
    return out


def single_in_memory(observations: list) -> list:
    """Shift/rotate/swap forms operating on ``@Rn``, ``@Rn+`` or ``x(Rn)``."""
    observations = [o for o in observations if o.dmem]
    if not observations:
        return []
    acc = None
    for obs in observations:
        found: dict = {}
        for op in SHIFT_OPS:
            for w in (WIDTHS if op in ("RRC", "RRA") else (Width.WORD,)):
                a = obs.written(w)
                if a is None:
                    continue
                eas = _ea_candidates(np.array([a]), w)
                for n in POINTERS:
                    offs = _offsets(eas, obs.pre[n])
                    found[(op, w, n, "x")] = offs
                    if (offs == 0).any():
                        found[(op, w, n, "@")] = np.zeros(1, np.int64)
                        found[(op, w, n, "@+")] = np.zeros(1, np.int64)
        acc = _intersect(acc, found)
        if not acc:
            return []
    out = []
    for (op, w, n, kind), offs in acc.items():
        if kind == "@":
            out.append(make_form(op, w, Operand(Mode.INDIRECT, n), None))
        elif kind == "@+":
            out.append(make_form(op, w, Operand(Mode.AUTOINC, n), None))
        else:
            out.extend(make_form(op, w, Operand(Mode.INDEXED, n, _s16(x)), None)
                       for x in offs.tolist())
    return out


def stack_forms(observations: list, addr: int) -> list:
    """PUSH, CALL and RETI with scalar or indexed sources."""
    obs = observations[0]
    pre, post = obs.pre, obs.post
    dsp = _s16(post[SP] - pre[SP])
    out = []
    if dsp == 4:
        out.append(make_form("RETI", Width.WORD, None, None))
    if dsp != -2:
        return out
    for w in WIDTHS:
        for src, s, inc, inc_val in scalar_sources(obs, w, True):
            out.append(make_form("PUSH", w, src, None))
            if w is Width.WORD:
                out.append(make_form("CALL", w, src, None))
    # indexed sources: pushed word or branch target located by value
    for mnem in ("PUSH", "CALL"):
        for w in ((Width.WORD, Width.BYTE) if mnem == "PUSH" else (Width.WORD,)):
            acc = None
            for o in observations:
                if o.post[SP] != (o.pre[SP] - 2) & 0xFFFFF:
                    return out
                want = o.read(o.post[SP], w.nbytes, after=True) if mnem == "PUSH" else o.post[PC]
                if want is None:
                    acc = {}
                    break
                vals = o.bytes if w is Width.BYTE else o.words
                step = 1 if w is Width.BYTE else 2
                hit = (vals & 0xFFFE) == want if mnem == "CALL" else vals == want
                eas = _ea_candidates(o.base + np.nonzero(hit)[0] * step, w)
                acc = _intersect(acc, {n: _offsets(eas, o.pre[n]) for n in POINTERS})
                if not acc:
                    break
            for n, offs in (acc or {}).items():
                out.extend(make_form(mnem, w, Operand(Mode.INDEXED, n, _s16(x)), None)
                           for x in offs.tolist())
    return out


# ---------------------------------------------------------------------------
# immediate operands: the value is solved, never verified against memory

def immediates(observations: list, addr: int, limit: int = 16) -> list:
    """Forms with a full immediate (extension-word) source consistent with
    every observation. Used only to decide that such a reading exists."""
    out = []
    first = observations[0]
    for w in WIDTHS:
        space = np.arange(w.mask + 1, dtype=np.int64)
        for m in REG_DESTS + (PC,):
            if first.changed - {m} or m == SR or (w is Width.BYTE and m in (SP, PC)):
                continue
            for op in VECTOR_OPS:
                mask = np.ones(space.shape, bool)
                for o in observations:
                    if o.changed - {m} or o.dmem:
                        mask[:] = False
                        break
                    d_old = addr + 4 if m == PC else o.pre[m]
                    r, sr2, writes = vec_op(op, space, d_old, o.pre[SR], w)
                    if m == PC:
                        if not writes:
                            mask[:] = False
                            break
                        mask &= ((r & 0xFFFE) == o.post[PC]) & (sr2 == o.post[SR])
                    else:
                        expect = o.post[m]
                        mask &= (sr2 == o.post[SR])
                        mask &= ((r & w.mask) == expect) if writes else (o.pre[m] == expect)
                    if not mask.any():
                        break
                for v in np.nonzero(mask)[0][:limit].tolist():
                    if v in (0, 1, 2, 4, 8) or v == w.mask:
                        continue  # those assemble as constant-generator forms
                    out.append(make_form(op, w, Operand(Mode.IMM, value=v), Operand(Mode.REG, m)))
    out.extend(_cpux_immediates(observations))
    out.extend(_call_immediates(observations, addr))
    out.extend(_imm_to_indexed(observations, limit))
    return out


def _call_immediates(observations: list, addr: int) -> list:
    """``CALL #N``: the target is the new PC, the return address is pushed."""
    target = observations[0].post[PC]
    for o in observations:
        if o.changed != {SP} or o.post[SP] != (o.pre[SP] - 2) & 0xFFFF or o.post[PC] != target:
            return []
        if o.post[SR] != o.pre[SR]:
            return []
        if o.has_memory and o.read(o.post[SP], 2, after=True) != (addr + 4) & 0xFFFF:
            return []
    return [make_form("CALL", Width.WORD, Operand(Mode.IMM, value=target), None)]


def _cpux_immediates(observations: list) -> list:
    first = observations[0]
    out = []
    for m in REG_DESTS:
        if first.changed - {m} or m == SR:
            continue
        for mnem, solve in (("MOVA", lambda o: o.post[m]),
                            ("ADDA", lambda o: (o.post[m] - o.pre[m]) & 0xFFFFF),
                            ("SUBA", lambda o: (o.pre[m] - o.post[m]) & 0xFFFFF)):
            v = solve(first)
            out.append(make_form(mnem, Width.ADDR, Operand(Mode.IMM, value=v), Operand(Mode.REG, m)))
    return out


def _imm_to_indexed(observations: list, limit: int) -> list:
    observations = [o for o in observations if o.has_memory]
    if not observations:
        return []
    out = []
    for w in WIDTHS:
        space = np.arange(w.mask + 1, dtype=np.int64)
        for op in VECTOR_OPS:
            mask = np.ones(space.shape, bool)
            xd = None
            for o in observations:
                a = o.written(w)
                if a is None or o.changed:
                    mask[:] = False
                    break
                old, new = o.read(a, w.nbytes), o.read(a, w.nbytes, after=True)
                r, sr2, writes = vec_op(op, space, old, o.pre[SR], w)
                mask &= (r == new) & (sr2 == o.post[SR]) if writes else False
                offs = {m: _offsets(_ea_candidates(np.array([a]), w), o.pre[m]) for m in POINTERS}
                xd = _intersect(xd, offs)
            if not mask.any() or not xd:
                continue
            for m, offs in xd.items():
                for x in offs.tolist():
                    for v in np.nonzero(mask)[0][:limit].tolist():
                        out.append(make_form(op, w, Operand(Mode.IMM, value=v),
                                             Operand(Mode.INDEXED, m, _s16(x))))
    return out


# ---------------------------------------------------------------------------
# verification by replay

def touches_memory(f: DecodedForm) -> bool:
    if f.fmt is Format.JUMP:
        return False
    if f.mnemonic in ("PUSH", "CALL", "RETI", "CALLA"):
        return True
    return any(op is not None and op.mode.is_memory for op in (f.src, f.dst))


class Sandbox:
    """Replays one candidate against one observation on a private machine."""

    def __init__(self):
        self.state = MachineState(Memory())

    def check(self, form: DecodedForm, addr: int, obs: Observation) -> bool:
        st = self.state
        mem = st.memory.data
        if obs.has_memory:
            mem[obs.base:obs.base + len(obs.before)] = obs.before
        elif touches_memory(form):
            return True
        st.regs = list(obs.pre)
        try:
            _execute(st, form, addr)
        except MemoryFault:
            return False
        st.regs[PC] &= 0xFFFF
        if tuple(st.regs) != tuple(obs.post):
            return False
        if obs.has_memory:
            got = bytearray(mem[obs.base:obs.base + len(obs.after)])
            want = bytearray(obs.after)
            lo = max(obs.post[SP] - 4 - obs.base, 0)
            hi = max(obs.post[SP] - obs.base, 0)
            got[lo:hi] = want[lo:hi]
            if got != want:
                return False
        return True


def sp_twin(form: DecodedForm) -> bool:
    """Word access at an odd offset from SP. SP is always even and word
    accesses ignore bit 0, so the even offset names the same location."""
    if form.width is Width.BYTE:
        return False
    return any(op is not None and op.mode is Mode.INDEXED and op.reg == SP and op.value & 1
               for op in (form.src, form.dst))


def verify(forms: Iterable[DecodedForm], addr: int, observations: list,
           sandbox: Optional[Sandbox] = None) -> list:
    sb = sandbox or Sandbox()
    out, seen = [], set()
    for f in forms:
        if f in seen or sp_twin(f):
            continue
        seen.add(f)
        if all(sb.check(f, addr, o) for o in observations):
            out.append(f)
    return out
