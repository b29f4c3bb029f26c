"""Offline reconstruction of the victim's instruction stream.

The trace gives one register snapshot per timer count. Equal consecutive
snapshots belong to the same instruction boundary, so run lengths are
instruction cycle counts and the PC of the previous run is the address of
the instruction that produced the next one. Each address is then matched
against the shared cycle table and explained by candidate instruction forms
(see :mod:`ripencap.hypotheses`), with attacker-controlled probes for the
forms that touch memory.
"""

from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import hypotheses as hyp
from .asm import FirmwareImage, assemble_instruction
from .attack import (
    SCRATCH, AttackConfig, Attacker, GadgetDescriptor, TraceDB, phase1_collect, probe_indirect,
    probe_values,
)
from .firmware import STACK_TOP
from .hypotheses import Observation
from .isa import (
    PC, SP, SR, DecodedForm, Format, Mode, Operand, Width, canonical_alias, disassemble, make_form,
)


class Confidence(enum.Enum):
    DECODED = "DECODED"
    AMBIGUOUS = "AMBIGUOUS"
    UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class BoundaryRecord:
    index: int
    addr: int
    cycles: int
    exact: bool          # False for the final run, which the trace may cut short
    pre: tuple
    post: tuple
    dump: int = 0        # first dump showing ``post``


def segment_boundaries(trace: TraceDB) -> list:
    """Collapse equal consecutive dumps into one record per retired instruction."""
    records = []
    prev_state, prev_end = tuple(trace.initial), 0
    dumps = trace.dumps
    i = 0
    while i < len(dumps):
        j = i
        while j + 1 < len(dumps) and dumps[j + 1].regs == dumps[i].regs:
            j += 1
        state = tuple(dumps[i].regs)
        end = dumps[j].timer_count
        records.append(BoundaryRecord(len(records), prev_state[PC], end - prev_end,
                                      j + 1 < len(dumps), prev_state, state, i))
        prev_state, prev_end = state, end
        i = j + 1
    return records


def _s16(v: int) -> int:
    v &= 0xFFFF
    return v - 0x10000 if v & 0x8000 else v


def control_flow_label(rec: BoundaryRecord) -> Optional[str]:
    """Classify a boundary by its stack-pointer delta and PC continuity."""
    dsp = _s16(rec.post[SP] - rec.pre[SP])
    step = _s16(rec.post[PC] - rec.addr)
    disc = not 0 < step <= 6
    if dsp == 0:
        return "JUMP" if disc else None
    if dsp == -2:
        return "CALL" if disc else "PUSH"
    if dsp == 2:
        return "RET" if disc else "POP"
    if dsp == 4 and disc and rec.post[SR] != rec.pre[SR]:
        return "RETI"
    return None


def detect_control_flow(records: list) -> list:
    return [control_flow_label(r) for r in records]


# ---------------------------------------------------------------------------
# the cycle table as (kind, size, cycles, transfer) cells

@dataclass(frozen=True)
class Cell:
    kind: str            # reg, jump, mem, imm, abs
    size: int
    cycles: int
    transfer: bool
    example: str


def _kind(*ops) -> str:
    modes = [o.mode for o in ops if o is not None]
    if Mode.SYMBOLIC in modes or Mode.ABSOLUTE in modes:
        return "abs"
    if any(o is not None and o.mode is Mode.IMM and not o.cg for o in ops):
        return "imm"
    if any(m.is_memory for m in modes):
        return "mem"
    return "reg"


def _build_cells() -> tuple:
    srcs = [Operand(Mode.REG, 4), Operand(Mode.IMM, value=1, cg=True), Operand(Mode.INDIRECT, 4),
            Operand(Mode.AUTOINC, 4), Operand(Mode.IMM, value=0x1234), Operand(Mode.INDEXED, 4, 2),
            Operand(Mode.SYMBOLIC, value=0x4400), Operand(Mode.ABSOLUTE, value=0x4400)]
    dsts = [Operand(Mode.REG, 5), Operand(Mode.REG, PC), Operand(Mode.INDEXED, 5, 2),
            Operand(Mode.SYMBOLIC, value=0x4400), Operand(Mode.ABSOLUTE, value=0x4400)]
    cells = set()

    def add(f: DecodedForm, kind: str, transfer: bool) -> None:
        cells.add(Cell(kind, f.size, f.cycles, transfer, f.text()))

    for s in srcs:
        for d in dsts:
            add(make_form("MOV", Width.WORD, s, d), _kind(s, d), d.mode is Mode.REG and d.reg == PC)
        if not (s.mode is Mode.IMM):
            add(make_form("RRC", Width.WORD, s, None), _kind(s), False)
        k = _kind(s)
        add(make_form("PUSH", Width.WORD, s, None), "mem" if k == "reg" else k, False)
        add(make_form("CALL", Width.WORD, s, None), "mem" if k == "reg" else k, True)
    add(make_form("RETI", Width.WORD, None, None), "mem", True)
    add(make_form("JMP", Width.WORD, None, None, 0), "jump", True)
    r4, r5 = Operand(Mode.REG, 4), Operand(Mode.REG, 5)
    imm = Operand(Mode.IMM, value=0x12345)
    for mnem in ("MOVA", "ADDA", "SUBA", "CMPA"):
        add(make_form(mnem, Width.ADDR, r4, r5), "reg", False)
        add(make_form(mnem, Width.ADDR, imm, r5), "imm", False)
    for s in (Operand(Mode.INDIRECT, 4), Operand(Mode.AUTOINC, 4), Operand(Mode.INDEXED, 4, 2)):
        add(make_form("MOVA", Width.ADDR, s, r5), "mem", False)
    add(make_form("MOVA", Width.ADDR, Operand(Mode.ABSOLUTE, value=0x4400), r5), "abs", False)
    add(make_form("MOVA", Width.ADDR, r4, Operand(Mode.ABSOLUTE, value=0x4400)), "abs", False)
    add(make_form("MOVA", Width.ADDR, r4, Operand(Mode.INDEXED, 5, 2)), "mem", False)
    add(make_form("CALLA", Width.ADDR, r4, None), "mem", True)
    add(make_form("CALLA", Width.ADDR, imm, None), "imm", True)
    return tuple(sorted(cells, key=lambda c: (c.cycles, c.size, c.kind, c.example)))


CELLS = _build_cells()


def feasible_cells(addr: int, cycles: int, observations: list) -> list:
    """Cells of the given cost whose length and control transfer fit every observation."""
    out = []
    for c in CELLS:
        if c.cycles != cycles:
            continue
        nxt = (addr + c.size) & 0xFFFF
        if c.kind == "jump" or c.transfer:
            # a transfer may land on the next address; probes settle it
            out.append(c)
        elif all(o.post[PC] == nxt for o in observations):
            out.append(c)
    return out


# ---------------------------------------------------------------------------
# results

@dataclass
class ReconstructedInstruction:
    addr: int
    cycles: Optional[int]
    confidence: Confidence
    form: Optional[DecodedForm] = None
    alternatives: list = field(default_factory=list)
    occurrences: int = 0
    flow: Optional[str] = None
    note: str = ""

    @property
    def text(self) -> str:
        if self.form is None:
            return "?"
        return canonical_alias(self.form) or disassemble(self.form)


@dataclass
class ReconstructionReport:
    instructions: list
    records: list
    probes_run: int = 0

    def by_addr(self) -> dict:
        return {i.addr: i for i in self.instructions}

    def count(self, conf: Confidence) -> int:
        return sum(1 for i in self.instructions if i.confidence is conf)

    @property
    def decoded_pct(self) -> float:
        """Share of distinct instruction addresses that were decoded."""
        n = len(self.instructions)
        return 100.0 * self.count(Confidence.DECODED) / n if n else 0.0

    @property
    def dynamic_decoded_pct(self) -> float:
        """Share of retired instructions (trace boundaries) that were decoded."""
        table = self.by_addr()
        n = len(self.records)
        hit = sum(1 for r in self.records if table[r.addr].confidence is Confidence.DECODED)
        return 100.0 * hit / n if n else 0.0

    def gadgets(self) -> dict:
        return find_gadgets(self)


def emit_report(report: ReconstructionReport) -> str:
    lines = ["addr    cyc  conf       instruction"]
    for ins in sorted(report.instructions, key=lambda i: i.addr):
        extra = ""
        if ins.confidence is Confidence.AMBIGUOUS and ins.alternatives:
            extra = "  | " + " | ".join(ins.alternatives[:4])
            if len(ins.alternatives) > 4:
                extra += " | ..."
        if ins.flow:
            extra += "  [%s]" % ins.flow
        cyc = "%3d" % ins.cycles if ins.cycles is not None else "  ?"
        text = ins.text if ins.confidence is Confidence.DECODED else ""
        lines.append("0x%04X  %s  %-9s  %s%s" % (ins.addr, cyc, ins.confidence.value, text, extra))
    lines.append("")
    lines.append("decoded %.1f%% of %d instructions (%.1f%% of %d executed)"
                 % (report.decoded_pct, len(report.instructions), report.dynamic_decoded_pct,
                    len(report.records)))
    g = report.gadgets()
    for kind in ("read", "write"):
        for d in g[kind]:
            lines.append("%s gadget at 0x%04X: %s" % (kind, d.addr, report.by_addr()[d.addr].text))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# classification

Prober = Callable[[int, int], list]


def make_prober(att: Attacker) -> Prober:
    """``prober(addr, cycles)`` runs the pointer probes; with ``scattered=True``
    it runs random-value probes, meant for register-only candidates, and with
    ``complement=True`` the pointer probes over inverted scratch contents."""
    def run(addr: int, cycles: int, scattered: bool = False, complement: bool = False) -> list:
        if scattered:
            res = probe_values(att, addr, cycles)
        else:
            res = probe_indirect(att, addr, cycles, range(4, 8) if complement else range(4))
        return [Observation(p.pre, p.post, SCRATCH[0], p.scratch_before, p.scratch_after)
                for p in res if p.fault is None]
    return run


def classify_register_mode(addr: int, cycles: int, observations: list,
                           sandbox: Optional[hyp.Sandbox] = None) -> list:
    """Register and constant-generator forms (plus jumps) consistent with
    every phase-1 occurrence of the instruction at ``addr``."""
    first = observations[0]
    cands = hyp.double_to_reg(first, addr) + hyp.single_in_reg(first) + hyp.jumps(observations, addr)
    cands = [f for f in cands if f.cycles == cycles]
    return hyp.verify(cands, addr, observations, sandbox)


def classify_indirect(addr: int, cycles: int, probes: list,
                      sandbox: Optional[hyp.Sandbox] = None) -> list:
    """Memory-operand forms consistent with every probe of ``addr``."""
    if not probes:
        return []
    cands = (hyp.double_to_reg(probes[0], addr, memory=True) + hyp.indexed_to_reg(probes, addr)
             + hyp.to_indexed(probes, addr) + hyp.single_in_memory(probes)
             + hyp.stack_forms(probes, addr) + hyp.jumps(probes, addr))
    cands = [f for f in cands if f.cycles == cycles]
    return hyp.verify(cands, addr, probes, sandbox)


def _is_nop(addr: int, cycles: int, observations: list) -> bool:
    return cycles == 1 and all(
        not o.changed and not o.dmem and o.post[SR] == o.pre[SR]
        and o.post[PC] == (addr + 2) & 0xFFFF for o in observations)


NOP_FORM = make_form("MOV", Width.WORD, Operand(Mode.IMM, value=0, cg=True), Operand(Mode.REG, 3))


def _transfer_ok(f: DecodedForm, addr: int, observations: list) -> bool:
    if f.fmt is Format.JUMP or not (f.pc_dest or f.mnemonic in ("CALL", "RETI", "CALLA")):
        return True
    return any(o.post[PC] != (addr + f.size) & 0xFFFF for o in observations)


def _combine(addr, cyc, kinds, reg_ok, obs1, pobs, sb) -> list:
    found = list(reg_ok)
    if pobs:
        found = hyp.verify(found + hyp.jumps(obs1 + pobs, addr), addr, obs1 + pobs, sb)
        found = [f for f in found if f.cycles == cyc]
        if kinds & {"mem", "abs"}:
            found += hyp.verify(classify_indirect(addr, cyc, pobs, sb), addr, obs1, sb)
    return [f for f in dict.fromkeys(found) if _transfer_ok(f, addr, obs1 + pobs)]


def reconstruct_site(addr: int, records: list, prober: Optional[Prober] = None,
                     sandbox: Optional[hyp.Sandbox] = None) -> tuple:
    """Classify one instruction address; returns ``(instruction, probes_run)``."""
    sb = sandbox or hyp.Sandbox()
    obs1 = [Observation(r.pre, r.post) for r in records]
    exact = [r.cycles for r in records if r.exact]
    flows = {control_flow_label(r) for r in records} - {None}
    flow = "/".join(sorted(flows)) or None
    base = ReconstructedInstruction(addr, None, Confidence.UNKNOWN, occurrences=len(records),
                                    flow=flow)
    if len(set(exact)) > 1:
        base.note = "inconsistent cycle counts %s" % sorted(set(exact))
        return base, 0
    if exact:
        options = [exact[0]]
    else:
        lb = max(r.cycles for r in records)
        options = sorted({c.cycles for c in CELLS if c.cycles >= lb})
    verified, imms, probes_run = [], [], 0
    for cyc in options:
        cells = feasible_cells(addr, cyc, obs1)
        kinds = {c.kind for c in cells}
        if not kinds:
            continue
        nop = "reg" in kinds and _is_nop(addr, cyc, obs1)
        reg_ok = [] if nop or not kinds & {"reg", "jump"} else \
            classify_register_mode(addr, cyc, obs1, sb)
        pobs = []
        need = nop or kinds & {"mem", "abs"} or len(reg_ok) > 1 or ("jump" in kinds and not reg_ok)
        if prober is not None and need:
            pobs = prober(addr, cyc)
            probes_run += 1
        if nop:
            if not pobs or _is_nop(addr, cyc, pobs):
                # no effect on any register, flag or probed byte
                base.cycles, base.confidence, base.form = cyc, Confidence.DECODED, NOP_FORM
                return base, probes_run
            reg_ok = classify_register_mode(addr, cyc, obs1 + pobs, sb)
        found = _combine(addr, cyc, kinds, reg_ok, obs1, pobs, sb)
        if not found and pobs and kinds & {"mem", "abs"}:
            # a store may leave every probed byte as it was (BIS onto set bits)
            pobs = pobs + prober(addr, cyc, complement=True)
            probes_run += 1
            found = _combine(addr, cyc, kinds, reg_ok, obs1, pobs, sb)
        if len(found) > 1 and prober is not None and not any(
                hyp.touches_memory(f) or f.pc_dest for f in found):
            # register-only rivals (compares mostly): random values split them
            found = hyp.verify(found, addr, prober(addr, cyc, scattered=True), sb)
            probes_run += 1
        if found:
            verified += [(cyc, f) for f in found]
        elif "imm" in kinds:
            cand = [f for f in hyp.immediates(obs1 + pobs, addr) if f.cycles == cyc]
            imms += [(cyc, f) for f in hyp.verify(cand, addr, obs1 + pobs, sb)]
    if len(verified) == 1:
        base.cycles, base.form = verified[0]
        base.confidence = Confidence.DECODED
    elif verified:
        base.confidence = Confidence.AMBIGUOUS
        base.alternatives = [canonical_alias(f) or disassemble(f) for _, f in verified]
        base.note = "several forms reproduce every observation"
        base.cycles = verified[0][0] if len({c for c, _ in verified}) == 1 else None
    elif imms:
        base.confidence = Confidence.AMBIGUOUS
        base.alternatives = [canonical_alias(f) or disassemble(f) for _, f in imms]
        base.note = "immediate operand: value cannot be verified"
        base.cycles = imms[0][0] if len({c for c, _ in imms}) == 1 else None
    else:
        base.note = "no verifiable form (symbolic or absolute operand suspected)"
        base.cycles = options[0] if len(options) == 1 else None
    return base, probes_run


def reconstruct(trace: TraceDB, prober: Optional[Prober] = None) -> ReconstructionReport:
    records = segment_boundaries(trace)
    sites: "OrderedDict[int, list]" = OrderedDict()
    for r in records:
        sites.setdefault(r.addr, []).append(r)
    sb = hyp.Sandbox()
    out, probes = [], 0
    for addr, recs in sites.items():
        ins, n = reconstruct_site(addr, recs, prober, sb)
        out.append(ins)
        probes += n
    return ReconstructionReport(out, records, probes)


def analyze(image: FirmwareImage, trace: TraceDB, cfg: Optional[AttackConfig] = None,
            attacker: Optional[Attacker] = None) -> ReconstructionReport:
    """Reconstruct with probes run against a fresh copy of ``image``."""
    att = attacker or Attacker(image, trace.latency, cfg.stack_top if cfg else STACK_TOP)
    return reconstruct(trace, make_prober(att))


# ---------------------------------------------------------------------------
# gadgets and re-simulation

def find_gadgets(report: ReconstructionReport) -> dict:
    """Decoded ``MOV`` loads into a register and stores through ``x(Rm)``."""
    reads, writes = [], []
    for ins in sorted(report.instructions, key=lambda i: i.addr):
        f = ins.form
        if ins.confidence is not Confidence.DECODED or f is None or f.mnemonic != "MOV":
            continue
        s, d = f.src, f.dst
        if s.mode in (Mode.INDIRECT, Mode.INDEXED) and d.mode is Mode.REG \
                and s.reg >= 4 and d.reg >= 4 and s.reg != d.reg:
            reads.append(GadgetDescriptor(ins.addr, s.mode, s.reg, d.reg,
                                          s.value if s.mode is Mode.INDEXED else 0,
                                          f.cycles, f.width))
        if s.mode is Mode.REG and d.mode is Mode.INDEXED and s.reg >= 4 and d.reg >= 4 \
                and s.reg != d.reg:
            writes.append(GadgetDescriptor(ins.addr, Mode.REG, s.reg, d.reg, d.value,
                                           f.cycles, f.width))
    return {"read": reads, "write": writes}


def patch_image(image: FirmwareImage, patches: dict) -> FirmwareImage:
    """Copy of ``image`` with ``{addr: bytes}`` written over its segments."""
    segs = []
    for base, payload in image.segments:
        buf = bytearray(payload)
        for addr, data in patches.items():
            for i, b in enumerate(data):
                if base <= addr + i < base + len(buf):
                    buf[addr + i - base] = b
        segs.append((base, bytes(buf)))
    return FirmwareImage(segs, image.ipe, dict(image.symbols), image.entry, dict(image.vectors))


def decoded_patches(report: ReconstructionReport) -> dict:
    """Re-assembled bytes of every decoded instruction."""
    out = {}
    for ins in report.instructions:
        if ins.confidence is Confidence.DECODED:
            words = assemble_instruction(disassemble(ins.form), ins.addr)
            out[ins.addr] = b"".join(w.to_bytes(2, "little") for w in words)
    return out


def resimulate(image: FirmwareImage, report: ReconstructionReport, trace: TraceDB,
               cfg: AttackConfig) -> Optional[int]:
    """Re-run phase 1 on ``image`` with every decoded instruction replaced by
    its re-assembled form. Returns the first timer count whose dump differs,
    or None when the traces agree."""
    patched = patch_image(image, decoded_patches(report))
    again = AttackConfig(cfg.victim_entry, cfg.dint_bypass, len(trace), cfg.timer_latency,
                         cfg.stack_top, cfg.seed, cfg.initial_regs, cfg.step_budget)
    new = phase1_collect(patched, again)
    for a, b in zip(trace.dumps, new.dumps):
        if a.regs != b.regs:
            return a.timer_count
    if len(new) != len(trace):
        return min(len(new), len(trace)) + 1
    return None
