"""MSP430 instruction forms, the shared cycle table, and the binary decoder/encoder.

The decoder and the trace analyzer both read :func:`double_op_cycles`, so the
simulator's timing and the attacker's instruction-shape inference never drift
apart.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Callable, Optional

PC, SP, SR, CG = 0, 1, 2, 3

REG_NAMES = {0: "PC", 1: "SP", 2: "SR"}

# SR bit positions
C_BIT = 0x0001
Z_BIT = 0x0002
N_BIT = 0x0004
GIE = 0x0008
CPUOFF = 0x0010
V_BIT = 0x0100
FLAG_MASK = C_BIT | Z_BIT | N_BIT | V_BIT

CG_VALUES = (0, 1, 2, 4, 8, -1)


class DecodeError(Exception):
    """Raised for words that do not encode a supported instruction."""

    def __init__(self, addr: int, word: int, reason: str = "undefined opcode"):
        super().__init__(f"{reason}: 0x{word:04X} at 0x{addr:04X}")
        self.addr = addr
        self.word = word


class Mode(enum.Enum):
    REG = "Rn"
    INDIRECT = "@Rn"
    AUTOINC = "@Rn+"
    IMM = "#N"
    INDEXED = "x(Rn)"
    SYMBOLIC = "EDE"
    ABSOLUTE = "&EDE"

    @property
    def has_ext(self) -> bool:
        return self in (Mode.IMM, Mode.INDEXED, Mode.SYMBOLIC, Mode.ABSOLUTE)

    @property
    def is_memory(self) -> bool:
        return self in (Mode.INDIRECT, Mode.AUTOINC, Mode.INDEXED, Mode.SYMBOLIC, Mode.ABSOLUTE)


class Width(enum.Enum):
    BYTE = 8
    WORD = 16
    ADDR = 20

    def __init__(self, bits: int):
        # plain attributes: these sit on the emulator's hot path
        self.mask = (1 << bits) - 1
        self.msb = 1 << (bits - 1)
        self.nbytes = {8: 1, 16: 2, 20: 4}[bits]


class Format(enum.Enum):
    DOUBLE = "double"
    SINGLE = "single"
    JUMP = "jump"
    CPUX = "cpux"


DOUBLE_OPS = {
    0x4: "MOV", 0x5: "ADD", 0x6: "ADDC", 0x7: "SUBC", 0x8: "SUB", 0x9: "CMP",
    0xA: "DADD", 0xB: "BIT", 0xC: "BIC", 0xD: "BIS", 0xE: "XOR", 0xF: "AND",
}
DOUBLE_OPCODES = {v: k for k, v in DOUBLE_OPS.items()}

SINGLE_OPS = {0: "RRC", 1: "SWPB", 2: "RRA", 3: "SXT", 4: "PUSH", 5: "CALL", 6: "RETI"}
SINGLE_OPCODES = {v: k for k, v in SINGLE_OPS.items()}

JUMP_OPS = {0: "JNE", 1: "JEQ", 2: "JNC", 3: "JC", 4: "JN", 5: "JGE", 6: "JL", 7: "JMP"}
JUMP_OPCODES = {v: k for k, v in JUMP_OPS.items()}

# MOVA-family sub-opcodes (bits 7..4 of a 0x0xxx word)
CPUX_OPS = {
    0x0: ("MOVA", Mode.INDIRECT, Mode.REG),
    0x1: ("MOVA", Mode.AUTOINC, Mode.REG),
    0x2: ("MOVA", Mode.ABSOLUTE, Mode.REG),
    0x3: ("MOVA", Mode.INDEXED, Mode.REG),
    0x6: ("MOVA", Mode.REG, Mode.ABSOLUTE),
    0x7: ("MOVA", Mode.REG, Mode.INDEXED),
    0x8: ("MOVA", Mode.IMM, Mode.REG),
    0x9: ("CMPA", Mode.IMM, Mode.REG),
    0xA: ("ADDA", Mode.IMM, Mode.REG),
    0xB: ("SUBA", Mode.IMM, Mode.REG),
    0xC: ("MOVA", Mode.REG, Mode.REG),
    0xD: ("CMPA", Mode.REG, Mode.REG),
    0xE: ("ADDA", Mode.REG, Mode.REG),
    0xF: ("SUBA", Mode.REG, Mode.REG),
}
CPUX_OPCODES = {v: k for k, v in CPUX_OPS.items()}

# CALLA sub-forms: bits 7..4 of a 0x13xx word
CALLA_FORMS = {0x4: Mode.REG, 0x6: Mode.INDIRECT, 0xB: Mode.IMM}
CALLA_CODES = {v: k for k, v in CALLA_FORMS.items()}


@dataclass(frozen=True)
class Operand:
    mode: Mode
    reg: Optional[int] = None
    value: int = 0  # immediate / index offset / absolute address / symbolic target
    cg: bool = False

    def render(self) -> str:
        if self.mode is Mode.REG:
            return reg_name(self.reg)
        if self.mode is Mode.INDIRECT:
            return "@" + reg_name(self.reg)
        if self.mode is Mode.AUTOINC:
            return "@" + reg_name(self.reg) + "+"
        if self.mode is Mode.IMM:
            return "#%d" % self.value if self.cg else "#0x%X" % self.value
        if self.mode is Mode.INDEXED:
            return "%d(%s)" % (self.value, reg_name(self.reg))
        if self.mode is Mode.SYMBOLIC:
            return "0x%X" % self.value
        return "&0x%X" % self.value


@dataclass(frozen=True)
class DecodedForm:
    mnemonic: str
    fmt: Format
    width: Width
    src: Optional[Operand]
    dst: Optional[Operand]
    size: int
    cycles: int
    target: Optional[int] = None  # jump destination

    @property
    def src_mode(self) -> Optional[Mode]:
        return self.src.mode if self.src else None

    @property
    def dst_mode(self) -> Optional[Mode]:
        return self.dst.mode if self.dst else None

    @property
    def pc_dest(self) -> bool:
        return self.dst is not None and self.dst.mode is Mode.REG and self.dst.reg == PC

    def text(self) -> str:
        return disassemble(self)


def reg_name(r: int) -> str:
    return REG_NAMES.get(r, "R%d" % r)


def double_op_cycles(src_mode: Mode, dst_mode: Mode, cg: bool = False, pc_dest: bool = False) -> int:
    """Cycles for a two-operand instruction; a function of the operand shapes only."""
    if src_mode is Mode.REG or cg:
        base = {Mode.REG: 1}.get(dst_mode, 4)
        pc = 3
    elif src_mode in (Mode.INDIRECT, Mode.AUTOINC):
        base = 2 if dst_mode is Mode.REG else 5
        pc = 4
    elif src_mode is Mode.IMM:
        base = 2 if dst_mode is Mode.REG else 5
        pc = 3
    else:
        base = 3 if dst_mode is Mode.REG else 6
        pc = 5
    if dst_mode is Mode.REG and pc_dest:
        return pc
    return base


def single_op_cycles(mnemonic: str, mode: Mode, cg: bool = False) -> int:
    if mnemonic == "RETI":
        return 5
    reglike = mode is Mode.REG or cg
    if mnemonic == "CALL":
        if reglike or mode in (Mode.INDIRECT, Mode.AUTOINC, Mode.IMM):
            return 4
        return 6 if mode is Mode.ABSOLUTE else 5
    if mnemonic == "PUSH":
        if reglike or mode in (Mode.INDIRECT, Mode.AUTOINC, Mode.IMM):
            return 3
        return 4
    # RRC, RRA, SWPB, SXT
    if reglike:
        return 1
    if mode in (Mode.INDIRECT, Mode.AUTOINC):
        return 3
    return 4


def cpux_cycles(mnemonic: str, src_mode: Mode, dst_mode: Mode, pc_dest: bool = False) -> int:
    if mnemonic == "CALLA":
        return 5
    if src_mode is Mode.REG and dst_mode is Mode.REG:
        return 3 if pc_dest else 1
    if src_mode is Mode.IMM:
        return 2 if mnemonic == "MOVA" else 3
    if src_mode in (Mode.INDIRECT, Mode.AUTOINC):
        return 4 if pc_dest else 3
    return 4


JUMP_CYCLES = 2
RETI_CYCLES = 5


# ---------------------------------------------------------------------------
# decoding

ReadWord = Callable[[int], int]


def _decode_source(as_: int, reg: int, ext: Callable[[], tuple]) -> Operand:
    if reg == CG:
        return Operand(Mode.IMM, value=(0, 1, 2, -1)[as_], cg=True)
    if reg == SR and as_ >= 2:
        return Operand(Mode.IMM, value=4 if as_ == 2 else 8, cg=True)
    if as_ == 0:
        return Operand(Mode.REG, reg)
    if as_ == 1:
        word, where = ext()
        if reg == PC:
            return Operand(Mode.SYMBOLIC, value=(where + word) & 0xFFFF)
        if reg == SR:
            return Operand(Mode.ABSOLUTE, value=word)
        return Operand(Mode.INDEXED, reg, _signed16(word))
    if as_ == 2:
        return Operand(Mode.INDIRECT, reg)
    if reg == PC:
        word, _ = ext()
        return Operand(Mode.IMM, value=word)
    return Operand(Mode.AUTOINC, reg)


def _decode_dest(ad: int, reg: int, ext: Callable[[], tuple]) -> Operand:
    if ad == 0:
        return Operand(Mode.REG, reg)
    word, where = ext()
    if reg == PC:
        return Operand(Mode.SYMBOLIC, value=(where + word) & 0xFFFF)
    if reg == SR:
        return Operand(Mode.ABSOLUTE, value=word)
    return Operand(Mode.INDEXED, reg, _signed16(word))


def _signed16(w: int) -> int:
    return w - 0x10000 if w & 0x8000 else w


def decode(read_word: ReadWord, addr: int) -> DecodedForm:
    """Decode the instruction at ``addr``; ``read_word`` performs raw fetches."""
    if addr & 1:
        raise DecodeError(addr, 0, "odd instruction address")
    w = read_word(addr)
    cursor = [addr + 2]

    def ext():
        where = cursor[0]
        cursor[0] += 2
        return read_word(where), where

    top = w >> 12
    if top >= 4:
        mnem = DOUBLE_OPS[top]
        src = _decode_source((w >> 4) & 3, (w >> 8) & 0xF, ext)
        dst = _decode_dest((w >> 7) & 1, w & 0xF, ext)
        width = Width.BYTE if w & 0x40 else Width.WORD
        pc_dest = dst.mode is Mode.REG and dst.reg == PC
        cycles = double_op_cycles(src.mode, dst.mode, src.cg, pc_dest)
        return DecodedForm(mnem, Format.DOUBLE, width, src, dst, cursor[0] - addr, cycles)
    if top in (2, 3):
        off = w & 0x3FF
        if off & 0x200:
            off -= 0x400
        target = (addr + 2 + 2 * off) & 0xFFFF
        return DecodedForm(JUMP_OPS[(w >> 10) & 7], Format.JUMP, Width.WORD, None, None, 2,
                           JUMP_CYCLES, target)
    if top == 1:
        if w == 0x1300:
            return DecodedForm("RETI", Format.SINGLE, Width.WORD, None, None, 2, RETI_CYCLES)
        if 0x1300 < w < 0x1400:
            return _decode_calla(w, addr, ext, cursor)
        if w & 0x0C00:
            raise DecodeError(addr, w)
        op = (w >> 7) & 7
        if op > 5:
            raise DecodeError(addr, w)
        mnem = SINGLE_OPS[op]
        byte = bool(w & 0x40)
        if byte and op in (1, 3, 5):
            raise DecodeError(addr, w, "byte form not defined")
        operand = _decode_source((w >> 4) & 3, w & 0xF, ext)
        if operand.mode is Mode.IMM and mnem not in ("PUSH", "CALL") and not operand.cg:
            raise DecodeError(addr, w, "immediate operand not allowed")
        width = Width.BYTE if byte else Width.WORD
        cycles = single_op_cycles(mnem, operand.mode, operand.cg)
        return DecodedForm(mnem, Format.SINGLE, width, operand, None, cursor[0] - addr, cycles)
    return _decode_cpux(w, addr, ext, cursor)


def _decode_calla(w, addr, ext, cursor) -> DecodedForm:
    sub, reg = (w >> 4) & 0xF, w & 0xF
    mode = CALLA_FORMS.get(sub)
    if mode is None:
        raise DecodeError(addr, w, "unsupported CALLA form")
    if mode is Mode.IMM:
        word, _ = ext()
        operand = Operand(Mode.IMM, value=(reg << 16) | word)
    else:
        operand = Operand(mode, reg)
    return DecodedForm("CALLA", Format.CPUX, Width.ADDR, operand, None, cursor[0] - addr,
                       cpux_cycles("CALLA", mode, Mode.REG))


def _decode_cpux(w, addr, ext, cursor) -> DecodedForm:
    sub = (w >> 4) & 0xF
    hi, lo = (w >> 8) & 0xF, w & 0xF
    if sub not in CPUX_OPS:
        raise DecodeError(addr, w)
    mnem, smode, dmode = CPUX_OPS[sub]
    if smode is Mode.IMM:
        word, _ = ext()
        src = Operand(Mode.IMM, value=(hi << 16) | word)
    elif smode is Mode.ABSOLUTE:
        word, _ = ext()
        src = Operand(Mode.ABSOLUTE, value=(hi << 16) | word)
    elif smode is Mode.INDEXED:
        word, _ = ext()
        src = Operand(Mode.INDEXED, hi, _signed16(word))
    else:
        src = Operand(smode, hi)
    if dmode is Mode.ABSOLUTE:
        word, _ = ext()
        dst = Operand(Mode.ABSOLUTE, value=(lo << 16) | word)
    elif dmode is Mode.INDEXED:
        word, _ = ext()
        dst = Operand(Mode.INDEXED, lo, _signed16(word))
    else:
        dst = Operand(Mode.REG, lo)
    pc_dest = dmode is Mode.REG and lo == PC
    return DecodedForm(mnem, Format.CPUX, Width.ADDR, src, dst, cursor[0] - addr,
                       cpux_cycles(mnem, smode, dmode, pc_dest))


# ---------------------------------------------------------------------------
# encoding

class EncodeError(ValueError):
    pass


def _encode_source(op: Operand, ext_addr: int) -> tuple:
    """Return (As, reg, [ext words])."""
    m = op.mode
    if m is Mode.REG:
        return 0, op.reg, []
    if m is Mode.INDIRECT:
        return 2, op.reg, []
    if m is Mode.AUTOINC:
        return 3, op.reg, []
    if m is Mode.IMM:
        if op.cg:
            return {0: (0, CG), 1: (1, CG), 2: (2, CG), -1: (3, CG), 4: (2, SR), 8: (3, SR)}[op.value] + ([],)
        return 3, PC, [op.value & 0xFFFF]
    if m is Mode.INDEXED:
        return 1, op.reg, [op.value & 0xFFFF]
    if m is Mode.SYMBOLIC:
        return 1, PC, [(op.value - ext_addr) & 0xFFFF]
    return 1, SR, [op.value & 0xFFFF]


def _encode_dest(op: Operand, ext_addr: int) -> tuple:
    m = op.mode
    if m is Mode.REG:
        return 0, op.reg, []
    if m is Mode.INDEXED:
        return 1, op.reg, [op.value & 0xFFFF]
    if m is Mode.SYMBOLIC:
        return 1, PC, [(op.value - ext_addr) & 0xFFFF]
    if m is Mode.ABSOLUTE:
        return 1, SR, [op.value & 0xFFFF]
    raise EncodeError("destination mode %s not encodable" % m.value)


def encode(form: DecodedForm, addr: int) -> list:
    """Encode ``form`` placed at ``addr`` into a list of 16-bit words."""
    bw = 0x40 if form.width is Width.BYTE else 0
    if form.fmt is Format.DOUBLE:
        as_, sreg, sext = _encode_source(form.src, addr + 2)
        ad, dreg, dext = _encode_dest(form.dst, addr + 2 + 2 * len(sext))
        w = (DOUBLE_OPCODES[form.mnemonic] << 12) | (sreg << 8) | (ad << 7) | bw | (as_ << 4) | dreg
        return [w] + sext + dext
    if form.fmt is Format.JUMP:
        off = (form.target - (addr + 2)) // 2
        if not -512 <= off <= 511 or (form.target - addr) & 1:
            raise EncodeError("jump target out of range")
        return [0x2000 | (JUMP_OPCODES[form.mnemonic] << 10) | (off & 0x3FF)]
    if form.fmt is Format.SINGLE:
        if form.mnemonic == "RETI":
            return [0x1300]
        as_, reg, ext = _encode_source(form.src, addr + 2)
        return [0x1000 | (SINGLE_OPCODES[form.mnemonic] << 7) | bw | (as_ << 4) | reg] + ext
    if form.mnemonic == "CALLA":
        sub = CALLA_CODES[form.src.mode]
        if form.src.mode is Mode.IMM:
            v = form.src.value & 0xFFFFF
            return [0x1300 | (sub << 4) | (v >> 16), v & 0xFFFF]
        return [0x1300 | (sub << 4) | form.src.reg]
    key = (form.mnemonic, form.src.mode, form.dst.mode)
    if key not in CPUX_OPCODES:
        raise EncodeError("unsupported CPUX form %s" % (key,))
    sub = CPUX_OPCODES[key]
    ext = []
    hi = lo = 0
    if form.src.mode in (Mode.IMM, Mode.ABSOLUTE):
        v = form.src.value & 0xFFFFF
        hi, ext = v >> 16, ext + [v & 0xFFFF]
    elif form.src.mode is Mode.INDEXED:
        hi, ext = form.src.reg, ext + [form.src.value & 0xFFFF]
    else:
        hi = form.src.reg
    if form.dst.mode is Mode.ABSOLUTE:
        v = form.dst.value & 0xFFFFF
        lo, ext = v >> 16, ext + [v & 0xFFFF]
    elif form.dst.mode is Mode.INDEXED:
        lo, ext = form.dst.reg, ext + [form.dst.value & 0xFFFF]
    else:
        lo = form.dst.reg
    return [(hi << 8) | (sub << 4) | lo] + ext


def make_form(mnemonic: str, width: Width, src: Optional[Operand], dst: Optional[Operand],
              target: Optional[int] = None) -> DecodedForm:
    """Build a DecodedForm with size and cycles filled in from the shared tables."""
    if mnemonic in JUMP_OPCODES:
        return DecodedForm(mnemonic, Format.JUMP, Width.WORD, None, None, 2, JUMP_CYCLES, target)
    if mnemonic == "RETI":
        return DecodedForm("RETI", Format.SINGLE, Width.WORD, None, None, 2, RETI_CYCLES)
    if mnemonic in DOUBLE_OPCODES:
        size = 2 + 2 * (src.mode.has_ext and not src.cg) + 2 * dst.mode.has_ext
        pc_dest = dst.mode is Mode.REG and dst.reg == PC
        return DecodedForm(mnemonic, Format.DOUBLE, width, src, dst, size,
                           double_op_cycles(src.mode, dst.mode, src.cg, pc_dest))
    if mnemonic in SINGLE_OPCODES:
        size = 2 + 2 * (src.mode.has_ext and not src.cg)
        return DecodedForm(mnemonic, Format.SINGLE, width, src, None, size,
                           single_op_cycles(mnemonic, src.mode, src.cg))
    if mnemonic == "CALLA":
        size = 4 if src.mode is Mode.IMM else 2
        return DecodedForm("CALLA", Format.CPUX, Width.ADDR, src, None, size,
                           cpux_cycles("CALLA", src.mode, Mode.REG))
    size = 2 + 2 * src.mode.has_ext + 2 * dst.mode.has_ext
    pc_dest = dst.mode is Mode.REG and dst.reg == PC
    return DecodedForm(mnemonic, Format.CPUX, Width.ADDR, src, dst, size,
                       cpux_cycles(mnemonic, src.mode, dst.mode, pc_dest))


# ---------------------------------------------------------------------------
# text

# emulated instructions rendered in canonical form: (mnemonic, src-immediate) -> alias
_EMULATED_IMM = {
    ("MOV", 0): "CLR", ("ADD", 1): "INC", ("ADD", 2): "INCD", ("SUB", 1): "DEC",
    ("SUB", 2): "DECD", ("CMP", 0): "TST", ("XOR", -1): "INV", ("ADDC", 0): "ADC",
    ("SUBC", 0): "SBC", ("DADD", 0): "DADC",
}
_SR_ALIASES = {
    ("BIC", 8): "DINT", ("BIS", 8): "EINT", ("BIC", 1): "CLRC", ("BIS", 1): "SETC",
    ("BIC", 2): "CLRZ", ("BIS", 2): "SETZ", ("BIC", 4): "CLRN", ("BIS", 4): "SETN",
}


def canonical_alias(form: DecodedForm) -> Optional[str]:
    """Emulated-instruction spelling of ``form`` (``DEC R12`` for ``SUB #1, R12``), if any."""
    if form.fmt is not Format.DOUBLE:
        if form.mnemonic == "MOVA" and form.src.mode is Mode.AUTOINC and form.src.reg == SP \
                and form.pc_dest:
            return "RETA"
        return None
    sfx = ".B" if form.width is Width.BYTE else ""
    s, d = form.src, form.dst
    if form.mnemonic == "MOV" and s.cg and s.value == 0 and d.mode is Mode.REG and d.reg == CG:
        return "NOP"
    if form.mnemonic == "MOV" and s.mode is Mode.AUTOINC and s.reg == SP:
        return "RET" if form.pc_dest else "POP%s %s" % (sfx, d.render())
    if form.mnemonic == "MOV" and form.pc_dest and not s.cg:
        return "BR %s" % s.render()
    if d.mode is Mode.REG and d.reg == SR and s.cg and form.width is Width.WORD:
        alias = _SR_ALIASES.get((form.mnemonic, s.value))
        if alias:
            return alias
    if s.cg:
        alias = _EMULATED_IMM.get((form.mnemonic, s.value))
        if alias:
            return "%s%s %s" % (alias, sfx, d.render())
    if s.mode is Mode.REG and d.mode is Mode.REG and s.reg == d.reg:
        alias = {"ADD": "RLA", "ADDC": "RLC"}.get(form.mnemonic)
        if alias:
            return "%s%s %s" % (alias, sfx, d.render())
    return None


def disassemble(form: DecodedForm) -> str:
    """Core (non-emulated) TI-syntax text that re-assembles to the same words."""
    if form.fmt is Format.JUMP:
        return "%s 0x%X" % (form.mnemonic, form.target)
    if form.mnemonic == "RETI":
        return "RETI"
    sfx = ".B" if form.width is Width.BYTE else ""
    if form.fmt is Format.SINGLE or form.mnemonic == "CALLA":
        return "%s%s %s" % (form.mnemonic, sfx, form.src.render())
    return "%s%s %s, %s" % (form.mnemonic, sfx, form.src.render(), form.dst.render())


def with_operands(form: DecodedForm, **kw) -> DecodedForm:
    return replace(form, **kw)
