"""Two-pass assembler for the TI-syntax subset used by the fixtures.

Supported directives::

    .org ADDR          start a new segment
    .word E[, E...]    16-bit little-endian data
    .byte E[, E...]    bytes
    .space N           N zero bytes
    .align N           pad with zeros to an N-byte boundary
    .equ NAME, E       constant (usable for constant-generator immediates)
    .entry E           image entry point
    .vector NAME, E    interrupt vector (``timer`` or ``reset``)
    .ipe_start [E]     open the IPE region (default: current address)
    .ipe_end [E]       close the IPE region (default: current address)
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from .isa import (
    CG_VALUES, CPUX_OPCODES, DOUBLE_OPCODES, JUMP_OPCODES, PC, SINGLE_OPCODES, SP, SR,
    DecodedForm, EncodeError, Mode, Operand, Width, disassemble, decode, encode, make_form,
)
from .memory import IpeConfig
from .peripherals import VECTORS


class AsmError(Exception):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line
        self.msg = msg


@dataclass
class ListingEntry:
    addr: int
    form: DecodedForm
    line: int
    source: str


@dataclass
class FirmwareImage:
    segments: list                     # [(base, bytes)]
    ipe: Optional[IpeConfig]
    symbols: dict
    entry: int
    vectors: dict = field(default_factory=dict)
    listing: list = field(default_factory=list, compare=False, repr=False)

    def read_bytes(self, start: int, end: int) -> bytes:
        """Image contents over [start, end); bytes outside any segment are 0."""
        out = bytearray(end - start)
        for base, payload in self.segments:
            lo, hi = max(base, start), min(base + len(payload), end)
            if lo < hi:
                out[lo - start:hi - start] = payload[lo - base:hi - base]
        return bytes(out)

    def ipe_bytes(self) -> bytes:
        return self.read_bytes(self.ipe.start, self.ipe.end)

    def instruction_at(self, addr: int) -> Optional[ListingEntry]:
        for e in self.listing:
            if e.addr == addr:
                return e
        return None


REGISTERS = {"PC": 0, "SP": 1, "SR": 2, "CG": 3}
REGISTERS.update({"R%d" % i: i for i in range(16)})

_TOKEN = re.compile(r"\s*(0[xX][0-9a-fA-F]+|\d+|[A-Za-z_.][A-Za-z0-9_.]*|\$|[-+()])")

# emulated mnemonic -> (core mnemonic, fixed source or None, fixed destination or None)
_EMULATED = {
    "NOP": ("MOV", "#0", "R3"), "RET": ("MOV", "@SP+", "PC"), "RETA": ("MOVA", "@SP+", "PC"),
    "DINT": ("BIC", "#8", "SR"), "EINT": ("BIS", "#8", "SR"),
    "CLRC": ("BIC", "#1", "SR"), "SETC": ("BIS", "#1", "SR"),
    "CLRZ": ("BIC", "#2", "SR"), "SETZ": ("BIS", "#2", "SR"),
    "CLRN": ("BIC", "#4", "SR"), "SETN": ("BIS", "#4", "SR"),
    "POP": ("MOV", "@SP+", None), "BR": ("MOV", None, "PC"), "CLR": ("MOV", "#0", None),
    "INC": ("ADD", "#1", None), "INCD": ("ADD", "#2", None),
    "DEC": ("SUB", "#1", None), "DECD": ("SUB", "#2", None),
    "TST": ("CMP", "#0", None), "INV": ("XOR", "#-1", None),
    "ADC": ("ADDC", "#0", None), "SBC": ("SUBC", "#0", None), "DADC": ("DADD", "#0", None),
    "RLA": ("ADD", "=dst", None), "RLC": ("ADDC", "=dst", None),
}
_JUMP_ALIASES = {"JZ": "JEQ", "JNZ": "JNE", "JLO": "JNC", "JHS": "JC"}


class _Expr:
    """Parsed +/- expression over numbers, symbols and ``$``."""

    def __init__(self, text: str, line: int):
        self.text = text
        self.terms = []  # (sign, kind, value)
        pos, sign, expect_term = 0, 1, True
        text = text.strip()
        if not text:
            raise AsmError(line, "empty expression")
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if not m:
                raise AsmError(line, "bad expression %r" % text)
            tok = m.group(1)
            pos = m.end()
            if tok in "+-":
                if tok == "-":
                    sign = -sign
                expect_term = True
                continue
            if tok in "()":
                continue
            if not expect_term:
                raise AsmError(line, "bad expression %r" % text)
            if tok[0].isdigit():
                self.terms.append((sign, "num", int(tok, 0)))
            elif tok == "$":
                self.terms.append((sign, "here", 0))
            else:
                self.terms.append((sign, "sym", tok))
            sign, expect_term = 1, False
        if expect_term:
            raise AsmError(line, "bad expression %r" % text)

    def symbols(self):
        return [v for _, k, v in self.terms if k == "sym"]

    def value(self, symbols: dict, here: int, line: int) -> int:
        total = 0
        for sign, kind, v in self.terms:
            if kind == "num":
                total += sign * v
            elif kind == "here":
                total += sign * here
            else:
                if v not in symbols:
                    raise AsmError(line, "unresolved symbol %r" % v)
                total += sign * symbols[v]
        return total


@dataclass
class _OperandSyntax:
    mode: Mode
    reg: Optional[int] = None
    expr: Optional[_Expr] = None
    cg: bool = False


def _parse_operand(text: str, line: int, equs: dict) -> _OperandSyntax:
    t = text.strip()
    up = t.upper()
    if up in REGISTERS:
        return _OperandSyntax(Mode.REG, REGISTERS[up])
    if t.startswith("@"):
        inc = t.endswith("+")
        name = t[1:-1] if inc else t[1:]
        if name.strip().upper() not in REGISTERS:
            raise AsmError(line, "bad register %r" % name)
        return _OperandSyntax(Mode.AUTOINC if inc else Mode.INDIRECT, REGISTERS[name.strip().upper()])
    if t.startswith("#"):
        e = _Expr(t[1:], line)
        cg = False
        if all(s in equs for s in e.symbols()) and not any(k == "here" for _, k, _ in e.terms):
            cg = e.value(equs, 0, line) in CG_VALUES + (0xFFFF,)
        return _OperandSyntax(Mode.IMM, expr=e, cg=cg)
    if t.startswith("&"):
        return _OperandSyntax(Mode.ABSOLUTE, expr=_Expr(t[1:], line))
    m = re.fullmatch(r"(.*)\(\s*([A-Za-z0-9]+)\s*\)", t)
    if m and m.group(2).upper() in REGISTERS:
        return _OperandSyntax(Mode.INDEXED, REGISTERS[m.group(2).upper()], _Expr(m.group(1) or "0", line))
    return _OperandSyntax(Mode.SYMBOLIC, expr=_Expr(t, line))


def _split_operands(text: str) -> list:
    if not text.strip():
        return []
    out, depth, cur = [], 0, ""
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            out.append(cur)
            cur = ""
        else:
            cur += ch
    out.append(cur)
    return [o.strip() for o in out]


def _ext_count(op: _OperandSyntax, cpux: bool = False) -> int:
    if op.mode is Mode.IMM:
        return 0 if (op.cg and not cpux) else 1
    return 1 if op.mode in (Mode.INDEXED, Mode.SYMBOLIC, Mode.ABSOLUTE) else 0


@dataclass
class _Item:
    line: int
    addr: int
    kind: str            # "insn" | "word" | "byte" | "space"
    mnemonic: str = ""
    width: Width = Width.WORD
    operands: tuple = ()
    size: int = 0
    exprs: tuple = ()
    source: str = ""


def _parse_instruction(mnem_raw: str, rest: str, line: int, equs: dict):
    parts = mnem_raw.upper().split(".")
    mnem = parts[0]
    suffix = parts[1] if len(parts) > 1 else ""
    if len(parts) > 2 or suffix not in ("", "B", "W", "A"):
        raise AsmError(line, "bad mnemonic %r" % mnem_raw)
    width = {"": Width.WORD, "W": Width.WORD, "B": Width.BYTE, "A": Width.ADDR}[suffix]
    ops = _split_operands(rest)
    mnem = _JUMP_ALIASES.get(mnem, mnem)
    if mnem in _EMULATED:
        core, fsrc, fdst = _EMULATED[mnem]
        need = 1 if fsrc == "=dst" else (fsrc is None) + (fdst is None)
        if len(ops) != need:
            raise AsmError(line, "%s takes %d operand(s)" % (mnem, need))
        if fsrc == "=dst":
            ops = [ops[0], ops[0]]
        else:
            ops = ([fsrc] if fsrc else [ops.pop(0)]) + ([fdst] if fdst else ops)
        mnem = core
    if mnem in JUMP_OPCODES:
        if len(ops) != 1:
            raise AsmError(line, "jump takes one operand")
        return mnem, Width.WORD, (_Expr(ops[0], line),), 2
    if mnem == "RETI":
        if ops:
            raise AsmError(line, "RETI takes no operands")
        return mnem, Width.WORD, (), 2
    if mnem in DOUBLE_OPCODES:
        if len(ops) != 2:
            raise AsmError(line, "%s takes two operands" % mnem)
        src = _parse_operand(ops[0], line, equs)
        dst = _parse_operand(ops[1], line, equs)
        if dst.mode in (Mode.IMM, Mode.INDIRECT, Mode.AUTOINC):
            raise AsmError(line, "invalid destination %r" % ops[1])
        if width is Width.ADDR:
            raise AsmError(line, ".A suffix not supported on %s" % mnem)
        return mnem, width, (src, dst), 2 + 2 * _ext_count(src) + 2 * _ext_count(dst)
    if mnem in SINGLE_OPCODES:
        if len(ops) != 1:
            raise AsmError(line, "%s takes one operand" % mnem)
        src = _parse_operand(ops[0], line, equs)
        return mnem, width, (src,), 2 + 2 * _ext_count(src)
    if mnem == "CALLA":
        src = _parse_operand(ops[0], line, equs) if len(ops) == 1 else None
        if src is None or src.mode not in (Mode.REG, Mode.INDIRECT, Mode.IMM):
            raise AsmError(line, "unsupported CALLA operand")
        src.cg = False
        return mnem, Width.ADDR, (src,), 2 + 2 * (src.mode is Mode.IMM)
    if mnem in ("MOVA", "ADDA", "SUBA", "CMPA"):
        if len(ops) != 2:
            raise AsmError(line, "%s takes two operands" % mnem)
        src = _parse_operand(ops[0], line, equs)
        dst = _parse_operand(ops[1], line, equs)
        src.cg = dst.cg = False
        if (mnem, src.mode, dst.mode) not in CPUX_OPCODES:
            raise AsmError(line, "unsupported %s form" % mnem)
        return mnem, Width.ADDR, (src, dst), 2 + 2 * _ext_count(src, True) + 2 * _ext_count(dst, True)
    raise AsmError(line, "unknown mnemonic %r" % mnem_raw)


def _resolve(op: _OperandSyntax, symbols: dict, here: int, line: int) -> Operand:
    if op.mode in (Mode.REG, Mode.INDIRECT, Mode.AUTOINC):
        return Operand(op.mode, op.reg)
    v = op.expr.value(symbols, here, line)
    if op.mode is Mode.IMM:
        if op.cg:
            return Operand(Mode.IMM, value=-1 if v in (-1, 0xFFFF) else v, cg=True)
        return Operand(Mode.IMM, value=v & 0xFFFFF)
    if op.mode is Mode.INDEXED:
        if not -0x8000 <= v <= 0xFFFF:
            raise AsmError(line, "index out of range")
        return Operand(Mode.INDEXED, op.reg, v - 0x10000 if v >= 0x8000 else v)
    return Operand(op.mode, value=v & 0xFFFFF)


def assemble(source: str) -> FirmwareImage:
    """Assemble ``source`` into a firmware image (two passes)."""
    symbols: dict = {}
    label_lines: dict = {}
    equs: dict = {}
    items: list = []
    ipe_start = ipe_end = entry = None
    vectors_expr: dict = {}
    entry_expr = None
    here = 0
    origin_set = False

    for lineno, raw in enumerate(source.splitlines(), 1):
        text = raw.split(";", 1)[0].strip()
        while True:
            m = re.match(r"([A-Za-z_.][A-Za-z0-9_.]*)\s*:", text)
            if not m:
                break
            name = m.group(1)
            if name in label_lines:
                raise AsmError(lineno, "duplicate label %r (first defined on line %d)"
                               % (name, label_lines[name]))
            label_lines[name] = lineno
            symbols[name] = here
            text = text[m.end():].strip()
        if not text:
            continue
        head, *tail = text.split(None, 1)
        rest = tail[0].strip() if tail else ""
        low = head.lower()
        if low.startswith("."):
            args = _split_operands(rest)
            if low == ".org":
                here = _Expr(rest, lineno).value({**equs, **symbols}, here, lineno)
                origin_set = True
            elif low == ".equ":
                if len(args) != 2:
                    raise AsmError(lineno, ".equ NAME, VALUE")
                val = _Expr(args[1], lineno).value({**equs, **symbols}, here, lineno)
                equs[args[0]] = val
                symbols[args[0]] = val
            elif low in (".word", ".byte"):
                n = 2 if low == ".word" else 1
                exprs = tuple(_Expr(a, lineno) for a in args)
                items.append(_Item(lineno, here, low[1:], size=n * len(exprs), exprs=exprs))
                here += n * len(exprs)
            elif low == ".space":
                n = _Expr(rest, lineno).value(equs, here, lineno)
                items.append(_Item(lineno, here, "space", size=n))
                here += n
            elif low == ".align":
                n = _Expr(rest, lineno).value(equs, here, lineno)
                pad = (-here) % n
                if pad:
                    items.append(_Item(lineno, here, "space", size=pad))
                here += pad
            elif low in (".ipe_start", ".ipe_end"):
                at = _Expr(rest, lineno).value(equs, here, lineno) if rest else here
                if low == ".ipe_start":
                    ipe_start = (at, lineno)
                else:
                    ipe_end = (at, lineno)
            elif low == ".entry":
                entry_expr = (_Expr(rest, lineno), lineno)
            elif low == ".vector":
                if len(args) != 2 or args[0] not in VECTORS:
                    raise AsmError(lineno, ".vector needs one of %s and a target" % sorted(VECTORS))
                vectors_expr[args[0]] = (_Expr(args[1], lineno), lineno)
            else:
                raise AsmError(lineno, "unknown directive %r" % head)
            continue
        if not origin_set:
            raise AsmError(lineno, "code before .org")
        if here & 1:
            raise AsmError(lineno, "instruction at odd address")
        mnem, width, ops, size = _parse_instruction(head, rest, lineno, equs)
        items.append(_Item(lineno, here, "insn", mnem, width, ops, size, source=text))
        here += size

    # pass 2
    chunks: list = []
    listing: list = []
    for it in items:
        if it.kind == "space":
            payload = bytes(it.size)
        elif it.kind in ("word", "byte"):
            n = 2 if it.kind == "word" else 1
            payload = b"".join(
                (e.value(symbols, it.addr, it.line) & ((1 << 8 * n) - 1)).to_bytes(n, "little")
                for e in it.exprs)
        else:
            form = _build_form(it, symbols)
            try:
                words = encode(form, it.addr)
            except (EncodeError, KeyError) as exc:
                raise AsmError(it.line, str(exc)) from None
            if 2 * len(words) != it.size:
                raise AsmError(it.line, "internal size mismatch")
            payload = b"".join(w.to_bytes(2, "little") for w in words)
            listing.append(ListingEntry(it.addr, form, it.line, it.source))
        chunks.append((it.addr, payload, it.line))

    segments = _coalesce(chunks)
    ipe = None
    if ipe_start or ipe_end:
        if not (ipe_start and ipe_end):
            raise AsmError((ipe_start or ipe_end)[1], ".ipe_start and .ipe_end must be paired")
        try:
            ipe = IpeConfig(ipe_start[0], ipe_end[0])
        except ValueError as exc:
            raise AsmError(ipe_end[1], str(exc)) from None
    vectors = {k: e.value(symbols, 0, ln) for k, (e, ln) in vectors_expr.items()}
    if entry_expr:
        entry = entry_expr[0].value(symbols, 0, entry_expr[1])
    elif "reset" in vectors:
        entry = vectors["reset"]
    elif segments:
        entry = segments[0][0]
    else:
        entry = 0
    labels = {k: v for k, v in symbols.items() if k not in equs}
    return FirmwareImage(segments, ipe, labels, entry, vectors, listing)


def _build_form(it: _Item, symbols: dict) -> DecodedForm:
    if it.mnemonic in JUMP_OPCODES:
        target = it.operands[0].value(symbols, it.addr, it.line)
        off = (target - it.addr - 2) // 2
        if target & 1 or not -512 <= off <= 511:
            raise AsmError(it.line, "jump target 0x%X out of range" % target)
        return make_form(it.mnemonic, Width.WORD, None, None, target & 0xFFFF)
    if it.mnemonic == "RETI":
        return make_form("RETI", Width.WORD, None, None)
    src = _resolve(it.operands[0], symbols, it.addr, it.line)
    dst = _resolve(it.operands[1], symbols, it.addr, it.line) if len(it.operands) > 1 else None
    if it.width is not Width.ADDR:
        if src.mode is not Mode.INDEXED and not src.cg:
            src = Operand(src.mode, src.reg, src.value & 0xFFFF)
        if dst is not None and dst.mode is not Mode.INDEXED:
            dst = Operand(dst.mode, dst.reg, dst.value & 0xFFFF)
    return make_form(it.mnemonic, it.width, src, dst)


def _coalesce(chunks) -> list:
    chunks = sorted(chunks, key=lambda c: c[0])
    segments: list = []
    prev_line = None
    for addr, payload, line in chunks:
        if not payload:
            continue
        if segments:
            base, buf = segments[-1]
            end = base + len(buf)
            if addr < end:
                raise AsmError(line, "segment overlaps data from line %d" % prev_line)
            if addr == end:
                buf.extend(payload)
                prev_line = line
                continue
        segments.append((addr, bytearray(payload)))
        prev_line = line
    return [(b, bytes(p)) for b, p in segments]


# ---------------------------------------------------------------------------
# image -> source

def disassemble_image(image: FirmwareImage) -> str:
    """Re-emit an image as source: instructions where they re-encode exactly, else data."""
    lines = []
    if image.ipe is not None:
        lines += [".ipe_start 0x%X" % image.ipe.start, ".ipe_end 0x%X" % image.ipe.end]
    for base, payload in image.segments:
        lines.append(".org 0x%X" % base)
        mem = payload + b"\x00\x00\x00\x00\x00\x00"
        off = 0
        while off < len(payload):
            addr = base + off
            if off + 1 >= len(payload) or addr & 1:
                lines.append(".byte 0x%02X" % payload[off])
                off += 1
                continue
            text = None
            try:
                form = decode(lambda a: mem[a - base] | (mem[a - base + 1] << 8), addr)
                if off + form.size <= len(payload) and (image.ipe is None or not
                                                        addr < image.ipe.end < addr + form.size):
                    text = disassemble(form)
                    words = [int.from_bytes(payload[off + 2 * i: off + 2 * i + 2], "little")
                             for i in range(form.size // 2)]
                    if _reassemble_one(text, addr) != words:
                        text = None
            except Exception:
                text = None
            if text is None:
                lines.append(".word 0x%04X" % (payload[off] | (payload[off + 1] << 8)))
                off += 2
            else:
                lines.append(text)
                off += form.size
    for name, target in sorted(image.vectors.items()):
        lines.append(".vector %s, 0x%X" % (name, target))
    lines.append(".entry 0x%X" % image.entry)
    return "\n".join(lines) + "\n"


def _reassemble_one(text: str, addr: int) -> list:
    img = assemble(".org 0x%X\n%s\n" % (addr, text))
    payload = img.segments[0][1]
    return [int.from_bytes(payload[i:i + 2], "little") for i in range(0, len(payload), 2)]


def assemble_instruction(text: str, addr: int) -> list:
    """Encode a single instruction line placed at ``addr``; returns 16-bit words."""
    return _reassemble_one(text, addr)
