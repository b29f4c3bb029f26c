import pytest
from hypothesis import given, strategies as st

from ripencap.asm import assemble_instruction
from ripencap.isa import (
    PC, DecodeError, Format, Mode, Operand, Width, canonical_alias, decode, disassemble,
    double_op_cycles, encode, make_form,
)

BASE = 0x4400
words4 = st.lists(st.integers(0, 0xFFFF), min_size=4, max_size=4)


def decode_words(ws, addr=BASE):
    return decode(lambda a: ws[(a - addr) // 2], addr)


def reg(n):
    return Operand(Mode.REG, n)


# --- oracle: the cycle table written out cell by cell -----------------------

TABLE = {
    # source: (to Rm, to PC, to memory)
    Mode.REG: (1, 3, 4),
    Mode.INDIRECT: (2, 4, 5),
    Mode.AUTOINC: (2, 4, 5),
    Mode.IMM: (2, 3, 5),
    Mode.INDEXED: (3, 5, 6),
    Mode.SYMBOLIC: (3, 5, 6),
    Mode.ABSOLUTE: (3, 5, 6),
}


@pytest.mark.parametrize("src", list(TABLE))
@pytest.mark.parametrize("dst", [Mode.REG, "PC", Mode.INDEXED, Mode.SYMBOLIC, Mode.ABSOLUTE])
def test_double_cycles_match_table(src, dst):
    to_reg, to_pc, to_mem = TABLE[src]
    if dst == "PC":
        assert double_op_cycles(src, Mode.REG, pc_dest=True) == to_pc
    elif dst is Mode.REG:
        assert double_op_cycles(src, Mode.REG) == to_reg
    else:
        assert double_op_cycles(src, dst) == to_mem


def test_constant_generator_counts_as_register():
    f = decode_words([0x4314, 0, 0, 0])           # MOV #1, R4
    assert f.src.cg and f.src.value == 1 and f.size == 2 and f.cycles == 1


def test_indexed_load_has_one_extension_word():
    f = decode_words([0x4A1F, 4, 0, 0])           # MOV 4(R10), R15
    assert (f.mnemonic, f.src.mode, f.src.value, f.dst.reg) == ("MOV", Mode.INDEXED, 4, 15)
    assert f.size == 4 and f.cycles == 3


def test_jump_target_is_pc_relative():
    f = decode_words([0x3C00 | 0x3FF, 0, 0, 0])   # JMP -1 word: to itself
    assert f.fmt is Format.JUMP and f.target == BASE and f.cycles == 2


@given(words4)
def test_encode_inverts_decode(ws):
    try:
        f = decode_words(ws)
    except DecodeError:
        return
    assert encode(f, BASE) == ws[:f.size // 2]


@given(words4)
def test_size_counts_extension_words(ws):
    try:
        f = decode_words(ws)
    except DecodeError:
        return
    if f.fmt is Format.DOUBLE:
        ext = (f.src.mode.has_ext and not f.src.cg) + f.dst.mode.has_ext
        assert f.size == 2 + 2 * ext


@given(words4)
def test_cycles_never_depend_on_mnemonic(ws):
    try:
        f = decode_words(ws)
    except DecodeError:
        return
    if f.fmt is not Format.DOUBLE:
        return
    for other in ("MOV", "ADD", "XOR", "CMP", "BIC"):
        g = make_form(other, f.width, f.src, f.dst)
        assert g.cycles == f.cycles and g.size == f.size


@given(words4)
def test_text_reassembles_to_same_words(ws):
    try:
        f = decode_words(ws)
    except DecodeError:
        return
    assert assemble_instruction(disassemble(f), BASE) == ws[:f.size // 2]


def test_aliases():
    one = Operand(Mode.IMM, value=1, cg=True)
    assert canonical_alias(make_form("SUB", Width.WORD, one, reg(12))) == "DEC R12"
    ret = make_form("MOV", Width.WORD, Operand(Mode.AUTOINC, 1), reg(PC))
    assert canonical_alias(ret) == "RET"
    assert canonical_alias(make_form("ADD", Width.WORD, reg(5), reg(6))) is None


def test_byte_width_renders_suffix():
    f = make_form("MOV", Width.BYTE, Operand(Mode.INDIRECT, 14), reg(8))
    assert disassemble(f) == "MOV.B @R14, R8"
