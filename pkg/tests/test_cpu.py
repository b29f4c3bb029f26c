import pytest
from hypothesis import given, strategies as st

from ripencap.asm import assemble
from ripencap.cpu import JUMP_CONDITIONS, MachineState, double_op, interrupt_enter, run_until, single_op, step, timer_arm
from ripencap.firmware import load
from ripencap.isa import C_BIT, GIE, N_BIT, PC, SP, SR, V_BIT, Z_BIT, Width
from ripencap.memory import Memory
from ripencap.peripherals import VECTORS

FLAGS = C_BIT | Z_BIT | N_BIT | V_BIT
widths = st.sampled_from([Width.BYTE, Width.WORD])


def signed(v, bits):
    return v - (1 << bits) if v >> (bits - 1) & 1 else v


def oracle(op, s, d, sr, bits):
    """Reference semantics from signed/unsigned arithmetic, no bit tricks."""
    mask = (1 << bits) - 1
    s, d = s & mask, d & mask
    c = sr & 1
    if op in ("MOV", "BIS", "BIC"):
        r = {"MOV": s, "BIS": d | s, "BIC": d & ~s & mask}[op]
        return r, None
    if op in ("ADD", "ADDC"):
        cin = c if op == "ADDC" else 0
        full = d + s + cin
        sfull = signed(d, bits) + signed(s, bits) + cin
        r = full & mask
        return r, (full > mask, sfull != signed(r, bits))
    if op in ("SUB", "SUBC", "CMP"):
        borrow = (1 - c) if op == "SUBC" else 0
        full = d - s - borrow
        sfull = signed(d, bits) - signed(s, bits) - borrow
        r = full & mask
        return r, (full >= 0, sfull != signed(r, bits))
    if op in ("AND", "BIT"):
        r = s & d
        return r, (r != 0, False)
    if op == "XOR":
        r = s ^ d
        return r, (r != 0, signed(s, bits) < 0 and signed(d, bits) < 0)
    raise AssertionError(op)


@given(st.sampled_from(["MOV", "BIS", "BIC", "ADD", "ADDC", "SUB", "SUBC", "CMP", "AND", "BIT", "XOR"]),
       st.integers(0, 0xFFFF), st.integers(0, 0xFFFF), st.integers(0, 0x1FF), widths)
def test_double_op_matches_oracle(op, s, d, sr, w):
    bits = 8 if w is Width.BYTE else 16
    r, sr2, writes = double_op(op, s, d, sr, w)
    exp_r, cv = oracle(op, s, d, sr, bits)
    assert writes == (op not in ("CMP", "BIT"))
    assert r == exp_r
    if cv is None:
        assert sr2 == sr
        return
    c, v = cv
    assert bool(sr2 & C_BIT) == c
    assert bool(sr2 & V_BIT) == v
    assert bool(sr2 & Z_BIT) == (exp_r == 0)
    assert bool(sr2 & N_BIT) == bool(exp_r >> (bits - 1) & 1)
    assert sr2 & ~FLAGS == sr & ~FLAGS


@given(st.integers(0, 0xFFFF), st.integers(0, 0xFFFF))
def test_rotates(d, sr):
    r, sr2 = single_op("RRC", d, sr, Width.WORD)
    assert r == (d >> 1) | ((sr & 1) << 15) and bool(sr2 & C_BIT) == bool(d & 1)
    r, sr2 = single_op("RRA", d, sr, Width.WORD)
    assert signed(r, 16) == signed(d, 16) >> 1
    r, _ = single_op("SWPB", d, sr, Width.WORD)
    assert r.to_bytes(2, "little") == d.to_bytes(2, "big")
    r, _ = single_op("SXT", d, sr, Width.WORD)
    assert signed(r, 16) == signed(d & 0xFF, 8)


def test_jump_conditions():
    assert JUMP_CONDITIONS["JGE"](N_BIT | V_BIT) and JUMP_CONDITIONS["JL"](N_BIT)
    assert JUMP_CONDITIONS["JNC"](0) and not JUMP_CONDITIONS["JC"](0)


def machine(src, ipe=False):
    img = assemble(src)
    st_ = MachineState(Memory())
    load(img, st_)
    return img, st_


def test_byte_op_clears_high_bits_of_register():
    _, m = machine(".org 0x4400\nMOV #0x1234, R5\nMOV.B #0x7F, R5\nJMP $\n")
    step(m), step(m)
    assert m.regs[5] == 0x7F


def test_interrupt_pushes_pc_then_sr():
    _, m = machine(".org 0x4400\nisr: JMP isr\nmain: NOP\nJMP main\n.vector timer, isr\n.entry main\n")
    m.sr = GIE | C_BIT
    pc, sp = m.pc, m.sp
    before = m.cycles
    interrupt_enter(m)
    assert m.memory.raw_read_word(sp - 2) == pc
    assert m.memory.raw_read_word(sp - 4) == GIE | C_BIT
    assert m.sp == sp - 4 and not m.sr & GIE
    assert m.pc == m.memory.raw_read_word(VECTORS["timer"])
    assert m.cycles - before == m.latency


def test_timer_fires_between_instructions():
    _, m = machine(".org 0x4400\nisr: JMP isr\nmain: MOV #1, R4\nMOV 2(R4), R5\nNOP\n"
                   ".vector timer, isr\n.entry main\n")
    m.sr = GIE
    timer_arm(m, 2)
    step(m)                                       # 1 cycle
    step(m)                                       # 3 more; timer now due
    ev = step(m)
    assert ev.kind.name == "INTERRUPT_ENTERED"
    assert m.memory.raw_read_word(m.sp + 2) == 0x4408


straight = st.lists(st.tuples(st.sampled_from(["ADD", "SUB", "XOR", "AND", "BIS", "BIC", "ADDC", "MOV"]),
                              st.integers(4, 15), st.integers(4, 15), st.booleans()),
                    min_size=1, max_size=25)


@given(straight, st.lists(st.integers(0, 0xFFFF), min_size=12, max_size=12))
def test_register_programs_match_oracle_and_cycle_sum(prog, init):
    src = [".org 0x4400"] + ["%s%s R%d, R%d" % (op, ".B" if b else "", s, d) for op, s, d, b in prog]
    src.append("done: JMP done")
    _, m = machine("\n".join(src))
    m.regs[4:16] = list(init)
    regs, sr = list(init), m.sr
    for op, s, d, b in prog:
        bits = 8 if b else 16
        r, cv = oracle(op, regs[s - 4], regs[d - 4], sr, bits)
        regs[d - 4] = r
        if cv is not None:
            c, v = cv
            sr = (sr & ~FLAGS) | (C_BIT if c else 0) | (V_BIT if v else 0) \
                | (Z_BIT if r == 0 else 0) | (N_BIT if r >> (bits - 1) & 1 else 0)
    costs = 0
    for _ in prog:
        costs += step(m).retired.cycles
    assert m.regs[4:16] == regs
    assert m.sr == sr
    assert m.cycles == costs == len(prog)


def test_run_until_budget():
    _, m = machine(".org 0x4400\nspin: JMP spin\n")
    with pytest.raises(RuntimeError):
        run_until(m, lambda s, e: False, max_steps=10)


def test_cpuoff_halts():
    _, m = machine(".org 0x4400\nBIS #0x10, SR\nNOP\n")
    step(m)
    assert m.halted
