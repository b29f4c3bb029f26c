import numpy as np
from hypothesis import given, settings, strategies as st

from ripencap import hypotheses as hyp
from ripencap.analysis import Confidence, analyze
from ripencap.asm import assemble
from ripencap.attack import AttackConfig, phase1_collect
from ripencap.cpu import MachineState, _execute
from ripencap.isa import PC, SR, Mode, Operand, Width, disassemble, make_form
from ripencap.memory import Memory

ADDR = 0x8004
ops = st.sampled_from(["MOV", "ADD", "ADDC", "SUB", "SUBC", "CMP", "AND", "BIT", "XOR", "BIS", "BIC"])
gprs = st.integers(4, 15)
widths = st.sampled_from([Width.BYTE, Width.WORD])
sources = st.one_of(gprs.map(lambda r: Operand(Mode.REG, r)),
                    st.sampled_from([0, 1, 2, 4, 8, -1]).map(lambda v: Operand(Mode.IMM, value=v, cg=True)))


def run(form, pre):
    m = MachineState(Memory())
    m.regs = list(pre)
    _execute(m, form, ADDR)
    m.regs[PC] &= 0xFFFF
    return tuple(m.regs)


@given(ops, widths, sources, gprs, st.lists(st.integers(0, 0xFFFF), min_size=12, max_size=12),
       st.integers(0, 0x107))
def test_register_forms_are_enumerated(op, w, src, dst, vals, sr):
    f = make_form(op, w, src, Operand(Mode.REG, dst))
    pre = (ADDR, 0x3AFE, sr & 0x107, 0) + tuple(vals)
    obs = hyp.Observation(pre, run(f, pre))
    cands = hyp.double_to_reg(obs, ADDR)
    if hyp.is_twin(op, src, dst, w):
        # a twin must still be explained by some other enumerated form
        assert hyp.verify(cands, ADDR, [obs])
    else:
        assert f in hyp.verify(cands, ADDR, [obs])


@given(st.integers(0, 0xFFFF), st.integers(0, 0x107))
def test_status_bits_shrink_candidates(v, sr):
    f = make_form("CMP", Width.WORD, Operand(Mode.REG, 4), Operand(Mode.REG, 5))
    pre = (ADDR, 0x3AFE, sr, 0, v, v ^ 0x8001) + (0,) * 10
    obs = hyp.Observation(pre, run(f, pre))
    cands = hyp.double_to_reg(hyp.Observation(pre, pre[:2] + (obs.post[SR],) + pre[3:]), ADDR)
    pairs = [(g, run(g, pre)[SR]) for g in cands] + [(f, obs.post[SR] ^ 1)]
    refined = hyp.status_bit_refine(pairs, obs.post[SR])
    assert (f, obs.post[SR]) in refined
    assert all(sr == obs.post[SR] for _, sr in refined)


def test_observation_ignores_interrupt_push_window():
    before = bytes(64)
    after = bytearray(before)
    after[56:60] = b"\x01\x02\x03\x04"          # the two interrupt pushes
    after[10] = 7
    post = (0, 0x2000 + 60) + (0,) * 14
    obs = hyp.Observation((0,) * 16, post, 0x2000, before, bytes(after))
    assert obs.dmem == (0x2000 + 10,)
    assert obs.written(Width.BYTE) == 0x2000 + 10


def test_vector_semantics_agree_with_scalar():
    from ripencap.cpu import double_op
    rng = np.random.default_rng(0)
    s = rng.integers(0, 0x10000, 200)
    for op in hyp.VECTOR_OPS:
        for w in (Width.BYTE, Width.WORD):
            r, sr, _ = hyp.vec_op(op, s, 0x1234, 0x101, w)
            for i in range(0, 200, 17):
                r1, sr1, _ = double_op(op, int(s[i]), 0x1234, 0x101, w)
                assert (int(r[i]), int(sr[i])) == (r1, sr1)


mem_forms = st.one_of(
    st.tuples(st.sampled_from(["MOV", "ADD", "XOR", "SUB"]), widths,
              st.sampled_from(["@R10", "@R10+", "4(R10)", "1(R10)"]), st.just("R12")),
    st.tuples(st.sampled_from(["MOV", "ADD", "BIS"]), widths,
              st.sampled_from(["R12", "#8"]), st.sampled_from(["0(R11)", "6(R11)"])),
)


@settings(max_examples=12)
@given(mem_forms)
def test_memory_forms_decode_end_to_end(spec):
    op, w, src, dst = spec
    text = "%s%s %s, %s" % (op, ".B" if w is Width.BYTE else "", src, dst)
    img = assemble("""
        .org 0x8000
        .ipe_start
    f:  DINT
        NOP
        MOV #data, R10
        MOV #data+16, R11
        MOV #0x1357, R12
        MOV #0x0F0F, 0(R11)     ; relaunches must replay the same run
        MOV #0x0F0F, 6(R11)
    site:
        %s
        RET
    data:
        .word 0x1111, 0x2222, 0x3333, 0x4444, 0, 0, 0, 0, 0, 0, 0, 0
        .ipe_end 0x8400
        .entry f
    """ % text)
    cfg = AttackConfig(img.entry)
    rep = analyze(img, phase1_collect(img, cfg), cfg)
    ins = rep.by_addr()[img.symbols["site"]]
    assert ins.confidence is Confidence.DECODED, (text, ins.alternatives, ins.note)
    expect = img.instruction_at(img.symbols["site"]).form
    assert ins.form == expect, (disassemble(ins.form), text)
