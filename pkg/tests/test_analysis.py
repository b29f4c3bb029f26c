import pytest

from ripencap.analysis import (
    CELLS, Confidence, emit_report, feasible_cells, find_gadgets, patch_image, reconstruct,
    resimulate, segment_boundaries,
)
from ripencap.asm import assemble_instruction
from ripencap.attack import AttackConfig, phase1_collect, single_step_oracle
from ripencap.hypotheses import Observation
from ripencap.isa import PC, Mode, disassemble
from ripencap.firmware import FIXTURES


@pytest.mark.parametrize("name", FIXTURES)
def test_boundaries_match_uninterrupted_run(traces, images, name):
    cfg, tr = traces(name)
    oracle = single_step_oracle(images(name), AttackConfig(cfg.victim_entry))
    recs = segment_boundaries(tr)
    prev = 0
    for rec, (cyc, regs) in zip(recs, oracle):
        assert rec.post == regs
        if rec.exact:
            assert rec.cycles == cyc - prev
        prev = cyc


def test_cut_trace_leaves_final_run_inexact(images):
    img = images("loop")
    full = segment_boundaries(phase1_collect(img, AttackConfig(img.entry)))
    # stop inside the first multi-cycle instruction after the third
    k = next(i for i, r in enumerate(full) if i > 2 and r.cycles > 1)
    stop = sum(r.cycles for r in full[:k]) + 1
    cut = segment_boundaries(phase1_collect(img, AttackConfig(img.entry, desired_dumps=stop)))
    assert len(cut) == k + 1
    assert not cut[-1].exact and all(r.exact for r in cut[:-1])
    assert cut[-1].cycles < full[k].cycles


def test_cell_table_costs():
    costs = {c.example: c.cycles for c in CELLS}
    assert costs["MOV R4, R5"] == 1
    assert costs["MOV @R4, R5"] == 2
    assert costs["MOV #0x1234, R5"] == 2
    assert costs["MOV 2(R4), 2(R5)"] == 6
    assert costs["MOV R4, PC"] == 3


def test_feasible_cells_follow_length():
    pre = (0x8000,) + (0,) * 15
    post = (0x8004,) + (0,) * 15
    cells = feasible_cells(0x8000, 2, [Observation(pre, post)])
    assert cells and all(c.size == 4 or c.transfer or c.kind == "jump" for c in cells)
    assert "imm" in {c.kind for c in cells}
    assert "mem" not in {c.kind for c in cells}          # @Rn is one word long
    three = feasible_cells(0x8000, 3, [Observation(pre, post)])
    assert "mem" in {c.kind for c in three}                # x(Rn) into a register


@pytest.fixture(scope="module")
def matrix(reports, images):
    return images("matrix"), reports("matrix")


def test_matrix_decodes_to_listing(matrix):
    img, rep = matrix
    assert rep.count(Confidence.DECODED) > 0
    for ins in rep.instructions:
        if ins.confidence is Confidence.DECODED:
            assert ins.form == img.instruction_at(ins.addr).form, disassemble(ins.form)


def test_matrix_absolute_and_symbolic_stay_unknown(matrix):
    img, rep = matrix
    table = rep.by_addr()
    for ins in rep.instructions:
        form = img.instruction_at(ins.addr).form
        modes = {o.mode for o in (form.src, form.dst) if o is not None}
        if modes & {Mode.SYMBOLIC, Mode.ABSOLUTE}:
            assert table[ins.addr].confidence is Confidence.UNKNOWN
        elif any(o is not None and o.mode is Mode.IMM and not o.cg for o in (form.src, form.dst)):
            assert table[ins.addr].confidence is Confidence.AMBIGUOUS


def test_matrix_resimulates_exactly(matrix, traces):
    img, rep = matrix
    cfg, tr = traces("matrix")
    assert resimulate(img, rep, tr, cfg) is None


def test_resimulation_notices_a_wrong_patch(matrix, traces):
    img, rep = matrix
    cfg, tr = traces("matrix")
    ins = next(i for i in rep.instructions if i.confidence is Confidence.DECODED
               and i.form.mnemonic == "ADD" and i.form.src.mode is Mode.REG)
    words = assemble_instruction(disassemble(ins.form).replace("ADD", "SUB"), ins.addr)
    wrong = patch_image(img, {ins.addr: b"".join(w.to_bytes(2, "little") for w in words)})
    assert resimulate(wrong, reconstruct(tr), tr, cfg) is not None


def test_gadgets_and_report(matrix):
    img, rep = matrix
    g = find_gadgets(rep)
    assert 0xA046 in {d.addr for d in g["write"]}
    for d in g["read"]:
        assert d.src_mode in (Mode.INDIRECT, Mode.INDEXED) and d.src_reg != d.dst_reg
    text = emit_report(rep)
    assert "write gadget at 0xA046" in text
    assert text.count("UNKNOWN") == rep.count(Confidence.UNKNOWN)
    assert "decoded %.1f%%" % rep.decoded_pct in text


def test_register_code_decodes_without_probes(traces, images):
    _, tr = traces("loop")
    img = images("loop")
    rep = reconstruct(tr)
    decoded = [i for i in rep.instructions if i.confidence is Confidence.DECODED]
    assert decoded
    for ins in decoded:
        assert ins.form == img.instruction_at(ins.addr).form


def test_calls_are_labelled(reports):
    rep = reports("dint")
    flows = {i.flow for i in rep.instructions}
    assert "CALL" in flows and "RET" in flows
    for r in rep.records:
        assert r.post[PC] != r.pre[PC] or r.cycles > 0
