"""Rebuild the matrix fixture's code from its register trace.

Each instruction's cycle count narrows the addressing modes; the register
deltas, plus a few re-runs with chosen pointers, pick the operation. Forms
whose operand is a literal address can't be told apart from the trace and
stay UNKNOWN; immediates are only known up to their effect.
"""
from ripencap.analysis import analyze, emit_report, resimulate
from ripencap.attack import AttackConfig, phase1_collect
from ripencap.firmware import fixture

img = fixture("matrix")
cfg = AttackConfig(img.entry)
trace = phase1_collect(img, cfg)
report = analyze(img, trace, cfg)
print(emit_report(report))

wrong = 0
for ins in report.instructions:
    if ins.form is not None and ins.form != img.instruction_at(ins.addr).form:
        wrong += 1
print("decoded forms that disagree with the assembler listing:", wrong)

first = resimulate(img, report, trace, cfg)
print("re-running with the decoded listing patched in:",
      "identical trace" if first is None else "diverges at timer count %d" % first)
