"""Walk through phase 1 on the loop fixture.

The routine lives in a protected region: code outside that region reads
0x3FFF from it. Yet a timer interrupt that fires mid-routine spills every
register to the stack, and the attacker's handler copies them out.
"""
from ripencap.analysis import control_flow_label, segment_boundaries
from ripencap.attack import AttackConfig, Attacker, phase1_collect
from ripencap.firmware import fixture

img = fixture("loop")
att = Attacker(img)
print("protected region: 0x%04X..0x%04X, entry 0x%04X" % (img.ipe.start, img.ipe.end, img.entry))
print("word at the entry, read from attacker code: 0x%04X" % att.state.memory.read(img.entry, 0x1C00))

cfg = AttackConfig(img.entry)
trace = phase1_collect(img, cfg, attacker=att)
print("\nrestarted the routine %d times, interrupting one cycle later each time" % len(trace))
print("entry used (first instruction after the interrupt disable): 0x%04X" % cfg.dint_bypass)
print("\nfirst dumps (timer count, pc, r4..r7):")
for d in trace.dumps[:8]:
    print("  %3d  pc=%04X  %s" % (d.timer_count, d.regs[0], " ".join("%04X" % r for r in d.regs[4:8])))

print("\nequal neighbouring dumps collapse into one step per instruction:")
for rec in segment_boundaries(trace)[:10]:
    label = control_flow_label(rec) or ""
    print("  0x%04X  %d cycle(s)%s  %s" % (rec.addr, rec.cycles, "" if rec.exact else "+", label))
print("\n%d bytes crossed the UART" % trace.uart_bytes)
