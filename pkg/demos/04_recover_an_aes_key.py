"""Recover the master key from the key expansion fixture.

The routine loads key schedule bytes through registers. Once the last
master key word and one full round key have passed through, the schedule
runs backwards to the master key. Every other byte seen on the way must
agree with it.
"""
from ripencap.aes import key_from_sightings, load_sightings, round_key_seconds
from ripencap.analysis import analyze
from ripencap.attack import AttackConfig, phase1_collect
from ripencap.firmware import fixture

img = fixture("aes")
cfg = AttackConfig(img.entry)
trace = phase1_collect(img, cfg)
report = analyze(img, trace, cfg)
seen = load_sightings(report)
print("bytes observed through decoded loads: %d" % len(seen))

rec = key_from_sightings(seen)
print("round %d words: %s" % (rec.observation.round_index,
                              " ".join("%08x" % w for w in rec.observation.words)))
print("master key    : %s" % rec.key.hex())
truth = img.read_bytes(img.symbols["key"], img.symbols["key"] + 16)
print("matches image : %s" % (rec.key == truth))
print("loads that leaked: %s" % ", ".join("0x%04X %s" % (a, report.by_addr()[a].text) for a in rec.sites))
print("dumps needed %d, %.2f s at 115200 baud" % (rec.dumps_needed, round_key_seconds(rec)))
