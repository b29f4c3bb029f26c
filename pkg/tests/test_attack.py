import pytest
from hypothesis import given, strategies as st

from ripencap.attack import (
    RECORD_SIZE, SCRATCH, AttackConfig, AttackError, Attacker, RegisterDump, TraceDB,
    find_dint_bypass, golden_dump, parse_records, phase1_collect, phase3_exfiltrate,
    probe_layout, single_step_oracle, write_exploit, GadgetDescriptor,
)
from ripencap.asm import assemble
from ripencap.isa import PC, Mode, Width

regs20 = st.lists(st.integers(0, 0xFFFFF), min_size=16, max_size=16)


@given(st.integers(0, 2**32 - 1), regs20, st.integers(0, 0xFFFF))
def test_record_round_trip(t, regs, flags):
    d = RegisterDump(t, tuple(regs), flags)
    raw = d.to_record()
    assert len(raw) == RECORD_SIZE
    assert RegisterDump.from_record(raw) == d


def test_parse_records_resyncs_on_stream():
    a = RegisterDump(1, tuple(range(16)), 0)
    b = RegisterDump(2, tuple(range(1, 17)), 0)
    assert parse_records(a.to_record() + b.to_record()) == [a, b]


def test_trace_save_load(tmp_path, traces):
    _, tr = traces("loop")
    tr.save(tmp_path / "t.txt")
    back = TraceDB.load(tmp_path / "t.txt")
    assert back.dumps == tr.dumps and back.initial == tr.initial
    assert (back.ipe, back.entry, back.latency) == (tr.ipe, tr.entry, tr.latency)


def test_trace_rejects_gaps():
    db = TraceDB(initial=(0,) * 16)
    db.add(RegisterDump(1, (0,) * 16, 0))
    with pytest.raises(ValueError):
        db.add(RegisterDump(3, (0,) * 16, 0))


@pytest.mark.parametrize("name", ["loop", "dint", "matrix"])
def test_dint_bypass_skips_the_disable(images, name):
    img = images(name)
    att = Attacker(img)
    assert find_dint_bypass(att, img.entry) == img.entry + 2


def test_interrupts_never_reach_code_without_bypass():
    src = """
        .org 0x8000
        .ipe_start
    f:  DINT
        DINT
        DINT
        DINT
        DINT
        DINT
        DINT
        DINT
        DINT
        RET
        .ipe_end 0x8400
        .entry f
    """
    img = assemble(src)
    with pytest.raises(AttackError):
        find_dint_bypass(Attacker(img), img.entry, max_skip=4)


@pytest.mark.parametrize("name", ["loop", "dint", "matrix"])
def test_phase1_matches_oracle(traces, name, images):
    cfg, tr = traces(name)
    golden = single_step_oracle(images(name), AttackConfig(cfg.victim_entry))
    for d in tr.dumps:
        assert d.regs == golden_dump(golden, d.timer_count)


def test_desired_dumps_caps_collection(images):
    img = images("loop")
    tr = phase1_collect(img, AttackConfig(img.entry, desired_dumps=7))
    assert len(tr) == 7 and tr.uart_bytes == 7 * RECORD_SIZE


def test_seed_changes_launch_registers(images):
    a = AttackConfig(0, seed=1).launch_regs()
    assert a == AttackConfig(0, seed=1).launch_regs() != AttackConfig(0, seed=2).launch_regs()


@pytest.mark.parametrize("k", range(4))
def test_probe_layout_separates_registers(k):
    regs, sp = probe_layout(k)
    assert len({r & 0xFF for r in regs}) == 12
    assert all(SCRATCH[0] <= r < SCRATCH[1] - 0x100 for r in regs)
    assert SCRATCH[0] <= sp < SCRATCH[1] and sp % 2 == 0
    assert regs[0] % 2 == k % 2


def test_relative_order_differs_between_probes():
    orders = {tuple(sorted(range(12), key=lambda i: probe_layout(k)[0][i])) for k in range(4)}
    assert len(orders) == 4


LOOP_READ = GadgetDescriptor(0x800E, Mode.INDIRECT, 13, 15, 0, 2)


def test_phase3_reads_protected_bytes(images):
    img = images("loop")
    att = Attacker(img)
    got = phase3_exfiltrate(att, LOOP_READ, img.ipe.start + 1, img.ipe.start + 40)
    assert got == img.read_bytes(img.ipe.start + 1, img.ipe.start + 40)


def test_phase3_calibration_rejects_non_gadget(images):
    img = images("loop")
    with pytest.raises(AttackError):
        phase3_exfiltrate(Attacker(img), GadgetDescriptor(0x8002, Mode.INDIRECT, 13, 15, 0, 2),
                          img.ipe.start, img.ipe.start + 2)


def test_outside_reads_see_nothing(images):
    img = images("loop")
    att = Attacker(img)
    assert att.state.memory.read(img.ipe.start, SCRATCH[0]) == 0x3FFF


def test_write_exploit_needs_alignment(images):
    img = images("matrix")
    att = Attacker(img)
    g = GadgetDescriptor(0xA046, Mode.REG, 4, 11, 0, 4)
    with pytest.raises(AttackError):
        write_exploit(att, g, img.ipe.start + 1, b"\x01\x02")
    write_exploit(att, g, img.ipe.start + 0x200, b"\x11\x22\x33\x44")
    assert bytes(att.state.memory.data[img.ipe.start + 0x200:img.ipe.start + 0x204]) == b"\x11\x22\x33\x44"
