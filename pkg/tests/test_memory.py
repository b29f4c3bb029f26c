import pytest
from hypothesis import given, strategies as st

from ripencap.memory import DENIED_WORD, IpeConfig, Memory, MemoryFault, is_granted, is_mapped

IPE = IpeConfig(0x8000, 0x8400)
inside = st.integers(IPE.start, IPE.end - 2)
outside_pc = st.one_of(st.integers(0x4000, IPE.start - 2), st.integers(IPE.end, 0xFFFE),
                       st.integers(0x1C00, 0x3BFE))


def mem():
    m = Memory(IPE)
    m.raw_write(IPE.start, bytes(range(256)) * 4)
    return m


@given(inside, outside_pc)
def test_outside_reads_see_denial_value(addr, pc):
    m = mem()
    assert m.read(addr, pc) == DENIED_WORD
    assert m.read(addr, pc, 1) == 0xFF
    assert m.denials[-1].addr == addr & ~1 or m.denials[-1].addr == addr


@given(inside, outside_pc, st.integers(0, 0xFFFF))
def test_outside_writes_are_dropped(addr, pc, value):
    m = mem()
    before = bytes(m.data)
    assert m.write(addr, value, pc) is False
    assert bytes(m.data) == before


@given(inside, inside, st.integers(0, 0xFFFF))
def test_inside_accesses_work(addr, pc, value):
    m = mem()
    assert m.write(addr, value, pc)
    assert m.read(addr, pc) == value
    assert not m.denials


def test_disabled_region_is_open():
    off = IpeConfig(0x8000, 0x8400, enabled=False)
    assert is_granted(off, 0x8000, 0x4400)
    assert not is_granted(IPE, 0x8000, 0x4400)


@pytest.mark.parametrize("addr", [0x1000, 0x1BFF, 0x3C00, 0x3FFF])
def test_unmapped_addresses_fault(addr):
    assert not is_mapped(addr)
    with pytest.raises(MemoryFault):
        Memory().read(addr, 0x4400, 1)


def test_bounds_must_be_segment_aligned():
    with pytest.raises(ValueError):
        IpeConfig(0x8001, 0x8400)
    with pytest.raises(ValueError):
        IpeConfig(0x2000, 0x2400)           # SRAM is not nonvolatile


def test_word_access_ignores_bit_zero():
    m = Memory()
    m.write(0x4401, 0xBEEF, 0x4400)
    assert m.read(0x4400, 0x4400) == 0xBEEF
