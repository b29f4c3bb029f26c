import json

import pytest

from ripencap.cpu import MachineState
from ripencap.firmware import FIXTURES, STACK_TOP, boot, dump_image, fixture, load, read_image, save_image
from ripencap.memory import Memory, MemoryFault


@pytest.mark.parametrize("name", FIXTURES)
def test_manifest_round_trip(tmp_path, name):
    img = fixture(name)
    manifest = save_image(img, tmp_path / name)
    back = read_image(tmp_path / name)
    assert back.segments == img.segments and back.ipe == img.ipe
    assert back.entry == img.entry and back.symbols == img.symbols
    assert json.loads(manifest.read_text())["byte_order"] == "little"


def test_load_sets_pc_sp_and_protection():
    img = fixture("loop")
    m = boot(img)
    assert m.pc == img.entry and m.sp == STACK_TOP
    assert m.memory.ipe == img.ipe
    assert m.memory.read(img.entry, 0x4400) == 0x3FFF


def test_dump_image_reproduces_loaded_bytes():
    img = fixture("dint")
    assert dump_image(boot(img), img).segments == img.segments


def test_unmapped_segment_rejected():
    img = fixture("loop")
    img.segments = [(0x3C00, b"\x00\x00")]
    with pytest.raises(MemoryFault):
        load(img, MachineState(Memory()))
