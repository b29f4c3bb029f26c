"""Firmware manifests on disk and loading images into a machine."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Union

from .asm import FirmwareImage, assemble
from .cpu import MachineState
from .memory import IpeConfig, Memory, MemoryFault, is_mapped
from .peripherals import VECTORS

STACK_TOP = 0x3B00
MANIFEST = "manifest.json"


def load(image: FirmwareImage, state: MachineState, stack_top: int = STACK_TOP) -> None:
    """Initialise memory, IPE bounds, vectors, PC and SP from ``image``."""
    for base, payload in image.segments:
        if not (is_mapped(base) and is_mapped(base + len(payload) - 1)):
            raise MemoryFault(base)
    state.memory.ipe = image.ipe
    for base, payload in image.segments:
        state.memory.raw_write(base, payload)
    for name, target in image.vectors.items():
        state.memory.raw_write(VECTORS[name], (target & 0xFFFF).to_bytes(2, "little"))
    state.pc = image.entry
    state.sp = stack_top


def boot(image: FirmwareImage, **kw) -> MachineState:
    state = MachineState(Memory(), **kw)
    load(image, state)
    return state


def save_image(image: FirmwareImage, directory: Union[str, Path]) -> Path:
    """Write ``manifest.json`` plus one ``seg_XXXX.bin`` per segment."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    segs = []
    for base, payload in image.segments:
        name = "seg_%04X.bin" % base
        (d / name).write_bytes(payload)
        segs.append({"base": "0x%04X" % base, "file": name, "length": len(payload)})
    manifest = {
        "entry": "0x%04X" % image.entry,
        "ipe": None if image.ipe is None else {
            "start": "0x%04X" % image.ipe.start, "end": "0x%04X" % image.ipe.end,
            "enabled": image.ipe.enabled},
        "vectors": {k: "0x%04X" % v for k, v in sorted(image.vectors.items())},
        "symbols": {k: "0x%04X" % v for k, v in sorted(image.symbols.items())},
        "segments": segs,
        "byte_order": "little",
    }
    (d / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    return d / MANIFEST


def read_image(path: Union[str, Path]) -> FirmwareImage:
    """Read an image from a manifest file or the directory holding one."""
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST
    m = json.loads(p.read_text())
    segments = [(int(s["base"], 16), (p.parent / s["file"]).read_bytes()) for s in m["segments"]]
    ipe: Optional[IpeConfig] = None
    if m.get("ipe"):
        ipe = IpeConfig(int(m["ipe"]["start"], 16), int(m["ipe"]["end"], 16),
                        m["ipe"].get("enabled", True))
    return FirmwareImage(
        segments=segments,
        ipe=ipe,
        symbols={k: int(v, 16) for k, v in m.get("symbols", {}).items()},
        entry=int(m["entry"], 16),
        vectors={k: int(v, 16) for k, v in m.get("vectors", {}).items()},
    )


def dump_image(state: MachineState, like: FirmwareImage) -> FirmwareImage:
    """Re-serialise a loaded machine using the segment layout of ``like``."""
    data = state.memory.data
    segments = [(b, bytes(data[b:b + len(p)])) for b, p in like.segments]
    vectors = {k: data[VECTORS[k]] | (data[VECTORS[k] + 1] << 8) for k in like.vectors}
    return FirmwareImage(segments, state.memory.ipe, dict(like.symbols), like.entry, vectors)


FIXTURE_DIR = Path(__file__).parent / "fixtures"


def fixture_source(name: str) -> str:
    return (FIXTURE_DIR / (name + ".s")).read_text()


def fixture(name: str) -> FirmwareImage:
    """Assemble one of the shipped fixtures (``loop``, ``matrix``, ``aes``, ``dint``)."""
    return assemble(fixture_source(name))


FIXTURES = ("loop", "matrix", "aes", "dint")
