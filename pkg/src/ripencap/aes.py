"""AES-128 key schedule: forward expansion, round inversion and recovery of
the master key from bytes observed while protected code runs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .analysis import Confidence, ReconstructionReport
from .attack import RECORD_SIZE, TraceDB
from .isa import Mode, Width
from .peripherals import estimate_transfer_seconds

ROUNDS = 10
SCHEDULE_BYTES = 16 * (ROUNDS + 1)


def _gmul(a: int, b: int) -> int:
    p = 0
    while b:
        if b & 1:
            p ^= a
        a = ((a << 1) ^ 0x1B) & 0xFF if a & 0x80 else a << 1
        b >>= 1
    return p


def _build_sbox() -> tuple:
    # 3 generates the multiplicative group, so inverses come from log tables
    exp, log = [0] * 255, [0] * 256
    x = 1
    for i in range(255):
        exp[i], log[x] = x, i
        x = _gmul(x, 3)
    inv = [0] + [exp[(255 - log[a]) % 255] for a in range(1, 256)]
    box = []
    for x in inv:
        y = x
        for k in range(1, 5):
            y ^= ((x << k) | (x >> (8 - k))) & 0xFF
        box.append(y ^ 0x63)
    return tuple(box)


SBOX = _build_sbox()


def _build_rcon() -> tuple:
    out, r = [0], 1
    for _ in range(ROUNDS):
        out.append(r)
        r = _gmul(r, 2)
    return tuple(out)


# 1-based: RCON[j] is used when producing round j
RCON = _build_rcon()


def sub_word(w: int) -> int:
    return int.from_bytes(bytes(SBOX[b] for b in w.to_bytes(4, "big")), "big")


def rot_word(w: int) -> int:
    return ((w << 8) | (w >> 24)) & 0xFFFFFFFF


def _g(w: int, j: int) -> int:
    return sub_word(rot_word(w)) ^ (RCON[j] << 24)


def expand_key(key: bytes) -> list:
    """The 44 schedule words, first byte of each word most significant."""
    if len(key) != 16:
        raise ValueError("AES-128 keys are 16 bytes")
    w = [int.from_bytes(key[i:i + 4], "big") for i in range(0, 16, 4)]
    for i in range(4, 4 * (ROUNDS + 1)):
        t = w[i - 1]
        if i % 4 == 0:
            t = _g(t, i // 4)
        w.append(w[i - 4] ^ t)
    return w


def schedule_bytes(key: bytes) -> bytes:
    return b"".join(x.to_bytes(4, "big") for x in expand_key(key))


def round_words(key: bytes, j: int) -> list:
    return expand_key(key)[4 * j:4 * j + 4]


def invert_round(words: Sequence[int], j: int) -> list:
    """Words of round ``j - 1`` from the four words of round ``j``."""
    if len(words) != 4 or not 1 <= j <= ROUNDS:
        raise ValueError("need four words of a round in 1..%d" % ROUNDS)
    cur = list(words)
    prev = [0, 0, 0, 0]
    for k in (3, 2, 1):
        prev[k] = cur[k] ^ cur[k - 1]
    prev[0] = cur[0] ^ _g(prev[3], j)
    return prev


class IntegrityError(ValueError):
    """Observed key material contradicts itself."""


@dataclass(frozen=True)
class RoundKeyObservation:
    round_index: int
    words: tuple
    tail: Optional[bytes] = None        # last four bytes of the master key, when seen

    def __post_init__(self):
        if len(self.words) != 4 or not 1 <= self.round_index <= ROUNDS:
            raise ValueError("a round-key observation holds four words of round 1..%d" % ROUNDS)


def recover_master_key(obs: RoundKeyObservation, known: Optional[dict] = None) -> bytes:
    """Invert down to round 0. ``known`` maps schedule byte offsets to
    further observed bytes; every one of them, and the tail, must agree
    with the forward expansion of the result."""
    words = list(obs.words)
    for j in range(obs.round_index, 0, -1):
        words = invert_round(words, j)
    key = b"".join(x.to_bytes(4, "big") for x in words)
    if obs.tail is not None and key[12:] != bytes(obs.tail):
        raise IntegrityError("tail bytes disagree with the inverted schedule")
    if round_words(key, obs.round_index) != list(obs.words):
        raise IntegrityError("forward expansion does not reproduce the observation")
    if known:
        sched = schedule_bytes(key)
        bad = [o for o, b in known.items() if not 0 <= o < SCHEDULE_BYTES or sched[o] != b]
        if bad:
            raise IntegrityError("schedule disagrees at offsets %s" % bad[:4])
    return key


# ---------------------------------------------------------------------------
# finding key material in a trace

@dataclass(frozen=True)
class LeakSite:
    dump: int
    register: int
    offsets: tuple          # secret byte offsets, in register order
    width: int              # bytes matched
    order: str              # "le": low byte first, as a word load leaves it; "be" otherwise


def scan_leaks(trace: TraceDB, secret: bytes) -> list:
    """Registers holding two or more consecutive secret bytes.

    A word register matches when its two bytes are adjacent secret bytes in
    either order. Registers holding single bytes match as a run across
    consecutive registers, the way byte loads into r8, r9, ... leave them.
    """
    pairs = {}
    for i in range(len(secret) - 1):
        pairs.setdefault((secret[i], secret[i + 1]), []).append(i)
    starts = {}
    for i, b in enumerate(secret):
        starts.setdefault(b, []).append(i)
    out = []
    for d, dump in enumerate(trace.dumps):
        regs = dump.regs
        for r in range(4, 16):
            v = regs[r] & 0xFFFF
            lo, hi = v & 0xFF, v >> 8
            for i in pairs.get((lo, hi), ()):
                out.append(LeakSite(d, r, (i, i + 1), 2, "le"))
            for i in pairs.get((hi, lo), ()):
                out.append(LeakSite(d, r, (i, i + 1), 2, "be"))
        for r in range(4, 15):
            if regs[r] > 0xFF:
                continue
            for i in starts.get(regs[r], ()):
                for step, order in ((1, "le"), (-1, "be")):
                    n = 1
                    while (r + n < 16 and regs[r + n] <= 0xFF and 0 <= i + step * n < len(secret)
                           and regs[r + n] == secret[i + step * n]):
                        n += 1
                    if n >= 2:
                        out.append(LeakSite(d, r, tuple(i + step * k for k in range(n)), n, order))
    return out


def load_sightings(report: ReconstructionReport) -> dict:
    """``{address: (byte, dump, site)}`` for every byte a decoded ``MOV`` load
    pulled into a register; the earliest dump wins."""
    seen: dict = {}
    for ins in report.instructions:
        f = ins.form
        if ins.confidence is not Confidence.DECODED or f is None or f.mnemonic != "MOV":
            continue
        if f.src.mode not in (Mode.INDIRECT, Mode.AUTOINC, Mode.INDEXED) or f.dst.mode is not Mode.REG:
            continue
        if f.width not in (Width.BYTE, Width.WORD):
            continue
        off = f.src.value if f.src.mode is Mode.INDEXED else 0
        for rec in report.records:
            if rec.addr != ins.addr:
                continue
            ea = (rec.pre[f.src.reg] + off) & 0xFFFF
            if f.width is Width.WORD:
                ea &= 0xFFFE
            val = rec.post[f.dst.reg] & f.width.mask
            for k, b in enumerate(val.to_bytes(f.width.nbytes, "little")):
                a = (ea + k) & 0xFFFF
                if a not in seen or seen[a][1] > rec.dump:
                    seen[a] = (b, rec.dump, ins.addr)
    return seen


@dataclass(frozen=True)
class KeyRecovery:
    key: bytes
    observation: RoundKeyObservation
    tail_addr: int          # where the master key's last word was seen
    dumps_needed: int       # dumps until the tail and the round words were all out
    sites: tuple = ()       # load instructions that exposed those bytes


def _runs(addrs: Iterable[int]) -> list:
    runs, cur = [], []
    for a in sorted(addrs):
        if cur and a != cur[-1] + 1:
            runs.append(cur)
            cur = []
        cur.append(a)
    if cur:
        runs.append(cur)
    return runs


def key_from_sightings(seen: dict) -> KeyRecovery:
    """Find a run of loaded bytes that is the tail of the master key followed
    by a round key, and invert it. Each candidate must agree with every other
    byte of its run under forward expansion."""
    for run in _runs(seen):
        if len(run) < 20:
            continue
        for s in run[:len(run) - 19]:
            for j in range(1, ROUNDS + 1):
                base = s - (16 * j - 4)          # schedule offset 0
                tail = bytes(seen[s + k][0] for k in range(4))
                words = tuple(int.from_bytes(bytes(seen[s + 4 + 4 * q + k][0] for k in range(4)), "big")
                              for q in range(4))
                known = {a - base: seen[a][0] for a in run if 0 <= a - base < SCHEDULE_BYTES}
                obs = RoundKeyObservation(j, words, tail if j == 1 else None)
                try:
                    key = recover_master_key(obs, known)
                except IntegrityError:
                    continue
                need = max(seen[s + k][1] for k in range(20)) + 1
                sites = tuple(sorted({seen[s + k][2] for k in range(20)}))
                return KeyRecovery(key, obs, s, need, sites)
    raise IntegrityError("no consistent round key among the loaded bytes")


def round_key_seconds(recovery: KeyRecovery, baud: float = 115200) -> float:
    """UART time to ship the dumps that expose one round key and the tail."""
    return estimate_transfer_seconds(recovery.dumps_needed * RECORD_SIZE, baud)
