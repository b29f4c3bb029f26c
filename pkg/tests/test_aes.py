import pytest
from hypothesis import given, settings, strategies as st

from ripencap.aes import (
    RCON, SBOX, IntegrityError, RoundKeyObservation, expand_key, invert_round, key_from_sightings,
    load_sightings, recover_master_key, round_key_seconds, round_words, scan_leaks, schedule_bytes,
)
from ripencap.attack import RegisterDump, TraceDB

FIPS_KEY = bytes.fromhex("2b7e151628aed2a6abf7158809cf4f3c")
keys = st.binary(min_size=16, max_size=16)


def test_sbox_is_a_permutation_with_known_entries():
    assert sorted(SBOX) == list(range(256))
    assert (SBOX[0x00], SBOX[0x01], SBOX[0x53], SBOX[0xFF]) == (0x63, 0x7C, 0xED, 0x16)
    assert RCON[1:11] == (0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36)


def test_published_expansion():
    w = expand_key(FIPS_KEY)
    assert len(w) == 44
    assert w[4] == 0xA0FAFE17 and w[43] == 0xB6630CA6
    assert schedule_bytes(FIPS_KEY)[-16:].hex() == "d014f9a8c9ee2589e13f0cc8b6630ca6"


@settings(max_examples=1000)
@given(keys, st.integers(1, 10))
def test_inverting_one_round_undoes_expansion(key, j):
    assert invert_round(round_words(key, j), j) == round_words(key, j - 1)


@settings(max_examples=200)
@given(keys, st.integers(1, 10))
def test_any_round_key_yields_the_master(key, j):
    assert recover_master_key(RoundKeyObservation(j, tuple(round_words(key, j)))) == key


def test_zero_key():
    obs = RoundKeyObservation(10, tuple(round_words(bytes(16), 10)))
    assert recover_master_key(obs, {0: 0, 15: 0}) == bytes(16)


@pytest.mark.parametrize("word", [2, 3])
def test_tail_catches_a_corrupt_round_word(word):
    words = list(round_words(FIPS_KEY, 1))
    words[word] ^= 0x00010000
    with pytest.raises(IntegrityError):
        recover_master_key(RoundKeyObservation(1, tuple(words), FIPS_KEY[12:]))


@pytest.mark.parametrize("word, offset", [(0, 3), (1, 7)])
def test_known_bytes_catch_what_the_tail_cannot(word, offset):
    words = list(round_words(FIPS_KEY, 1))
    words[word] ^= 1
    # the first two words only move w0..w2, so the tail still matches
    bent = recover_master_key(RoundKeyObservation(1, tuple(words), FIPS_KEY[12:]))
    assert bent != FIPS_KEY
    with pytest.raises(IntegrityError):
        recover_master_key(RoundKeyObservation(1, tuple(words)), {offset: FIPS_KEY[offset]})


def test_bad_observation_shapes():
    with pytest.raises(ValueError):
        RoundKeyObservation(0, (0, 0, 0, 0))
    with pytest.raises(ValueError):
        invert_round([1, 2, 3], 1)


def _trace(*rows):
    db = TraceDB(initial=(0,) * 16)
    for i, regs in enumerate(rows):
        db.add(RegisterDump(i + 1, tuple(regs), 0))
    return db


def test_leak_scan_word_orders_and_byte_runs():
    s = bytes(range(0x10, 0x20))
    row = [0] * 16
    row[5] = 0x1312          # bytes 2,3 low first
    row[6] = 0x1415          # bytes 4,5 high first
    row[8], row[9], row[10] = 0x18, 0x19, 0x1A
    hits = scan_leaks(_trace(row), s)
    found = {(h.register, h.offsets, h.order) for h in hits}
    assert (5, (2, 3), "le") in found
    assert (6, (4, 5), "be") in found
    assert (8, (8, 9, 10), "le") in found
    assert not scan_leaks(_trace([0] * 16), bytes([0xAA] * 16))


def test_trace_key_recovery(reports, images):
    img = images("aes")
    key = img.read_bytes(img.symbols["key"], img.symbols["key"] + 16)
    rec = key_from_sightings(load_sightings(reports("aes")))
    assert rec.key == key
    assert rec.observation.tail == key[12:]
    assert round_key_seconds(rec) < 60
    assert rec.sites


def test_sightings_without_key_material():
    with pytest.raises(IntegrityError):
        key_from_sightings({a: (a & 0xFF, 0, 0) for a in range(0x4000, 0x4030)})
