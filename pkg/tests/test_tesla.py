from __future__ import annotations

import hashlib

import pytest
from hypothesis import given
from hypothesis import strategies as st

from d2dsec.crypto import Crypto, SymKey
from d2dsec.errors import ChainExhausted, IntervalOutOfRange, InvalidLength
from d2dsec.tesla import (
    current_interval,
    disclosure_slot,
    generate_chain,
    key_for_interval,
    locate_disclosed_key,
    verify_disclosed_key,
)

SEED = b"\x5a" * 32


def hashlib_chain(seed: bytes, length: int) -> list[bytes]:
    keys = [seed]
    for _ in range(length):
        keys.append(hashlib.sha256(keys[-1]).digest())
    return keys[::-1]


def test_chain_matches_independent_fold():
    chain = generate_chain(Crypto(), 3, SEED, 10)
    assert [k.bytes for k in chain.keys] == hashlib_chain(SEED, 10)
    assert chain.commitment().key0 == chain.keys[0]
    assert chain.length == 10


def test_setup_hashes_are_tagged():
    c = Crypto()
    generate_chain(c, 1, SEED, 8)
    assert c.counters.scoped(("tesla.setup",))["H"] == 0
    assert c.counters.hash == 8


@pytest.mark.parametrize("length", [0, -3])
def test_invalid_length(length):
    with pytest.raises(InvalidLength):
        generate_chain(Crypto(), 1, SEED, length)


@pytest.mark.parametrize("length", range(1, 17))
def test_verify_accepts_exactly_chain_keys(length):
    c = Crypto()
    chain = generate_chain(c, 1, SEED, length)
    commitment = chain.commitment()
    for i in range(1, length + 1):
        for j in range(0, length + 2):
            expected = i == j
            assert verify_disclosed_key(c, commitment, chain.keys[i], j) is expected
    other = generate_chain(c, 2, b"\x01" * 32, length)
    for i in range(1, length + 1):
        assert not any(verify_disclosed_key(c, commitment, other.keys[i], j) for j in range(1, length + 1))


@given(st.binary(min_size=32, max_size=32))
def test_random_key_is_not_located(key):
    c = Crypto()
    commitment = generate_chain(c, 1, SEED, 8).commitment()
    if key in hashlib_chain(SEED, 8):
        return
    assert locate_disclosed_key(c, commitment, key) is None


def test_locate_finds_interval():
    c = Crypto()
    chain = generate_chain(c, 1, SEED, 12)
    for i in range(1, 13):
        assert locate_disclosed_key(c, chain.commitment(), chain.keys[i].bytes) == i


def test_key_for_interval_bounds():
    chain = generate_chain(Crypto(), 1, SEED, 4)
    assert key_for_interval(chain, 4) == chain.keys[4]
    for bad in (0, 5):
        with pytest.raises(IntervalOutOfRange):
            key_for_interval(chain, bad)


def test_disclosure_slot_and_current_interval():
    chain = generate_chain(Crypto(), 1, SEED, 5, interval_len=3, start_slot=2, delay=1)
    assert disclosure_slot(chain, 1) == 2 + 2 * 3
    assert current_interval(chain, 2) == 1
    assert current_interval(chain, 8) == 2
    with pytest.raises(ChainExhausted):
        current_interval(chain, 2 + 6 * 3)
    with pytest.raises(IntervalOutOfRange):
        current_interval(chain, 1)


@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 200))
def test_key_never_disclosable_during_its_own_interval(interval_len, delay, now):
    chain = generate_chain(Crypto(), 1, SEED, 64, interval_len=interval_len, delay=delay)
    try:
        i = current_interval(chain, now)
    except ChainExhausted:
        return
    assert disclosure_slot(chain, i) > now
