from __future__ import annotations

import hashlib

import pytest
from hypothesis import given
from hypothesis import strategies as st

from d2dsec.crypto import BLOCK, Crypto, KeyKind, OpCounters, SymKey, constant_time_eq
from d2dsec.errors import MalformedCiphertext, OversizedPlaintext

keys = st.binary(min_size=32, max_size=32).map(SymKey)


def sha(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def test_mac_is_prefix_key_sha256():
    k = SymKey(bytes(range(32)))
    assert Crypto().mac(k, b"abc") == sha(bytes(range(32)) + b"abc")


def test_kdf_matches_one_byte_nonce_encoding():
    k = SymKey(b"\x11" * 32)
    derived = Crypto().derive_session_key(k, 7)
    assert derived.bytes == sha(b"\x11" * 32 + b"\x07")
    assert derived.kind is KeyKind.DERIVED


def test_kdf_all_sixteen_nonces_give_distinct_keys():
    k = SymKey(b"\x42" * 32)
    derived = {Crypto().derive_session_key(k, n).bytes for n in range(16)}
    assert len(derived) == 16


@pytest.mark.parametrize("n", [-1, 16, 255])
def test_kdf_rejects_nonce_outside_four_bits(n):
    with pytest.raises(ValueError):
        Crypto().derive_session_key(SymKey(bytes(32)), n)


def test_kdf_refuses_tesla_and_derived_keys():
    with pytest.raises(ValueError):
        Crypto().derive_session_key(SymKey(bytes(32), KeyKind.TESLA), 0)


@given(keys, st.binary(max_size=32))
def test_encrypt_decrypt_returns_zero_padded_block(key, message):
    c = Crypto()
    ciphertext = c.encrypt(key, message)
    assert len(ciphertext) == BLOCK
    assert c.decrypt(key, ciphertext) == message.ljust(BLOCK, b"\0")


@given(keys, keys, st.binary(min_size=32, max_size=32))
def test_wrong_key_does_not_decrypt(k1, k2, message):
    if k1 == k2:
        return
    c = Crypto()
    assert c.decrypt(k2, c.encrypt(k1, message)) != message


def test_encrypt_rejects_33_bytes():
    with pytest.raises(OversizedPlaintext):
        Crypto().encrypt(SymKey(bytes(32)), bytes(33))


@pytest.mark.parametrize("size", [0, 31, 33])
def test_decrypt_rejects_non_block_ciphertext(size):
    with pytest.raises(MalformedCiphertext):
        Crypto().decrypt(SymKey(bytes(32)), bytes(size))


def test_symkey_requires_32_bytes():
    with pytest.raises(ValueError):
        SymKey(bytes(31))


def test_counters_tally_by_category_and_tag():
    c = Crypto()
    k = SymKey(bytes(32))
    c.hash(b"x", tag="a.one")
    c.mac(k, b"x", tag="a.two")
    c.derive_session_key(k, 1, tag="b.kdf")
    c.decrypt(k, c.encrypt(k, b"m", tag="b.enc"), tag="b.dec")
    assert c.counters.as_dict() == {"Enc": 2, "Dec": 1, "H": 2}
    assert c.counters.scoped(("a.",)) == {"Enc": 2, "Dec": 1, "H": 0}
    c.counters.reset()
    assert c.counters.as_dict() == {"Enc": 0, "Dec": 0, "H": 0}


def test_separate_instances_do_not_share_counts():
    shared = OpCounters()
    a, b = Crypto(shared), Crypto()
    a.hash(b"")
    assert shared.hash == 1 and b.counters.hash == 0


def test_constant_time_eq():
    assert constant_time_eq(b"ab", b"ab")
    assert not constant_time_eq(b"ab", b"ac")
