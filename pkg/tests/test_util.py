import json
import os

import numpy as np
import pytest

from fslm._util import (
    atomic_write_bytes,
    read_json,
    rng_for,
    seed_sequence,
    sha256_bytes,
    sha256_file,
    write_json,
)


def test_rng_for_is_deterministic():
    a = rng_for(3, "stage", ("x", 1)).standard_normal(8)
    b = rng_for(3, "stage", ("x", 1)).standard_normal(8)
    np.testing.assert_array_equal(a, b)


def test_rng_for_distinct_keys_decorrelate():
    a = rng_for(0, "alpha").standard_normal(64)
    b = rng_for(0, "beta").standard_normal(64)
    assert not np.allclose(a, b)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.5


def test_rng_for_key_types():
    # ints, strings, tuples, and frozensets are all stable key material
    k1 = rng_for(1, frozenset({"b", "a"})).integers(0, 1 << 30)
    k2 = rng_for(1, frozenset({"a", "b"})).integers(0, 1 << 30)
    assert k1 == k2  # set ordering must not matter
    with pytest.raises(TypeError):
        rng_for(0.5)


def test_seed_sequence_string_int_distinct():
    # "1" (string) and 1 (int) must not collide
    a = seed_sequence(1).generate_state(4)
    b = seed_sequence("1").generate_state(4)
    assert not np.array_equal(a, b)


def test_sha256_matches_known_vector():
    # sha256("abc") is a published test vector (FIPS 180-2)
    assert (
        sha256_bytes(b"abc")
        == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    )


def test_sha256_file_matches_bytes(tmp_path):
    p = tmp_path / "blob.bin"
    data = bytes(range(256))
    p.write_bytes(data)
    assert sha256_file(p) == sha256_bytes(data)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    p = tmp_path / "out.bin"
    atomic_write_bytes(p, b"hello")
    assert p.read_bytes() == b"hello"
    assert os.listdir(tmp_path) == ["out.bin"]


def test_write_json_sorted_and_stable(tmp_path):
    p = tmp_path / "doc.json"
    write_json(p, {"b": 1, "a": [1.5, 2]})
    text = p.read_text()
    assert text.index('"a"') < text.index('"b"')
    assert read_json(p) == {"a": [1.5, 2], "b": 1}
    # rewriting the same document is byte-identical
    before = p.read_bytes()
    write_json(p, json.loads(text))
    assert p.read_bytes() == before
