import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from torusbp.configio import (ConfigCoordinateError, ConfigFormatError, ConfigHexError, ConfigLengthError, canonical,
                              decode_config, dump_config, encode_bits, encode_config, load_config)
from torusbp.lattice import Configuration, TorusShape


@st.composite
def configs(draw):
    s = TorusShape(draw(st.integers(1, 3)), draw(st.integers(2, 6)))
    p = draw(st.sampled_from([0.0, 0.02, 0.3, 1.0]))
    seed = draw(st.integers(0, 2**32 - 1))
    return Configuration.from_flat(s, np.random.default_rng(seed).random(s.n_nodes) < p)


@given(configs(), st.sampled_from([None, "sparse", "dense"]))
def test_roundtrip(c, form):
    f = encode_config(c, form)
    assert decode_config(json.loads(json.dumps(f))) == c
    assert canonical(f) == encode_config(c)


def test_dense_all_black_t2_2():
    assert encode_config(Configuration.black(TorusShape(2, 2))) == {"L": 2, "d": 2, "bits": "f"}


def test_hex_layout():
    s = TorusShape(1, 9)
    c = Configuration.from_coords(s, [(0,), (8,)])
    assert encode_bits(c) == "101"
    assert decode_config({"L": 9, "d": 1, "bits": "101"}) == c


def test_sparse_diagonal_pair():
    c = decode_config({"L": 4, "d": 2, "black": [[1, 1], [0, 0]]})
    assert c.black_coords() == [(0, 0), (1, 1)]
    assert encode_config(c, "sparse")["black"] == [[0, 0], [1, 1]]


def test_automatic_form():
    s = TorusShape(2, 10)
    assert "black" in encode_config(Configuration.from_coords(s, [(1, 1)] + [(0, k) for k in range(3)]))
    assert "bits" in encode_config(Configuration.from_coords(s, [(0, k) for k in range(5)]))


def test_distinct_errors():
    with pytest.raises(ConfigLengthError):
        decode_config({"L": 4, "d": 2, "bits": "fff"})
    with pytest.raises(ConfigLengthError):
        decode_config({"L": 3, "d": 1, "bits": "f"})
    with pytest.raises(ConfigHexError):
        decode_config({"L": 2, "d": 2, "bits": "g"})
    with pytest.raises(ConfigHexError):
        decode_config({"L": 2, "d": 2, "bits": "F"})
    with pytest.raises(ConfigCoordinateError):
        decode_config({"L": 4, "d": 2, "black": [[0, 4]]})
    with pytest.raises(ConfigCoordinateError):
        decode_config({"L": 4, "d": 2, "black": [[0, 1, 2]]})
    with pytest.raises(ConfigFormatError):
        decode_config({"L": 4, "d": 2})
    with pytest.raises(ConfigFormatError):
        decode_config({"L": "4", "d": 2, "black": []})
    with pytest.raises(ConfigFormatError):
        decode_config({"L": 4, "d": 2, "black": [], "bits": "0000"})


def test_load_and_dump(tmp_path):
    c = Configuration.from_coords(TorusShape(2, 4), [(0, 0), (1, 1)])
    path = tmp_path / "diag.json"
    dump_config(c, path, "sparse")
    assert load_config(str(path)) == c
    assert load_config('{"L":4,"d":2,"black":[[0,0],[1,1]]}') == c
    with pytest.raises(ConfigFormatError):
        load_config("{not json")
