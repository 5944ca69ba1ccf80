import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from spacetime_set import checkpoint


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"a.W": rng.standard_normal((3, 4)), "scalar": np.array(2.5), "empty": np.zeros((0, 3))}
    path = tmp_path / "c.sett"
    checkpoint.save(path, arrays, {"epoch": 3})
    back, meta = checkpoint.load(path)
    assert meta == {"epoch": 3}
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].shape == arrays[k].shape
        assert back[k].tobytes() == arrays[k].tobytes()


def test_no_meta():
    back, meta = checkpoint.loads(checkpoint.dumps({"x": np.ones(2)}))
    assert meta is None and back["x"].tolist() == [1.0, 1.0]


def test_bad_magic():
    data = bytearray(checkpoint.dumps({"x": np.ones(2)}))
    data[:4] = b"NOPE"
    with pytest.raises(checkpoint.FormatError, match="magic"):
        checkpoint.loads(bytes(data))


def test_bad_version():
    data = bytearray(checkpoint.dumps({"x": np.ones(2)}))
    data[4] = 99
    with pytest.raises(checkpoint.FormatError, match="version"):
        checkpoint.loads(bytes(data))


def test_truncated():
    data = checkpoint.dumps({"x": np.ones(20)}, {"k": 1})
    for cut in (3, 10, 40, len(data) - 1):
        with pytest.raises(checkpoint.FormatError):
            checkpoint.loads(data[:cut])


@settings(max_examples=30, deadline=None)
@given(arr=hnp.arrays(np.float64, hnp.array_shapes(min_dims=0, max_dims=3, max_side=4), elements=st.floats(allow_nan=False)))
def test_round_trip_property(arr):
    back, _ = checkpoint.loads(checkpoint.dumps({"a": arr}))
    assert back["a"].shape == arr.shape
    assert back["a"].tobytes() == np.ascontiguousarray(arr).tobytes()
