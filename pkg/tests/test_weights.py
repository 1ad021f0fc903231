import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convrec.weights import (
    BadMagicError,
    TruncatedFileError,
    UnsupportedVersionError,
    WeightsFile,
    WeightsFormatError,
    deserialize_weights,
    serialize_weights,
)

# Hand-assembled single-tensor file: name "b", shape [2], data [0.0, 1.0].
GOLDEN = bytes(
    [0x52, 0x57, 0x5A, 0x57]  # magic "RWZW"
    + [0x01, 0x00, 0x00, 0x00]  # version 1
    + [0x01, 0x00, 0x00, 0x00]  # tensor count 1
    + [0x01, 0x00, 0x00, 0x00]  # name length 1
    + [0x62]  # "b"
    + [0x00]  # dtype f32
    + [0x01]  # rank 1
    + [0x02, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00]  # dim 2
    + [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x80, 0x3F]  # 0.0, 1.0
)


class TestGoldenBytes:
    def test_serialize_matches_golden(self):
        w = WeightsFile({"b": np.array([0.0, 1.0], dtype=np.float32)})
        assert serialize_weights(w) == GOLDEN

    def test_deserialize_golden(self):
        w = deserialize_weights(GOLDEN)
        assert list(w.tensors) == ["b"]
        arr = w.tensors["b"]
        assert arr.shape == (2,)
        assert arr.dtype == np.float32
        assert arr.tolist() == [0.0, 1.0]

    def test_golden_round_trip_bytes(self):
        assert serialize_weights(deserialize_weights(GOLDEN)) == GOLDEN


class TestFormat:
    def test_empty_tensor_list(self):
        data = serialize_weights(WeightsFile({}))
        assert data == b"RWZW" + struct.pack("<II", 1, 0)
        assert deserialize_weights(data) == WeightsFile({})

    def test_truncated_data_section(self):
        with pytest.raises(TruncatedFileError):
            deserialize_weights(GOLDEN[:-3])

    def test_truncated_header(self):
        with pytest.raises(TruncatedFileError):
            deserialize_weights(b"RWZW\x01\x00")

    def test_bad_magic(self):
        with pytest.raises(BadMagicError):
            deserialize_weights(b"NOPE" + GOLDEN[4:])

    def test_unsupported_version(self):
        with pytest.raises(UnsupportedVersionError):
            deserialize_weights(b"RWZW" + struct.pack("<II", 2, 0))

    def test_unsupported_dtype(self):
        mutated = bytearray(GOLDEN)
        mutated[17] = 0x07  # dtype byte (after 4+4+4 header and 4+1 name)
        with pytest.raises(WeightsFormatError):
            deserialize_weights(bytes(mutated))

    def test_duplicate_names_rejected(self):
        single = GOLDEN[12:]  # one tensor record
        doubled = b"RWZW" + struct.pack("<II", 1, 2) + single + single
        with pytest.raises(WeightsFormatError):
            deserialize_weights(doubled)

    def test_scalar_and_matrix(self):
        w = WeightsFile(
            {
                "scalar": np.float32(2.5),
                "mat": np.arange(6, dtype=np.float32).reshape(2, 3),
            }
        )
        back = deserialize_weights(serialize_weights(w))
        assert back.tensors["scalar"].shape == ()
        assert back.tensors["mat"].shape == (2, 3)
        assert back == w

    def test_non_f32_input_coerced(self):
        w = WeightsFile({"x": np.array([1, 2, 3], dtype=np.int64)})
        assert w.tensors["x"].dtype == np.float32


@st.composite
def weight_files(draw):
    n = draw(st.integers(0, 4))
    tensors = {}
    for i in range(n):
        name = draw(st.text(min_size=1, max_size=8))
        if name in tensors:
            continue
        shape = tuple(draw(st.lists(st.integers(0, 4), max_size=3)))
        size = int(np.prod(shape)) if shape else 1
        values = draw(
            st.lists(
                st.floats(-1e6, 1e6, allow_nan=False, width=32),
                min_size=size,
                max_size=size,
            )
        )
        tensors[name] = np.array(values, dtype=np.float32).reshape(shape)
    return WeightsFile(tensors)


class TestRoundTrip:
    @given(weight_files())
    @settings(max_examples=150)
    def test_round_trip(self, w):
        data = serialize_weights(w)
        back = deserialize_weights(data)
        assert back == w
        assert serialize_weights(back) == data
