import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hybridens.fieldio import FORMAT_VERSION, FieldFile, FieldFormatError, read_field, write_field


def _roundtrip(tmp_path, ff):
    path = tmp_path / "f.field"
    write_field(path, ff)
    return read_field(path), path


class TestRoundTrip:
    def test_zeros(self, tmp_path):
        ff = FieldFile(np.zeros((3, 1, 4, 8)), ["t"], 501)
        back, _ = _roundtrip(tmp_path, ff)
        assert back.values.tobytes() == ff.values.tobytes()
        assert back.variables == ("t",) and back.time_start == 501

    def test_payload_size(self, tmp_path):
        _, path = _roundtrip(tmp_path, FieldFile(np.ones((2, 3, 4, 8)), ["a", "b", "c"]))
        raw = path.read_bytes()
        assert raw.startswith(f"HYBRIDENS-FIELD {FORMAT_VERSION}\n".encode())
        assert len(raw) - (raw.index(b"\nend\n") + 5) == 2 * 3 * 4 * 8 * 8

    def test_single_slice_promoted(self):
        assert FieldFile(np.zeros((1, 2, 3)), ["x"]).shape == (1, 1, 2, 3)

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 2), st.integers(1, 4), st.integers(1, 5)),
                  elements=st.floats(allow_nan=True, allow_infinity=True)))
    def test_bit_identical(self, tmp_path_factory, values):
        names = [f"v{k}" for k in range(values.shape[1])]
        back, _ = _roundtrip(tmp_path_factory.mktemp("rt"), FieldFile(values, names))
        assert back.values.tobytes() == values.astype("<f8").tobytes()


class TestCorruption:
    def _file(self, tmp_path):
        _, path = _roundtrip(tmp_path, FieldFile(np.arange(64.0).reshape(2, 1, 4, 8), ["t"]))
        return path

    def test_truncated(self, tmp_path):
        path = self._file(tmp_path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FieldFormatError, match="truncated payload, expected 512 bytes, found 504"):
            read_field(path)

    def test_trailing(self, tmp_path):
        path = self._file(tmp_path)
        path.write_bytes(path.read_bytes() + b"\0" * 3)
        with pytest.raises(FieldFormatError, match="3 unexpected trailing bytes"):
            read_field(path)

    def test_version(self, tmp_path):
        path = self._file(tmp_path)
        path.write_bytes(path.read_bytes().replace(b"HYBRIDENS-FIELD 1", b"HYBRIDENS-FIELD 9", 1))
        with pytest.raises(FieldFormatError, match="version"):
            read_field(path)

    def test_not_a_field_file(self, tmp_path):
        path = tmp_path / "junk"
        path.write_bytes(b"\x00" * 100)
        with pytest.raises(FieldFormatError, match="missing header"):
            read_field(path)

    def test_missing_header_key(self, tmp_path):
        path = self._file(tmp_path)
        path.write_bytes(path.read_bytes().replace(b"n_lon 8\n", b"", 1))
        with pytest.raises(FieldFormatError, match="n_lon"):
            read_field(path)


class TestValidation:
    def test_name_count(self):
        with pytest.raises(ValueError):
            FieldFile(np.zeros((1, 2, 4, 8)), ["a"])

    def test_name_whitespace(self):
        with pytest.raises(ValueError):
            FieldFile(np.zeros((1, 1, 4, 8)), ["a b"])
