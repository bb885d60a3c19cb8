"""Tests for the weight archive and the run config file."""

import struct

import numpy as np
import pytest

from arcconv.core.errors import ConfigurationError, FormatError, MissingEntryError
from arcconv.core.network import build_smallnet
from arcconv.models.configs import DType, Stage, TrainConfig, TrainMode
from arcconv.services.persistence import (MAGIC, RunConfigFile, WeightArchive, kernel_entry, load_state_dict,
                                          save_state_dict)


def _entry(name: bytes, values=(1.0,)) -> bytes:
    """One binary64 rank-1 entry."""
    return (struct.pack("<I", len(name)) + name + struct.pack("<BB", 1, 1)
            + struct.pack("<I", len(values)) + np.asarray(values, dtype="<f8").tobytes())


class TestWeightArchive:
    """Test cases for WeightArchive encoding and decoding."""

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_round_trip_is_bitwise(self, rng, dtype):
        """Test that saved arrays load back bit for bit with their dtype."""
        arrays = {"a": rng.normal(size=(2, 3)).astype(dtype), "b.weight": rng.normal(size=(1, 2, 3, 3, 3)).astype(dtype),
                  "scalar": np.asarray(1.5, dtype=dtype)}
        loaded = WeightArchive.from_bytes(WeightArchive(arrays).to_bytes())
        assert list(loaded) == list(arrays)
        for name, array in arrays.items():
            assert loaded[name].dtype == dtype
            assert loaded[name].tobytes() == array.tobytes()

    def test_header_layout(self):
        """Test magic, version and entry count at the start of the file."""
        data = WeightArchive({"k": np.zeros((3, 3))}).to_bytes()
        assert data[:4] == MAGIC
        assert struct.unpack("<II", data[4:12]) == (1, 1)

    def test_model_state_round_trip(self, tmp_path):
        """Test that a model restored from disk has identical parameters."""
        config = TrainConfig(mode=TrainMode.ARC, n=2, stages=[Stage.B])
        model = build_smallnet(config=config)
        path = tmp_path / "model.arcw"
        save_state_dict(model.state_dict(), path)

        other = build_smallnet(config=config.model_copy(update={"seed": 1}))
        other.load_state_dict(load_state_dict(path))
        for (name, a), (_, b) in zip(model.named_parameters(), other.named_parameters()):
            assert a.data.tobytes() == b.data.tobytes(), name

    def test_bad_magic(self):
        """Test that a wrong magic is reported at offset 0."""
        with pytest.raises(FormatError) as exc:
            WeightArchive.from_bytes(b"NOPE" + struct.pack("<II", 1, 0))
        assert exc.value.offset == 0

    def test_bad_version(self):
        """Test that an unknown version is reported at offset 4."""
        with pytest.raises(FormatError) as exc:
            WeightArchive.from_bytes(MAGIC + struct.pack("<II", 2, 0))
        assert exc.value.offset == 4

    def test_truncated(self):
        """Test that a short file is a format error."""
        data = WeightArchive({"k": np.ones((3, 3))}).to_bytes()
        with pytest.raises(FormatError):
            WeightArchive.from_bytes(data[:-1])
        with pytest.raises(FormatError):
            WeightArchive.from_bytes(data[:6])

    def test_trailing_bytes(self):
        """Test that bytes after the last entry are rejected."""
        data = WeightArchive({"k": np.ones(2)}).to_bytes()
        with pytest.raises(FormatError) as exc:
            WeightArchive.from_bytes(data + b"\x00")
        assert exc.value.offset == len(data)

    def test_unknown_dtype_code(self):
        """Test that a dtype code other than 0 or 1 is rejected."""
        entry = bytearray(_entry(b"k"))
        entry[4 + 1] = 7
        with pytest.raises(FormatError) as exc:
            WeightArchive.from_bytes(MAGIC + struct.pack("<II", 1, 1) + bytes(entry))
        assert exc.value.offset == 12 + 4 + 1

    def test_duplicate_names(self):
        """Test that an entry name may appear only once."""
        data = MAGIC + struct.pack("<II", 1, 2) + _entry(b"k") + _entry(b"k", (2.0,))
        with pytest.raises(FormatError):
            WeightArchive.from_bytes(data)

    def test_missing_entry(self):
        """Test lookup of an absent name."""
        archive = WeightArchive({"a": np.ones(1)})
        with pytest.raises(MissingEntryError) as exc:
            archive["b"]
        assert "'b'" in str(exc.value)

    def test_rejects_integer_arrays(self):
        """Test that only binary32/binary64 arrays may be stored."""
        with pytest.raises(ValueError):
            WeightArchive({"a": np.arange(3)})

    def test_kernel_entry(self, kernel_1_to_9):
        """Test kernel selection by name or by uniqueness."""
        archive = WeightArchive({"bias": np.zeros(3), "kernel": kernel_1_to_9})
        assert kernel_entry(archive)[0] == "kernel"
        assert kernel_entry(archive, "bias")[0] == "bias"
        archive["other"] = np.zeros((5, 5))
        with pytest.raises(MissingEntryError):
            kernel_entry(archive)


class TestRunConfigFile:
    """Test cases for the key=value run config file."""

    def test_round_trip(self, tmp_path):
        """Test that a saved config loads back equal."""
        config = TrainConfig(mode=TrainMode.ARC, n=3, stages="B,C", lr=0.01, coeff_deg=45.0,
                             spatial_encoding=False, dtype=DType.BINARY64)
        path = tmp_path / "run.cfg"
        RunConfigFile.save(config, path)
        assert RunConfigFile.load(path) == config

    def test_serialized_form(self):
        """Test the textual form of lists and booleans."""
        text = RunConfigFile.serialize(TrainConfig(stages="A,C", adaptive_combination=False))
        assert "stages=A,C\n" in text
        assert "adaptive_combination=false\n" in text

    def test_unknown_key(self):
        """Test that unknown keys are rejected."""
        with pytest.raises(ConfigurationError):
            RunConfigFile.parse("epochs=2\nwarmup=3\n")

    def test_bad_value(self):
        """Test that an out-of-range value is rejected."""
        with pytest.raises(ConfigurationError):
            RunConfigFile.parse("epochs=0\n")

    def test_partial_file_uses_defaults(self):
        """Test that omitted keys take their defaults."""
        config = RunConfigFile.parse("n=2\nmode=static\n")
        assert config.n == 2
        assert config.mode is TrainMode.STATIC
        assert config.epochs == TrainConfig().epochs
