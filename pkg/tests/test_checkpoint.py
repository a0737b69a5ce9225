import struct

import numpy as np
import pytest

from mepsnet.checkpoint import MAGIC, load_model, load_tensors, save_model, save_tensors, serialized_value_count
from mepsnet.model import DESK_DEFAULT, DESK_TINY, MepsNet, MepsNetConfig, count_parameters, init_parameters
from mepsnet.rng import Rng
from mepsnet.tensor import Tensor


@pytest.mark.parametrize("config", [DESK_TINY, DESK_DEFAULT, MepsNetConfig(n_experts=2, shared=False, expert_width=8)])
def test_round_trip_bit_identical(config, tmp_path):
    m = MepsNet(config)
    init_parameters(m, Rng(1))
    save_model(tmp_path / "m.meps", m, note="x")
    loaded, meta = load_model(tmp_path / "m.meps")
    assert meta["note"] == "x" and loaded.config == config
    assert list(loaded.params) == list(m.params)
    for k, v in m.state_dict().items():
        assert loaded.state_dict()[k].tobytes() == v.tobytes()
    x = Tensor(Rng(2).random(3 * 100).reshape(1, 3, 10, 10))
    assert np.array_equal(loaded(x).data, m(x).data)


@pytest.mark.parametrize("config", [DESK_TINY, DESK_DEFAULT])
def test_census_equals_serialized_values(config, tmp_path):
    m = MepsNet(config)
    save_model(tmp_path / "m.meps", m)
    assert serialized_value_count(tmp_path / "m.meps") == count_parameters(m)["total"]


def test_header_layout(tmp_path):
    save_tensors(tmp_path / "t.meps", {"ab": np.arange(6, dtype=np.float32).reshape(2, 3)}, {"k": 1})
    buf = (tmp_path / "t.meps").read_bytes()
    assert buf[:4] == MAGIC
    version, jlen = struct.unpack_from("<II", buf, 4)
    assert version == 1 and buf[12:12 + jlen] == b'{"k": 1}'
    off = 12 + jlen
    assert struct.unpack_from("<I", buf, off) == (1,)
    assert struct.unpack_from("<H", buf, off + 4) == (2,) and buf[off + 6:off + 8] == b"ab"
    assert struct.unpack_from("<BII", buf, off + 8) == (2, 2, 3)
    assert np.array_equal(np.frombuffer(buf[off + 17:], "<f4"), np.arange(6))


def test_rejects_foreign_files(tmp_path):
    (tmp_path / "bad").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ValueError, match="not a MEPS"):
        load_tensors(tmp_path / "bad")
    (tmp_path / "v9").write_bytes(MAGIC + struct.pack("<II", 9, 0))
    with pytest.raises(ValueError, match="version"):
        load_tensors(tmp_path / "v9")


def test_no_temp_file_left(tmp_path):
    save_tensors(tmp_path / "a.meps", {}, {})
    assert [p.name for p in tmp_path.iterdir()] == ["a.meps"]


def test_load_state_dict_shape_check():
    m = MepsNet(DESK_TINY)
    sd = m.state_dict()
    sd["bank.templates"] = np.zeros((1, 1))
    with pytest.raises(ValueError):
        m.load_state_dict(sd)
