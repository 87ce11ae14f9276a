import struct

import numpy as np
import pytest

from hgnp import checkpoint
from hgnp.checkpoint import CheckpointError, from_bytes, to_bytes
from hgnp.network import compact, conv2d, dense, flatten, forward, init_network, relu

from conftest import random_masks, random_mlp, residual_conv_net


def nets():
    rng = np.random.default_rng(2)
    yield random_masks(random_mlp(rng), rng)
    yield residual_conv_net(4)
    specs = [conv2d(1, 3, (3, 3), "valid", True, group="a"), relu(), flatten(), dense(3, 2)]
    yield init_network(specs, 1, (1, 4, 4))
    net = random_masks(init_network([dense(5, 6), relu(), dense(6, 4), relu(), dense(4, 2)], 0), rng)
    yield compact(net)


@pytest.mark.parametrize("net", list(nets()))
def test_roundtrip_is_byte_identical(net, tmp_path):
    blob = to_bytes(net)
    back = from_bytes(blob)
    assert to_bytes(back) == blob
    assert back.layers == net.layers
    assert back.original_param_count == net.original_param_count
    assert np.array_equal(back.mask_b, net.mask_b)
    assert back.flat_params().tobytes() == net.flat_params().tobytes()
    path = tmp_path / "n.hgnp"
    checkpoint.save(net, path)
    checkpoint.save(checkpoint.load(path), tmp_path / "m.hgnp")
    assert path.read_bytes() == (tmp_path / "m.hgnp").read_bytes()


def test_loaded_network_computes_same_logits():
    net = residual_conv_net(5)
    x = np.random.default_rng(0).normal(size=(3, 1, 4, 4))
    assert np.array_equal(forward(net, x)[0], forward(from_bytes(to_bytes(net)), x)[0])


def test_header_layout():
    net = init_network([dense(2, 3), relu(), dense(3, 2)], 0)
    blob = to_bytes(net)
    assert blob[:4] == b"HGNP"
    assert struct.unpack_from("<H", blob, 4) == (1,)
    assert blob[-8 * net.param_count :] == net.flat_params().astype("<f8").tobytes()


def test_bad_magic():
    blob = bytearray(to_bytes(init_network([dense(2, 2)], 0)))
    blob[:4] = b"XXXX"
    with pytest.raises(CheckpointError, match="magic"):
        from_bytes(bytes(blob))


def test_version_mismatch():
    blob = bytearray(to_bytes(init_network([dense(2, 2)], 0)))
    blob[4:6] = struct.pack("<H", 9)
    with pytest.raises(CheckpointError, match="version 9"):
        from_bytes(bytes(blob))


@pytest.mark.parametrize("cut", [0, 3, 5, 20, -1])
def test_truncation_reports_offset(cut):
    blob = to_bytes(init_network([dense(2, 3), relu(), dense(3, 2)], 0))
    with pytest.raises(CheckpointError, match=r"offset \d+"):
        from_bytes(blob[:cut])


def test_trailing_bytes():
    blob = to_bytes(init_network([dense(2, 2)], 0)) + b"\x00"
    with pytest.raises(CheckpointError, match="trailing"):
        from_bytes(blob)


def test_corrupt_layer_code():
    blob = bytearray(to_bytes(init_network([dense(2, 2)], 0)))
    # magic + version + ndim + one u32 dim + u64 + u16 layer count
    blob[4 + 2 + 1 + 4 + 8 + 2] = 77
    with pytest.raises(CheckpointError, match="layer code 77"):
        from_bytes(bytes(blob))
