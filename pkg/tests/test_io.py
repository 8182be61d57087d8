import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from diner.checkpoint import (CheckpointFormatError, decode_checkpoint, encode_checkpoint,
                              load_checkpoint, save_checkpoint)
from diner.exceptions import CheckpointVersionError
from diner.imageio import (ImageFormatError, encode_netpbm, encode_pfm, read_image, read_netpbm,
                           read_pfm, write_image)
from diner.network import BackboneSpec
from diner.training import SampleSet, TrainConfig, fit_signal


def test_p5_single_pixel(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n1 1\n255\n" + bytes([128]))
    assert read_netpbm(p) == 128 / 255


def test_p6_16bit_big_endian(tmp_path):
    p = tmp_path / "a.ppm"
    p.write_bytes(b"P6\n1 1\n65535\n" + struct.pack(">3H", 65535, 1, 256))
    img = read_image(p)
    assert img.shape == (1, 1, 3)
    assert np.array_equal(img[0, 0], np.array([65535, 1, 256]) / 65535)


def test_header_comments(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n# max\n255\n" + bytes([0, 255]))
    assert np.array_equal(read_image(p), [[0.0, 1.0]])


@pytest.mark.parametrize("payload", [b"P2\n1 1\n255\n1", b"P5\n2 2\n255\n\x00", b"P5\n1 1\n0\n\x00",
                                     b"Pf\n2 2\n-1.0\n\x00\x00"])
def test_bad_files(tmp_path, payload):
    p = tmp_path / "bad"
    p.write_bytes(payload)
    with pytest.raises(ImageFormatError):
        read_image(p)


@pytest.mark.parametrize("maxval", [255, 65535])
@pytest.mark.parametrize("shape", [(3, 5), (4, 2, 3)])
def test_netpbm_round_trip_is_quantization_exact(tmp_path, maxval, shape):
    img = np.random.default_rng(0).random(shape)
    p = tmp_path / ("x.pgm" if len(shape) == 2 else "x.ppm")
    write_image(p, img, maxval)
    q = np.rint(img * maxval) / maxval
    assert np.array_equal(read_image(p), q)


@given(hnp.arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_pfm_round_trip_bitwise(tmp_path_factory, img):
    p = tmp_path_factory.mktemp("pfm") / "x.pfm"
    write_image(p, img)
    assert read_pfm(p).tobytes() == img.tobytes()


def test_pfm_rgb_and_big_endian(tmp_path):
    img = np.arange(12, dtype=np.float32).reshape(2, 2, 3)
    p = tmp_path / "rgb.pfm"
    p.write_bytes(encode_pfm(img))
    assert np.array_equal(read_image(p), img)
    # the same image stored big-endian (positive scale), rows bottom-to-top
    big = tmp_path / "big.pfm"
    big.write_bytes(b"PF\n2 2\n1.0\n" + img[::-1].astype(">f4").tobytes())
    assert np.array_equal(read_image(big), img)


def test_pfm_layout_is_little_endian_bottom_up():
    raw = encode_pfm(np.array([[1.0], [2.0]], dtype=np.float32))
    assert raw.startswith(b"Pf\n1 2\n-1.0\n")
    assert raw.endswith(struct.pack("<2f", 2.0, 1.0))


def test_encode_rejects_odd_channels():
    with pytest.raises(ImageFormatError):
        encode_netpbm(np.zeros((2, 2, 2)))
    with pytest.raises(ImageFormatError):
        write_image("x.png", np.zeros((2, 2)))


# ------------------------------------------------------------ checkpoint

@pytest.fixture(scope="module")
def trained():
    data = SampleSet.from_grid(np.random.default_rng(0).random((4, 4, 3)))
    model, _ = fit_signal(data, BackboneSpec(2, 3, width=8, activation="sine"),
                          TrainConfig(epochs=5, lr_net=1e-4), table_init="uniform")
    return model


def test_checkpoint_round_trip_bitwise(tmp_path, trained):
    p = tmp_path / "m.dinr"
    save_checkpoint(p, trained, TrainConfig(epochs=5).to_dict(), extra=dict(shape=[4, 4]))
    model, meta = load_checkpoint(p)
    for a, b in zip(trained.backbone.parameters(), model.backbone.parameters()):
        assert a.tobytes() == b.tobytes()
    for name in ("entries", "m", "v", "steps"):
        assert getattr(trained.table, name).tobytes() == getattr(model.table, name).tobytes()
    for s, t in zip(trained.net_state, model.net_state):
        assert s.m.tobytes() == t.m.tobytes() and s.v.tobytes() == t.v.tobytes() and s.t == t.t
    assert model.epoch == 5 and meta["extra"]["shape"] == [4, 4]
    assert encode_checkpoint(model, meta["train_config"], meta["extra"]) == p.read_bytes()


def test_checkpoint_header(trained):
    buf = encode_checkpoint(trained)
    assert buf[:4] == b"DINR"
    assert struct.unpack_from("<I", buf, 4)[0] == 1


def test_checkpoint_version_rejected(trained):
    buf = bytearray(encode_checkpoint(trained))
    struct.pack_into("<I", buf, 4, 2)
    with pytest.raises(CheckpointVersionError):
        decode_checkpoint(bytes(buf))


@pytest.mark.parametrize("mangle", [lambda b: b"XXXX" + b[4:], lambda b: b[:-8], lambda b: b + b"\0"])
def test_checkpoint_corruption(trained, mangle):
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(mangle(encode_checkpoint(trained)))
