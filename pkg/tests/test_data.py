import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import fit_softmax_regression
from siman import data as D
from siman.checkpoint import MAGIC, VERSION, decode_state, encode_state, load_checkpoint, save_checkpoint
from siman.errors import BadLabel, BadMagic, BadMagnitude, BadVersion, Corrupt, DatasetEmpty, InvalidArgs
from siman.train import ModelSpec, NetworkState, TrainConfig, sgd_step


def write_records(path, labels, fill=255):
    recs = [bytes([lab]) + bytes([fill]) * 3072 for lab in labels]
    path.write_bytes(b"".join(recs))
    return path


def test_cifar_single_record(tmp_path):
    ds = D.load_cifar10(write_records(tmp_path / "one.bin", [7]))
    assert len(ds) == 1
    s = ds[0]
    assert s.label == 7 and s.pixels.shape == (3, 32, 32) and np.all(s.pixels == 1.0)


def test_cifar_channel_major_layout(tmp_path):
    rec = bytes([3]) + bytes([0]) * 1024 + bytes([51]) * 1024 + bytes([255]) * 1024
    (tmp_path / "x.bin").write_bytes(rec)
    px = D.load_cifar10(tmp_path / "x.bin")[0].pixels
    assert np.all(px[0] == 0) and np.all(px[1] == 0.2) and np.all(px[2] == 1.0)


def test_cifar_errors(tmp_path):
    (tmp_path / "short.bin").write_bytes(bytes(3072))
    with pytest.raises(BadMagnitude):
        D.load_cifar10(tmp_path / "short.bin")
    with pytest.raises(BadLabel):
        D.load_cifar10(write_records(tmp_path / "lab.bin", [2, 10]))


def test_cifar_directory_layout(tmp_path):
    sub = tmp_path / "cifar-10-batches-bin"
    sub.mkdir()
    for i in range(1, 6):
        write_records(sub / f"data_batch_{i}.bin", [i, i + 1], fill=i)
    write_records(sub / "test_batch.bin", [0])
    train = D.load_cifar10(tmp_path, "train")
    assert train.labels.tolist() == [1, 2, 2, 3, 3, 4, 4, 5, 5, 6]
    assert len(D.load_cifar10(tmp_path, "test")) == 1
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(FileNotFoundError):
        D.load_cifar10(empty, "train")


def test_normalize_constants():
    img = np.broadcast_to(D.CIFAR_MEAN[:, None, None], (3, 32, 32))
    assert np.allclose(D.normalize_cifar(img), 0.0)


def test_synth_deterministic_and_shapes():
    a = D.synth_blobs(4, 48, 10, 10.0, 5, shape=(3, 4, 4))
    b = D.synth_blobs(4, 48, 10, 10.0, 5, shape=(3, 4, 4))
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    assert a.images.shape == (40, 3, 4, 4)
    assert not np.array_equal(a.images, D.synth_blobs(4, 48, 10, 10.0, 6, shape=(3, 4, 4)).images)
    assert len(D.synth_blobs(3, 10, 0, 10.0, 0)) == 0
    with pytest.raises(InvalidArgs):
        D.synth_blobs(1, 10, 5, 10.0, 0)
    with pytest.raises(InvalidArgs):
        D.synth_blobs(2, 10, 5, 0.0, 0)


def test_synth_center_separation():
    ds = D.synth_blobs(4, 64, 4000, 10.0, 1)
    centers = np.stack([ds.images[ds.labels == c].mean(axis=0) for c in range(4)])
    d = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
    off = d[~np.eye(4, dtype=bool)]
    assert np.allclose(off, 10.0, atol=0.3)


@pytest.mark.parametrize("classes,separation,target", [(2, 10.0, 0.999), (4, 10.0, 0.999), (4, 6.0, 0.99)])
def test_synth_linear_reference(classes, separation, target):
    ds = D.synth_blobs(classes, 192, 1000, separation, 0)
    tr, te = D.split(ds, 1000, 1)
    predict = fit_softmax_regression(tr.images, tr.labels, classes)
    assert np.mean(predict(te.images) == te.labels) >= target


def test_split_and_take_per_class():
    ds = D.synth_blobs(4, 8, 25, 10.0, 0)
    tr, te = D.split(ds, 20, 3)
    assert len(tr) == 80 and len(te) == 20
    both = np.concatenate([tr.images, te.images])
    assert sorted(map(tuple, both)) == sorted(map(tuple, ds.images))
    sub = D.take_per_class(ds, 40, 0)
    assert np.bincount(sub.labels).tolist() == [10] * 4


def test_crop_flip_identity_and_involution():
    img = np.random.default_rng(0).uniform(size=(3, 32, 32))
    assert np.array_equal(D.crop_flip(img, 4, 4, False), img)
    once = D.crop_flip(img, 4, 4, True)
    assert np.array_equal(once[:, :, ::-1], img)
    assert np.array_equal(D.crop_flip(once, 4, 4, True), img)
    shifted = D.crop_flip(img, 0, 4, False)
    assert np.all(shifted[:, :4] == 0) and np.array_equal(shifted[:, 4:], img[:, :28])


def test_augment_deterministic_and_non_image_identity():
    img = np.random.default_rng(1).uniform(size=(3, 32, 32))
    s = D.Sample(3, img)
    a = D.augment(s, np.random.default_rng(7))
    b = D.augment(s, np.random.default_rng(7))
    assert a.label == 3 and np.array_equal(a.pixels, b.pixels)
    vec = D.Sample(1, np.arange(5.0))
    assert D.augment(vec, np.random.default_rng(0)) is vec


def test_augment_batch_matches_per_image():
    rng = np.random.default_rng(2)
    imgs = rng.uniform(size=(6, 3, 32, 32))
    out = D.augment_batch(imgs, np.random.default_rng(9))
    ref_rng = np.random.default_rng(9)
    offs = ref_rng.integers(0, 9, size=(6, 2))
    flips = ref_rng.random(6) < 0.5
    for i in range(6):
        assert np.array_equal(out[i], D.crop_flip(imgs[i], *offs[i], flips[i]))
    assert np.array_equal(out, D.augment_batch(imgs, np.random.default_rng(9)))


def test_batches():
    idx = list(D.batches(10, 4, np.random.default_rng(0)))
    assert [len(b) for b in idx] == [4, 4, 2]
    assert sorted(np.concatenate(idx).tolist()) == list(range(10))
    with pytest.raises(DatasetEmpty):
        list(D.batches(0, 4, np.random.default_rng(0)))


def test_csv_format(tmp_path):
    p = tmp_path / "m.csv"
    D.write_csv(p, ["a", "b"], [[1, 0.1], [2, 1 / 3]])
    raw = p.read_bytes()
    assert b"\r" not in raw
    assert raw.decode("utf-8") == "a,b\n1,0.1\n2,0.3333333333333333\n"
    assert D.csv_text(["a", "b"], [[1, 0.1], [2, 1 / 3]]) == raw.decode("utf-8")


# checkpoints

SPEC = ModelSpec(3, 4, (4, 8, 8))


def trained_state(seed=0):
    cfg = TrainConfig(seed=seed, epochs=3)
    state = NetworkState.initial(SPEC, cfg)
    rng = np.random.default_rng(seed)
    grads = {k: rng.normal(size=w.shape) for k, w, _ in state.model.named_params()}
    sgd_step(state, grads, cfg, 0)
    for _, buf in state.model.named_buffers():
        buf[...] = rng.uniform(0.5, 2.0, size=buf.shape)
    return state


def test_checkpoint_roundtrip(tmp_path):
    state = trained_state()
    path = tmp_path / "c.simn"
    save_checkpoint(state, path)
    back = load_checkpoint(path)
    a, b = state.tensors(), back.tensors()
    assert a.keys() == b.keys() and any(k.startswith("velocity.") for k in a)
    for k in a:
        assert a[k].tobytes() == b[k].tobytes(), k
    assert back.config == state.config and back.spec == state.spec
    assert encode_state(back) == path.read_bytes()


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=10, deadline=None)
def test_checkpoint_roundtrip_property(seed):
    blob = encode_state(trained_state(seed))
    assert encode_state(decode_state(blob)) == blob


def test_checkpoint_header_errors():
    blob = encode_state(trained_state())
    assert blob[:4] == MAGIC
    with pytest.raises(BadMagic):
        decode_state(b"XXXX" + blob[4:])
    with pytest.raises(BadVersion):
        decode_state(blob[:4] + struct.pack("<I", VERSION + 1) + blob[8:])
    with pytest.raises(Corrupt):
        decode_state(blob[:10])


def test_checkpoint_corruption_detected():
    blob = bytearray(encode_state(trained_state()))
    # flip a byte deep in the weight region
    blob[len(blob) - 100] ^= 0x01
    with pytest.raises(Corrupt):
        decode_state(bytes(blob))
    with pytest.raises(Corrupt):
        decode_state(bytes(blob[:-5]))


def test_checkpoint_trailing_payload_detected():
    blob = encode_state(trained_state())
    payload = blob[8:-4] + b"\x00"
    forged = blob[:8] + payload + struct.pack("<I", zlib.crc32(payload))
    with pytest.raises(Corrupt):
        decode_state(forged)
