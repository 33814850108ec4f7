"""File formats: raw volumes with text headers, NIfTI-1, feature sets."""
from __future__ import annotations

import struct

import numpy as np
import pytest

from volkey.descriptors import Descriptor, ExtractionConfig, Feature
from volkey.errors import ParseError
from volkey.frames import Frame
from volkey.io import (
    config_digest,
    read_features,
    read_nifti,
    read_volume,
    write_features,
    write_volume,
)
from volkey.keypoints import Keypoint
from volkey.transforms import matrix_from_rotvec
from volkey.volume import ScalarVolume


def _write_raw_pair(tmp_path, header_lines, blob_bytes, name="vol"):
    header = tmp_path / f"{name}.txt"
    header.write_text("\n".join(header_lines) + "\n")
    (tmp_path / f"{name}.raw").write_bytes(blob_bytes)
    return header


def test_read_volume_hand_written_bytes(tmp_path):
    # column-major blob: flat index x + 2 y + 4 z for dims (2, 2, 2)
    blob = np.arange(8, dtype="<f4").tobytes()
    header = _write_raw_pair(
        tmp_path,
        [
            "# tiny test volume",
            "dims = 2 2 2",
            "spacing = 1.0 0.5 2.0",
            "origin = -1.0 0.0 3.5",
            "dtype = f32",
            "data = vol.raw",
        ],
        blob,
    )
    vol = read_volume(header)
    assert vol.dims == (2, 2, 2)
    assert vol.spacing == (1.0, 0.5, 2.0)
    assert vol.origin == (-1.0, 0.0, 3.5)
    for x in range(2):
        for y in range(2):
            for z in range(2):
                assert vol.data[x, y, z] == float(x + 2 * y + 4 * z)


def test_volume_round_trips_per_dtype(tmp_path):
    rng = np.random.default_rng(50)
    f32_exact = rng.random((6, 5, 4)).astype(np.float32).astype(np.float64)
    vol = ScalarVolume((6, 5, 4), (1.0, 1.0, 2.0), (0.0, -3.0, 1.0), f32_exact)
    path = tmp_path / "f.txt"
    write_volume(path, vol, dtype="f32")
    back = read_volume(path)
    np.testing.assert_array_equal(back.data, f32_exact)
    assert back.spacing == vol.spacing and back.origin == vol.origin

    ints = rng.integers(0, 256, (4, 4, 4)).astype(float)
    write_volume(tmp_path / "u.txt", ScalarVolume((4, 4, 4), (1, 1, 1), (0, 0, 0), ints), "u8")
    np.testing.assert_array_equal(read_volume(tmp_path / "u.txt").data, ints)

    wide = np.full((4, 4, 4), 40000.0)
    write_volume(tmp_path / "i.txt", ScalarVolume((4, 4, 4), (1, 1, 1), (0, 0, 0), wide), "i16")
    np.testing.assert_array_equal(read_volume(tmp_path / "i.txt").data, 32767.0)


def test_read_volume_parse_errors_carry_offsets(tmp_path):
    blob = np.zeros(8, dtype="<f4").tobytes()
    missing = _write_raw_pair(
        tmp_path, ["spacing = 1 1 1", "origin = 0 0 0", "dtype = f32", "data = a.raw"], blob, "a"
    )
    with pytest.raises(ParseError):
        read_volume(missing)
    garbled = _write_raw_pair(
        tmp_path,
        ["dims = 2 2 2", "spacing = fast 1 1", "origin = 0 0 0", "dtype = f32", "data = b.raw"],
        blob,
        "b",
    )
    with pytest.raises(ParseError) as err:
        read_volume(garbled)
    assert "byte offset" in str(err.value)
    short = _write_raw_pair(
        tmp_path,
        ["dims = 4 4 4", "spacing = 1 1 1", "origin = 0 0 0", "dtype = f32", "data = c.raw"],
        blob,
        "c",
    )
    with pytest.raises(ParseError):
        read_volume(short)


def _nifti_bytes(dims=(4, 3, 2), datatype=4, value=3, slope=2.0, inter=1.0, magic=b"n+1\x00"):
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, 3, dims[0], dims[1], dims[2], 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<8f", hdr, 76, 0.0, 2.0, 1.5, 0.0, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, slope, inter)
    hdr[344:348] = magic
    count = dims[0] * dims[1] * dims[2]
    data = np.full(count, value, dtype="<i2").tobytes()
    return bytes(hdr) + b"\x00" * 4 + data


def test_read_nifti_minimal_image(tmp_path):
    path = tmp_path / "img.nii"
    path.write_bytes(_nifti_bytes())
    with pytest.warns(UserWarning, match="orientation"):
        vol = read_nifti(path)
    assert vol.dims == (4, 3, 2)
    assert vol.spacing == (2.0, 1.5, 1.0)  # zero pixdim falls back to unit
    assert vol.origin == (0.0, 0.0, 0.0)
    np.testing.assert_array_equal(vol.data, 7.0)  # 3 * slope 2 + inter 1


def test_read_nifti_rejects_bad_files(tmp_path):
    truncated = tmp_path / "short.nii"
    truncated.write_bytes(b"\x00" * 100)
    with pytest.raises(ParseError, match="byte offset"):
        read_nifti(truncated)

    bad_magic = tmp_path / "magic.nii"
    bad_magic.write_bytes(_nifti_bytes(magic=b"abc\x00"))
    with pytest.raises(ParseError, match="magic"):
        read_nifti(bad_magic)

    two_file = tmp_path / "pair.nii"
    two_file.write_bytes(_nifti_bytes(magic=b"ni1\x00"))
    with pytest.raises(ParseError, match="two-file"):
        read_nifti(two_file)

    missing_data = tmp_path / "cut.nii"
    missing_data.write_bytes(_nifti_bytes()[:-10])
    with pytest.warns(UserWarning), pytest.raises(ParseError, match="truncated data"):
        read_nifti(missing_data)

    weird_type = tmp_path / "dt.nii"
    weird_type.write_bytes(_nifti_bytes(datatype=64))
    with pytest.raises(ParseError, match="datatype"):
        read_nifti(weird_type)


def _random_feature(rng):
    kp = Keypoint(
        x=rng.uniform(0.0, 60.0, 3),
        sigma=float(rng.uniform(0.5, 9.0)),
        sign=int(rng.choice([-1, 1])),
        response=0.0,
        border=bool(rng.random() < 0.2),
    )
    frame = Frame(matrix_from_rotvec(rng.normal(size=3)))
    descs = [
        Descriptor(bins=None, ranked=rng.permutation(64).astype(np.int16)) for _ in range(4)
    ]
    return Feature(keypoint=kp, frame=frame, descriptors=descs, border=kp.border)


def test_feature_file_round_trip(tmp_path):
    rng = np.random.default_rng(51)
    features = [_random_feature(rng) for _ in range(1000)]
    path = tmp_path / "feats.vkf"
    cfg = ExtractionConfig(max_count=123)
    write_features(path, features, volume_id="case-7", config=cfg, estimator="max_gradient")
    loaded, meta = read_features(path)
    assert meta["volume_id"] == "case-7"
    assert meta["estimator"] == "max_gradient"
    assert meta["config_digest"] == config_digest(cfg)
    assert int(meta["count"]) == 1000
    assert len(loaded) == 1000
    for a, b in zip(features, loaded):
        np.testing.assert_array_equal(a.keypoint.x, b.keypoint.x)
        assert a.keypoint.sigma == b.keypoint.sigma
        assert a.keypoint.sign == b.keypoint.sign
        assert a.border == b.border
        np.testing.assert_array_equal(a.frame.matrix, b.frame.matrix)
        for da, db in zip(a.descriptors, b.descriptors):
            assert db.bins is None
            np.testing.assert_array_equal(da.ranked, db.ranked)


def test_feature_file_rewrite_is_byte_identical(tmp_path):
    rng = np.random.default_rng(52)
    features = [_random_feature(rng)]
    first = tmp_path / "one.vkf"
    write_features(first, features, volume_id="x")
    loaded, _ = read_features(first)
    second = tmp_path / "two.vkf"
    write_features(second, loaded, volume_id="x")
    assert first.read_bytes() == second.read_bytes()


def test_empty_feature_file(tmp_path):
    path = tmp_path / "none.vkf"
    write_features(path, [])
    loaded, meta = read_features(path)
    assert loaded == []
    assert int(meta["count"]) == 0


def test_feature_file_version_refusal(tmp_path):
    path = tmp_path / "new.vkf"
    write_features(path, [])
    raw = path.read_bytes().replace(b"VOLKEYFEAT 1", b"VOLKEYFEAT 2", 1)
    newer = tmp_path / "newer.vkf"
    newer.write_bytes(raw)
    with pytest.raises(ParseError, match="version"):
        read_features(newer)


def test_feature_file_corruption_errors(tmp_path):
    rng = np.random.default_rng(53)
    path = tmp_path / "good.vkf"
    write_features(path, [_random_feature(rng)])
    raw = bytearray(path.read_bytes())
    start = raw.find(b"END\n") + 4

    clipped = tmp_path / "clipped.vkf"
    clipped.write_bytes(bytes(raw[:-5]))
    with pytest.raises(ParseError, match="byte offset"):
        read_features(clipped)

    zero_sigma = bytearray(raw)
    struct.pack_into("<d", zero_sigma, start + 24, 0.0)
    bad_sigma = tmp_path / "sigma.vkf"
    bad_sigma.write_bytes(bytes(zero_sigma))
    with pytest.raises(ParseError, match="byte offset"):
        read_features(bad_sigma)

    bad_sign = bytearray(raw)
    struct.pack_into("<b", bad_sign, start + 104, 5)
    sign_path = tmp_path / "sign.vkf"
    sign_path.write_bytes(bytes(bad_sign))
    with pytest.raises(ParseError):
        read_features(sign_path)

    skewed = bytearray(raw)
    struct.pack_into("<9d", skewed, start + 32, *([0.1] * 9))
    frame_path = tmp_path / "frame.vkf"
    frame_path.write_bytes(bytes(skewed))
    with pytest.raises(ParseError):
        read_features(frame_path)

    no_end = tmp_path / "noend.vkf"
    no_end.write_bytes(bytes(raw).replace(b"END\n", b"EGG\n", 1))
    with pytest.raises(ParseError, match="END"):
        read_features(no_end)


def test_config_digest_is_stable_and_sensitive():
    a = ExtractionConfig()
    b = ExtractionConfig()
    c = ExtractionConfig(max_count=99)
    assert config_digest(a) == config_digest(b)
    assert config_digest(a) != config_digest(c)
    digest = config_digest(a)
    assert len(digest) == 16
    assert all(ch in "0123456789abcdef" for ch in digest)
