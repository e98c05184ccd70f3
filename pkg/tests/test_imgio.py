import numpy as np
import pytest

from slicereg.imgcore import Image2D, Volume3D
from slicereg.imgio import read_imv, read_pgm, write_imv, write_pgm

from conftest import random_image, random_volume


class TestImvContainer:
    def test_image_roundtrip(self, tmp_path, rng):
        img = random_image(rng, 9, 7, spacing=(10.4, 10.4))
        path = tmp_path / "img.imv"
        write_imv(path, img)
        back = read_imv(path)
        assert isinstance(back, Image2D)
        assert np.array_equal(back.data, img.data)
        assert back.spacing == img.spacing

    def test_rgb_roundtrip(self, tmp_path, rng):
        img = random_image(rng, 5, 4, channels=3)
        path = tmp_path / "rgb.imv"
        write_imv(path, img)
        back = read_imv(path)
        assert back.channels == 3
        assert np.array_equal(back.data, img.data)

    def test_volume_roundtrip(self, tmp_path, rng):
        vol = random_volume(rng, 6, 5, 4, spacing=(2.0, 3.0, 4.0))
        path = tmp_path / "vol.imv"
        write_imv(path, vol)
        back = read_imv(path)
        assert isinstance(back, Volume3D)
        assert np.array_equal(back.data, vol.data)
        assert back.spacing == vol.spacing

    def test_feature_raster_roundtrip(self, tmp_path, rng):
        data = rng.standard_normal((3, 5, 6, 16)).astype(np.float32)
        path = tmp_path / "feat.imv"
        write_imv(path, (data, (4.0, 4.0, 2.0)))
        back, spacing = read_imv(path)
        assert np.array_equal(back, data)
        assert spacing == (4.0, 4.0, 2.0)

    def test_integer_dtypes(self, tmp_path):
        img = Image2D(np.arange(12, dtype=np.float64).reshape(3, 4), (1.0, 1.0))
        for dtype in ("u8", "u16"):
            path = tmp_path / f"{dtype}.imv"
            write_imv(path, img, dtype=dtype)
            back = read_imv(path)
            assert np.array_equal(back.data, img.data)

    def test_byte_layout_x_fastest(self, tmp_path):
        vol = Volume3D(np.arange(8, dtype=np.float32).reshape(2, 2, 2), (1.0, 1.0, 1.0))
        path = tmp_path / "layout.imv"
        write_imv(path, vol)
        blob = path.read_bytes()
        payload = np.frombuffer(blob[-32:], dtype="<f4")
        # x fastest, then y, then z
        np.testing.assert_array_equal(payload, np.arange(8, dtype=np.float32))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.imv"
        path.write_bytes(b"NOPE" * 8)
        with pytest.raises(ValueError):
            read_imv(path)

    def test_truncated_payload(self, tmp_path, rng):
        img = random_image(rng, 8, 8)
        path = tmp_path / "cut.imv"
        write_imv(path, img)
        blob = path.read_bytes()
        path.write_bytes(blob[:-16])
        with pytest.raises(ValueError):
            read_imv(path)


class TestPgm:
    def test_roundtrip_u8(self, tmp_path, rng):
        img = Image2D(rng.integers(0, 256, (6, 9)).astype(np.float64) / 255.0, (1.0, 1.0))
        path = tmp_path / "img.pgm"
        write_pgm(path, img, maxval=255)
        back = read_pgm(path)
        np.testing.assert_allclose(back.data, img.data, atol=1e-6)

    def test_roundtrip_u16_big_endian(self, tmp_path, rng):
        img = Image2D(rng.integers(0, 65536, (4, 5)).astype(np.float64) / 65535.0,
                      (1.0, 1.0))
        path = tmp_path / "img16.pgm"
        write_pgm(path, img, maxval=65535)
        blob = path.read_bytes()
        # sample bytes are most-significant first
        header_end = blob.index(b"65535\n") + 6
        first = int.from_bytes(blob[header_end:header_end + 2], "big")
        assert first == int(round(float(img.data[0, 0]) * 65535))
        back = read_pgm(path)
        np.testing.assert_allclose(back.data, img.data, atol=1e-7)

    def test_comment_handling(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes([0, 128, 255, 64]))
        img = read_pgm(path)
        np.testing.assert_allclose(img.data.ravel() * 255, [0, 128, 255, 64], atol=0.5)

    def test_rejects_ascii_pgm(self, tmp_path):
        path = tmp_path / "p2.pgm"
        path.write_text("P2\n2 2\n255\n0 1 2 3\n")
        with pytest.raises(ValueError):
            read_pgm(path)
