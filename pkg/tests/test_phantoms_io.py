import hashlib
import math
import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from activect.errors import ConfigurationError, FormatError
from activect.fileio import (checkpoint_bytes, read_checkpoint, read_image, read_pgm, read_sinogram,
                             write_checkpoint, write_image, write_pgm, write_sinogram)
from activect.phantoms import (SHEPP_LOGAN, Ellipse, EllipsePhantom, EllipseRoI, ThresholdRoI,
                               feature_phantoms, make_roi_mask, render_phantom, shepp_logan,
                               shepp_logan_family)
from activect.tomo import add_poisson_noise, default_geometry, forward_project


def membership_oracle(ellipses, n):
    """Scalar per-pixel rasterizer written straight from the ellipse equation."""
    img = np.zeros((n, n))
    for r in range(n):
        y = ((n - 1) / 2 - r) / (n / 2)
        for c in range(n):
            x = (c - (n - 1) / 2) / (n / 2)
            v = 0.0
            for e in ellipses:
                t = math.radians(e.rotation)
                dx, dy = x - e.center_x, y - e.center_y
                u = dx * math.cos(t) + dy * math.sin(t)
                w = -dx * math.sin(t) + dy * math.cos(t)
                if (u / e.a) ** 2 + (w / e.b) ** 2 <= 1.0:
                    v += e.intensity
            img[r, c] = max(v, 0.0)
    return img


class TestRender:
    def test_empty(self):
        np.testing.assert_array_equal(render_phantom(EllipsePhantom(()), 16), 0.0)

    def test_full_disk(self):
        img = render_phantom(EllipsePhantom((Ellipse(0, 0, 1.0, 1.0, 0, 1.0),)), 32)
        X = (np.arange(32) - 15.5) / 16
        r2 = X[None, :] ** 2 + X[:, None] ** 2
        np.testing.assert_array_equal(img[r2 < 0.95], 1.0)
        np.testing.assert_array_equal(img[r2 > 1.05], 0.0)

    def test_shepp_logan_matches_membership_oracle(self):
        np.testing.assert_array_equal(render_phantom(SHEPP_LOGAN, 48),
                                      membership_oracle(SHEPP_LOGAN.ellipses, 48))

    def test_too_small(self):
        with pytest.raises(ConfigurationError):
            render_phantom(SHEPP_LOGAN, 4)

    def test_invalid_ellipse(self):
        with pytest.raises(ConfigurationError):
            Ellipse(0, 0, 0.0, 0.5)
        with pytest.raises(ConfigurationError):
            Ellipse(1.5, 0, 0.5, 0.5)


class TestSheppLogan:
    def test_range(self):
        img = shepp_logan(64)
        assert img.min() == 0.0 and img.max() == 1.0

    def test_center_pixel(self):
        n = 65
        img = shepp_logan(n)
        raw = membership_oracle(SHEPP_LOGAN.ellipses, n)
        expected = (raw[32, 32] - raw.min()) / (raw.max() - raw.min())
        assert img[32, 32] == pytest.approx(expected, abs=1e-15)

    def test_multi_resolution(self):
        lo = shepp_logan(64)
        hi = shepp_logan(256).reshape(64, 4, 64, 4).mean(axis=(1, 3))
        assert np.mean(np.abs(lo - hi)) < 0.02

    def test_family(self):
        fam = shepp_logan_family(5, seed=3)
        assert len(fam) == 5 and fam[0] == SHEPP_LOGAN
        imgs = [render_phantom(p, 32) for p in fam]
        assert all(not np.array_equal(imgs[0], im) for im in imgs[1:])
        assert shepp_logan_family(5, seed=3) == fam


class TestRoI:
    def test_threshold_zero(self):
        img = np.random.default_rng(0).random((16, 16)) + 0.1
        np.testing.assert_array_equal(make_roi_mask(ThresholdRoI(0.0), img), 1)

    def test_empty_ellipse_warns(self):
        with pytest.warns(RuntimeWarning):
            m = make_roi_mask(EllipseRoI(0.9, 0.9, 0.001, 0.001), np.zeros((16, 16)))
        assert m.sum() == 0 and m.dtype == np.uint8

    def test_spine_area(self):
        n = 256
        roi = EllipseRoI(0.3, -0.35, 0.12, 0.08, 25.0)
        mask = make_roi_mask(roi, shepp_logan(n))
        analytic = math.pi * roi.a * roi.b * (n / 2) ** 2
        assert abs(mask.sum() - analytic) / analytic < 0.02

    def test_feature_phantoms(self):
        pairs = feature_phantoms(5, seed=0)
        for ph, roi in pairs:
            img = render_phantom(ph, 64)
            with warnings.catch_warnings():
                warnings.simplefilter("error")
                mask = make_roi_mask(roi, img)
            assert 10 < mask.sum() < 400
            assert math.hypot(roi.center_x, roi.center_y) > 0.2
            # the feature is the brightest structure and sits inside the RoI
            assert mask[img == img.max()].all()


class TestRawFiles:
    @settings(max_examples=20, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9)),
                  elements=st.floats(allow_nan=False, width=64)))
    def test_image_round_trip(self, tmp_path_factory, img):
        p = tmp_path_factory.mktemp("io") / "x.raw"
        write_image(p, img)
        np.testing.assert_array_equal(read_image(p), img)

    def test_sinogram_round_trip(self, tmp_path):
        g = default_geometry(16, num_angles=20, alpha_max=360.0, pixel_size=0.5)
        s = add_poisson_noise(forward_project(shepp_logan(16), g, [3, 7, 11]), 1e4, 0)
        write_sinogram(tmp_path / "s.raw", s)
        back = read_sinogram(tmp_path / "s.raw")
        assert back.geometry == g
        np.testing.assert_array_equal(back.angles, s.angles)
        np.testing.assert_array_equal(back.data, s.data)

    def test_sinogram_hash_stable(self, tmp_path):
        g = default_geometry(16, num_angles=20)
        for name in ("a", "b"):
            write_sinogram(tmp_path / name, add_poisson_noise(forward_project(shepp_logan(16), g), 5e5, 9))
        h = [hashlib.sha256((tmp_path / n).read_bytes()).hexdigest() for n in ("a", "b")]
        assert h[0] == h[1]

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"NOTASCAN1" + bytes(16))
        with pytest.raises(FormatError) as e:
            read_image(tmp_path / "x")
        assert e.value.offset == 0

    def test_truncated_payload_offset(self, tmp_path):
        write_image(tmp_path / "x", np.ones((4, 4)))
        buf = (tmp_path / "x").read_bytes()
        (tmp_path / "x").write_bytes(buf[:-3])
        with pytest.raises(FormatError) as e:
            read_image(tmp_path / "x")
        assert e.value.offset == 9 + 8
        assert "offset 17" in str(e.value)

    def test_trailing_bytes(self, tmp_path):
        write_image(tmp_path / "x", np.ones((2, 2)))
        with open(tmp_path / "x", "ab") as f:
            f.write(b"\0")
        with pytest.raises(FormatError) as e:
            read_image(tmp_path / "x")
        assert e.value.offset == 9 + 8 + 32

    def test_layout(self, tmp_path):
        write_image(tmp_path / "x", np.array([[1.5, 2.0, -3.0]]))
        buf = (tmp_path / "x").read_bytes()
        assert buf[:9] == b"ACTISCAN1"
        assert struct.unpack("<2I", buf[9:17]) == (1, 3)
        assert struct.unpack("<3d", buf[17:]) == (1.5, 2.0, -3.0)


class TestPgm:
    def test_half_quantization(self, tmp_path):
        write_pgm(tmp_path / "h.pgm", np.full((4, 4), 0.5), (0.0, 1.0))
        buf = (tmp_path / "h.pgm").read_bytes()
        samples = np.frombuffer(buf[-32:], dtype=">u2")
        # 0.5 * 65535 = 32767.5 rounds half to even
        assert set(samples.tolist()) <= {32767, 32768}
        assert samples[0] == 32768

    def test_round_trip_within_quantum(self, tmp_path):
        img = np.random.default_rng(0).random((9, 7))
        write_pgm(tmp_path / "r.pgm", img, (0.0, 1.0))
        back, window = read_pgm(tmp_path / "r.pgm")
        assert window == (0.0, 1.0)
        assert np.max(np.abs(back - img)) <= 0.5 / 65535 + 1e-12

    def test_clipping(self, tmp_path):
        write_pgm(tmp_path / "c.pgm", np.array([[-1.0, 2.0]]), (0.0, 1.0))
        back, _ = read_pgm(tmp_path / "c.pgm")
        np.testing.assert_array_equal(back, [[0.0, 1.0]])

    def test_not_pgm(self, tmp_path):
        (tmp_path / "n.pgm").write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(FormatError):
            read_pgm(tmp_path / "n.pgm")


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        sections = {"PFLT": [rng.normal(size=(8, 1, 5, 5)), rng.normal(size=8)],
                    "SCOR": [np.array([2.5]), rng.normal(size=(3, 4))]}
        write_checkpoint(tmp_path / "m", sections)
        back = read_checkpoint(tmp_path / "m")
        assert list(back) == ["PFLT", "SCOR"]
        for k in sections:
            for a, b in zip(sections[k], back[k]):
                np.testing.assert_array_equal(a, b)

    def test_truncated(self, tmp_path):
        buf = checkpoint_bytes({"ABCD": [np.ones(3)]})
        (tmp_path / "m").write_bytes(buf[:-1])
        with pytest.raises(FormatError):
            read_checkpoint(tmp_path / "m")
