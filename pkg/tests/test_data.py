import numpy as np
import pytest

from sdtl.data import (
    ImageBuf, PairedDataset, decode_ppm, encode_ppm, list_images, load_image, procedural_scene,
    random_crop_pair, save_image, synth_lowlight,
)
from sdtl.errors import FormatError, InputError, ParseError


def rand_img(rng, h=16, w=16):
    return ImageBuf(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))


class TestImageBuf:
    def test_float_round_trip(self, rng):
        img = rand_img(rng)
        assert np.abs(ImageBuf.from_float(img.to_float()).to_float() - img.to_float()).max() <= 1 / 255
        np.testing.assert_array_equal(ImageBuf.from_chw(img.to_chw(np.float64)).pixels, img.pixels)

    def test_rejects_bad_shape(self):
        with pytest.raises(FormatError):
            ImageBuf(np.zeros((4, 4), dtype=np.uint8))
        with pytest.raises(FormatError):
            ImageBuf(np.zeros((0, 4, 3), dtype=np.uint8))


class TestFiles:
    @pytest.mark.parametrize("suffix", [".ppm", ".png"])
    def test_lossless_round_trip(self, tmp_path, rng, suffix):
        img = rand_img(rng)
        path = tmp_path / ("x" + suffix)
        save_image(path, img)
        np.testing.assert_array_equal(load_image(path).pixels, img.pixels)

    def test_ppm_bytes_identical(self, tmp_path, rng):
        img = rand_img(rng)
        save_image(tmp_path / "a.ppm", img)
        buf = (tmp_path / "a.ppm").read_bytes()
        save_image(tmp_path / "b.ppm", load_image(tmp_path / "a.ppm"))
        assert (tmp_path / "b.ppm").read_bytes() == buf

    def test_header_example(self):
        buf = b"P6\n2 2\n255\n" + bytes(range(12))
        img = decode_ppm(buf)
        assert (img.height, img.width) == (2, 2)
        np.testing.assert_array_equal(img.pixels.reshape(-1), np.arange(12))

    def test_header_comments(self):
        img = decode_ppm(b"P6\n# comment\n1 1\n255\n" + b"\x01\x02\x03")
        np.testing.assert_array_equal(img.pixels[0, 0], [1, 2, 3])

    def test_truncated_payload(self):
        with pytest.raises(ParseError, match=r"expected 12 bytes, got 5.*offset 11"):
            decode_ppm(b"P6\n2 2\n255\n" + b"\x00" * 5)

    def test_truncated_header(self):
        with pytest.raises(ParseError, match="offset"):
            decode_ppm(b"P6\n2 ")

    def test_bad_magic(self):
        with pytest.raises(ParseError):
            decode_ppm(b"P3\n1 1\n255\n1 2 3")

    def test_16_bit_rejected(self):
        with pytest.raises(FormatError):
            decode_ppm(b"P6\n1 1\n65535\n" + b"\x00" * 6)

    def test_unknown_format(self, tmp_path):
        (tmp_path / "x.ppm").write_bytes(b"GIF89a")
        with pytest.raises(FormatError):
            load_image(tmp_path / "x.ppm")

    def test_16_bit_png_rejected(self, tmp_path):
        from PIL import Image
        Image.fromarray(np.zeros((4, 4), dtype=np.uint16) + 300).save(tmp_path / "d.png")
        with pytest.raises(FormatError):
            load_image(tmp_path / "d.png")


def write_pairs(root, rng, stems, size=(20, 24)):
    for sub in ("low", "high"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for s in stems:
        save_image(root / "low" / f"{s}.ppm", rand_img(rng, *size))
        save_image(root / "high" / f"{s}.png", rand_img(rng, *size))


class TestDataset:
    def test_pairs_by_stem_sorted(self, tmp_path, rng):
        write_pairs(tmp_path, rng, ["b", "a", "c"])
        ds = PairedDataset(tmp_path)
        assert len(ds) == 3
        assert [ds.stem(i) for i in range(3)] == ["a", "b", "c"]
        low, high = ds[0]
        assert low.pixels.shape == high.pixels.shape == (20, 24, 3)

    def test_unpaired(self, tmp_path, rng):
        write_pairs(tmp_path, rng, ["a"])
        save_image(tmp_path / "low" / "z.ppm", rand_img(rng))
        with pytest.raises(InputError, match="z"):
            PairedDataset(tmp_path)

    def test_missing_dirs(self, tmp_path):
        with pytest.raises(InputError):
            PairedDataset(tmp_path)

    def test_size_mismatch(self, tmp_path, rng):
        write_pairs(tmp_path, rng, ["a"])
        save_image(tmp_path / "high" / "a.png", rand_img(rng, 8, 8))
        with pytest.raises(InputError):
            PairedDataset(tmp_path)[0]


class TestCrop:
    def test_exact_size(self, rng):
        a, b = rand_img(rng, 8, 8), rand_img(rng, 8, 8)
        ca, cb, off = random_crop_pair(a, b, 8, rng)
        assert off == (0, 0)
        np.testing.assert_array_equal(ca.pixels, a.pixels)

    def test_offsets_shared(self, rng):
        a = rand_img(rng, 20, 28)
        b = ImageBuf(255 - a.pixels)
        for seed in range(100):
            ca, cb, _ = random_crop_pair(a, b, 8, np.random.default_rng(seed))
            np.testing.assert_array_equal(cb.pixels, 255 - ca.pixels)

    def test_paper_size_offsets(self):
        # LOL images are 400x600; 256 crops leave offsets in [0,144] x [0,344]
        a = ImageBuf(np.zeros((400, 600, 3), dtype=np.uint8))
        r = np.random.default_rng(0)
        offs = np.array([random_crop_pair(a, a, 256, r)[2] for _ in range(300)])
        assert offs[:, 0].min() >= 0 and offs[:, 0].max() <= 144
        assert offs[:, 1].min() >= 0 and offs[:, 1].max() <= 344
        assert offs[:, 1].max() > 144  # the wide axis is actually used

    def test_too_small(self, rng):
        with pytest.raises(InputError):
            random_crop_pair(rand_img(rng, 8, 8), rand_img(rng, 8, 8), 12, rng)

    def test_size_divisible_by_4(self, rng):
        with pytest.raises(InputError):
            random_crop_pair(rand_img(rng), rand_img(rng), 6, rng)


class TestSynth:
    def test_identity(self, rng):
        img = rand_img(rng)
        np.testing.assert_array_equal(synth_lowlight(img, 1.0, 0.0, rng).pixels, img.pixels)

    def test_mid_gray(self):
        img = ImageBuf.from_float(np.full((2, 2, 3), 0.5))
        out = synth_lowlight(img, 3.0, 0.0)
        expected = (128 / 255) ** 3  # 0.5 is stored as 128
        assert np.all(np.abs(out.to_float() - expected) <= 0.5 / 255)
        assert abs(expected - 0.125) < 0.01

    def test_darkens(self, rng):
        img = procedural_scene(32, rng)
        assert synth_lowlight(img, 2.0, 0.0).to_float().mean() < img.to_float().mean()

    def test_invalid(self, rng):
        with pytest.raises(InputError):
            synth_lowlight(rand_img(rng), 0.5, 0.0)
        with pytest.raises(InputError):
            synth_lowlight(rand_img(rng), 2.0, -0.1)

    def test_seeded(self, rng):
        img = rand_img(rng)
        a = synth_lowlight(img, rng=np.random.default_rng(7)).pixels
        b = synth_lowlight(img, rng=np.random.default_rng(7)).pixels
        np.testing.assert_array_equal(a, b)


def test_list_images_filters(tmp_path, rng):
    save_image(tmp_path / "b.png", rand_img(rng))
    save_image(tmp_path / "a.ppm", rand_img(rng))
    (tmp_path / "notes.txt").write_text("x")
    assert [p.name for p in list_images(tmp_path)] == ["a.ppm", "b.png"]
