import json

import numpy as np
import pytest

from hfdenoise.data import (
    Dataset,
    LDCTNoiseModel,
    PhantomSpec,
    denormalize,
    generate_phantom,
    import_png16,
    load_dataset,
    load_image,
    normalize,
    read_manifest,
    save_image,
    simulate_ldct,
    write_dataset,
)
from hfdenoise.errors import ConfigError, DataError, DegenerateRange, FormatError, InvalidDose
from hfdenoise.image import Image
from hfdenoise.metrics import hf_ll_ratio, subband_difference
from hfdenoise.wavelet import dwt2


class TestFiles:
    def test_float32_round_trip_bit_identical(self, tmp_path, rng):
        img = Image(rng.normal(size=(64, 64)).astype(np.float32), (-3.0, 3.0), "r")
        load = load_image(save_image(img, tmp_path / "r"))
        assert load.data.dtype == np.float32
        assert load.data.tobytes() == img.data.tobytes()
        assert load.intensity_range == (-3.0, 3.0) and load.id == "r"

    def test_float64_round_trip(self, tmp_path, rng):
        img = Image(rng.normal(size=(6, 4)), (0, 1), "d")
        assert np.array_equal(load_image(save_image(img, tmp_path / "d.json")).data, img.data)

    def test_shape_mismatch_is_format_error(self, tmp_path, rng):
        side = save_image(Image(rng.normal(size=(8, 8)).astype(np.float32), (0, 1), "m"), tmp_path / "m")
        meta = json.loads(side.read_text())
        meta["shape"] = [8, 9]
        side.write_text(json.dumps(meta))
        with pytest.raises(FormatError):
            load_image(side)

    def test_uint16_promoted(self, tmp_path):
        raw = np.arange(12, dtype="<u2").reshape(3, 4)
        (tmp_path / "u.bin").write_bytes(raw.tobytes())
        (tmp_path / "u.json").write_text(json.dumps(
            {"format": "hfdenoise-image/1", "id": "u", "shape": [3, 4], "dtype": "uint16", "payload": "u.bin"}))
        img = load_image(tmp_path / "u")
        assert img.data.dtype == np.float32 and img.intensity_range == (0.0, 65535.0)
        np.testing.assert_array_equal(img.data, raw)

    def test_png16_import(self, tmp_path):
        from PIL import Image as PILImage

        arr = (np.arange(64, dtype=np.uint16).reshape(8, 8) * 1000)
        PILImage.fromarray(arr).save(tmp_path / "p.png")
        img = import_png16(tmp_path / "p.png")
        assert img.intensity_range == (0.0, 65535.0)
        np.testing.assert_array_equal(img.data, arr.astype(np.float32))

    def test_missing_and_garbage(self, tmp_path):
        with pytest.raises(DataError):
            load_image(tmp_path / "nope")
        (tmp_path / "g.json").write_text("{not json")
        with pytest.raises(FormatError):
            load_image(tmp_path / "g")


class TestDataset:
    def test_write_and_load(self, tmp_path):
        spec = PhantomSpec(size=16)
        entries = [(generate_phantom(spec, k), {"split": "train" if k < 3 else "test"}) for k in range(5)]
        write_dataset(tmp_path, entries)
        assert len(read_manifest(tmp_path)["items"]) == 5
        train = load_dataset(tmp_path, "train")
        test = load_dataset(tmp_path, "test")
        assert [im.id for im in train.items] == ["phantom_0000", "phantom_0001", "phantom_0002"]
        assert len(test) == 2 and train.intensity_range == spec.intensity_range

    def test_split_overlap_rejected(self, tmp_path):
        img = generate_phantom(PhantomSpec(size=16), 0)
        with pytest.raises(DataError):
            write_dataset(tmp_path, [(img, {"split": "train"}), (img, {"split": "test"})])

    def test_mixed_dtypes_rejected(self):
        with pytest.raises(DataError):
            Dataset([Image(np.zeros((2, 2), np.float32)), Image(np.zeros((2, 2), np.float64))])


class TestNormalize:
    def test_endpoints(self):
        rng_ = (-1000.0, 3000.0)
        assert normalize(np.array([1000.0]), rng_)[0] == 0.0
        np.testing.assert_allclose(normalize(np.array([-1000.0, 3000.0]), rng_), [-1.0, 1.0])

    def test_round_trip(self, rng):
        x = rng.uniform(-1000, 3000, size=(32, 32))
        assert np.max(np.abs(denormalize(normalize(x, (-1000, 3000)), (-1000, 3000)) - x)) <= 1e-6

    def test_degenerate(self):
        with pytest.raises(DegenerateRange):
            normalize(np.zeros(3), (5.0, 5.0))


class TestPhantom:
    def test_deterministic(self):
        spec = PhantomSpec(seed=3)
        assert np.array_equal(generate_phantom(spec, 7).data, generate_phantom(spec, 7).data)
        assert not np.array_equal(generate_phantom(spec, 7).data, generate_phantom(spec, 8).data)

    def test_within_range_and_has_edges(self):
        spec = PhantomSpec()
        for k in range(10):
            img = generate_phantom(spec, k)
            lo, hi = spec.intensity_range
            assert img.data.min() >= lo and img.data.max() <= hi
            sb = dwt2(img)
            assert min(np.sum(sb.lh ** 2), np.sum(sb.hl ** 2), np.sum(sb.hh ** 2)) > 0

    def test_invalid_spec(self):
        with pytest.raises(ConfigError):
            PhantomSpec(size=15)
        with pytest.raises(ConfigError):
            PhantomSpec(n_ellipses=(0, 2))


class TestSimulateLdct:
    def test_identity_without_noise(self):
        img = generate_phantom(PhantomSpec(size=32), 0)
        out = simulate_ldct(img, 1.0, 0, LDCTNoiseModel(gain=0.0, electronic_std=0.0))
        assert np.array_equal(out.data, img.data)

    def test_invalid_dose(self):
        img = generate_phantom(PhantomSpec(size=16), 0)
        for bad in (0.0, -0.5, 1.5):
            with pytest.raises(InvalidDose):
                simulate_ldct(img, bad, 0)

    def test_deterministic(self):
        img = generate_phantom(PhantomSpec(size=32), 0)
        assert np.array_equal(simulate_ldct(img, 0.5, 4).data, simulate_ldct(img, 0.5, 4).data)

    @pytest.mark.parametrize("texture", ["ramp", "white"])
    def test_halving_dose_doubles_variance(self, texture):
        # Monte-Carlo check of the declared variance law
        img = generate_phantom(PhantomSpec(size=32), 1)
        model = LDCTNoiseModel(texture=texture)

        def pooled_var(dose):
            return np.mean([np.var(simulate_ldct(img, dose, s, model).data - img.data) for s in range(300)])

        ratio = pooled_var(0.25) / pooled_var(0.5)
        assert abs(ratio / 2 - 1) <= 0.05

    def test_variance_matches_law(self):
        img = generate_phantom(PhantomSpec(size=32), 2)
        m = LDCTNoiseModel()
        expected = np.mean(m.gain ** 2 * np.maximum(img.data, m.floor) + m.electronic_std ** 2) / 0.5
        got = np.mean([np.mean((simulate_ldct(img, 0.5, s).data - img.data) ** 2) for s in range(300)])
        assert abs(got / expected - 1) <= 0.05

    def test_mean_preserved(self):
        img = generate_phantom(PhantomSpec(size=32), 3)
        means = [simulate_ldct(img, 0.25, s).data.astype(np.float64).mean() for s in range(1000)]
        assert abs(np.mean(means) / img.data.mean() - 1) <= 0.005

    def test_detail_bands_degrade_more(self):
        img = generate_phantom(PhantomSpec(), 4)
        d = subband_difference(img, simulate_ldct(img, 0.25, 0))
        assert hf_ll_ratio(d) > 1
