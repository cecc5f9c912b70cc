"""Synthetic data, long-format CSV, standardization, and image ingestion."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from funcgen.data import (
    DataFormatError,
    Dataset,
    FourierEncoder,
    centers_to_indices,
    fourier_encode,
    gen_image_dataset,
    gen_quadratic,
    inverse_preprocess,
    load_long_csv,
    make_fourier_encoder,
    pixel_centers,
    preprocess,
    read_pgm,
    read_raster_csv,
    write_dataset_manifest,
    write_long_csv,
)
from funcgen.spectral import FunctionSample


class TestGenQuadratic:
    def test_shapes_and_shared_mesh(self):
        data = gen_quadratic(n=5, m=7, seed=0)
        assert len(data) == 5
        assert data.name == "quadratic"
        for s in data:
            assert s.mesh.shape == (7, 1)
            assert s.values.shape == (7,)
            assert s.mesh is data[0].mesh

    def test_deterministic(self):
        a = gen_quadratic(n=4, m=6, seed=3)
        b = gen_quadratic(n=4, m=6, seed=3)
        for sa, sb in zip(a, b):
            assert_allclose(sa.values, sb.values, atol=0)

    def test_sign_balance(self):
        _, coeffs = gen_quadratic(n=400, m=5, seed=0, return_coeffs=True)
        frac_up = np.mean(coeffs[:, 0] > 0)
        assert 0.4 <= frac_up <= 0.6

    def test_coefficients_match_polyfit(self):
        data, coeffs = gen_quadratic(n=10, m=30, seed=1, return_coeffs=True)
        for s, (a, b, c) in zip(data, coeffs):
            fit = np.polyfit(s.mesh[:, 0], s.values, deg=2)
            assert_allclose(fit, [a, b, c], atol=0.03)
            assert 0.5 <= abs(a) <= 1.5

    def test_bad_sizes_rejected(self):
        with pytest.raises(ValueError):
            gen_quadratic(n=0, m=5)
        with pytest.raises(ValueError):
            gen_quadratic(n=5, m=0)


class TestLongCsv:
    def test_round_trip_exact(self, tmp_path, rng):
        path = tmp_path / "funcs.csv"
        samples = [
            FunctionSample(mesh=np.sort(rng.uniform(-1, 1, size=(5, 1)), axis=0),
                           values=rng.normal(size=5))
            for _ in range(3)
        ]
        write_long_csv(path, samples)
        back = load_long_csv(path)
        assert len(back) == 3
        for orig, got in zip(samples, back):
            assert_allclose(got.mesh, orig.mesh, atol=0)
            assert_allclose(got.values, orig.values, atol=0)

    def test_first_occurrence_order_and_sorting(self, tmp_path):
        path = tmp_path / "funcs.csv"
        path.write_text(
            "function_id,x,y\n"
            "b,0.5,1.0\n"
            "a,0.0,2.0\n"
            "b,-0.5,3.0\n"
        )
        data = load_long_csv(path)
        assert len(data) == 2
        assert_allclose(data[0].mesh[:, 0], [-0.5, 0.5])  # b first, sorted by x
        assert_allclose(data[0].values, [3.0, 1.0])
        assert_allclose(data[1].values, [2.0])

    def test_multidim_header(self, tmp_path):
        path = tmp_path / "funcs.csv"
        path.write_text(
            "function_id,x0,x1,y\n"
            "0,0.1,0.2,1.5\n"
            "0,0.3,0.4,2.5\n"
        )
        data = load_long_csv(path, name="surface")
        assert data.name == "surface"
        assert data[0].mesh.shape == (2, 2)
        assert_allclose(data[0].mesh[1], [0.3, 0.4])

    def test_malformed_rows_name_line_numbers(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("function_id,x,y\n0,0.1,1.0\n0,0.2\n")
        with pytest.raises(DataFormatError, match=r":3"):
            load_long_csv(path)
        path.write_text("function_id,x,y\n0,0.1,oops\n")
        with pytest.raises(DataFormatError, match=r":2.*non-numeric"):
            load_long_csv(path)

    def test_empty_and_header_only(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("")
        with pytest.raises(DataFormatError, match="empty"):
            load_long_csv(path)
        path.write_text("function_id,x,y\n")
        with pytest.raises(DataFormatError, match="no data rows"):
            load_long_csv(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,x,y\n0,0.1,1.0\n")
        with pytest.raises(DataFormatError, match="header"):
            load_long_csv(path)

    def test_custom_ids(self, tmp_path):
        path = tmp_path / "funcs.csv"
        mesh = np.array([[0.0], [1.0]])
        write_long_csv(path, [FunctionSample(mesh=mesh, values=np.array([1.0, 2.0]))],
                       ids=["curve_a"])
        text = path.read_text()
        assert text.splitlines()[1].startswith("curve_a,")


class TestPreprocess:
    def test_none_mode_copies(self):
        data = gen_quadratic(n=3, m=5, seed=0)
        out = preprocess(data, "none")
        assert out.preprocessing is None
        assert out.samples is not data.samples
        assert_allclose(out[0].values, data[0].values, atol=0)

    def test_global_pools_all_values(self):
        data = gen_quadratic(n=20, m=9, seed=2)
        out = preprocess(data, "global")
        pooled = np.concatenate([s.values for s in out])
        assert_allclose(pooled.mean(), 0.0, atol=1e-12)
        assert_allclose(pooled.std(), 1.0, rtol=1e-12)
        # a single sample need not be standardized on its own
        assert abs(out[0].values.mean()) > 1e-6

    def test_per_sample_standardizes_each(self):
        data = gen_quadratic(n=6, m=11, seed=3)
        out = preprocess(data, "per_sample")
        for s in out:
            assert_allclose(s.values.mean(), 0.0, atol=1e-12)
            assert_allclose(s.values.std(), 1.0, rtol=1e-12)

    @pytest.mark.parametrize("mode", ["global", "per_sample"])
    def test_inverse_round_trip(self, mode):
        data = gen_quadratic(n=4, m=7, seed=4)
        back = inverse_preprocess(preprocess(data, mode))
        assert back.preprocessing is None
        for orig, got in zip(data, back):
            assert_allclose(got.values, orig.values, rtol=1e-12, atol=1e-15)

    def test_already_standardized_unchanged(self, rng):
        raw = rng.normal(size=(5, 8))
        raw = (raw - raw.mean()) / raw.std()
        mesh = np.linspace(0, 1, 8)[:, None]
        data = Dataset(samples=[FunctionSample(mesh=mesh, values=v) for v in raw], name="z")
        out = preprocess(data, "global")
        for orig, got in zip(data, out):
            assert_allclose(got.values, orig.values, atol=1e-10)

    def test_zero_std_rejected(self):
        mesh = np.linspace(0, 1, 4)[:, None]
        flat = Dataset(
            samples=[FunctionSample(mesh=mesh, values=np.full(4, 2.0)) for _ in range(2)],
            name="flat",
        )
        with pytest.raises(ValueError, match="zero"):
            preprocess(flat, "global")
        mixed = Dataset(
            samples=[
                FunctionSample(mesh=mesh, values=np.array([0.0, 1.0, 0.0, 1.0])),
                FunctionSample(mesh=mesh, values=np.full(4, 2.0)),
            ],
            name="mixed",
        )
        with pytest.raises(ValueError, match="sample 1"):
            preprocess(mixed, "per_sample")

    def test_double_preprocess_rejected(self):
        data = preprocess(gen_quadratic(n=3, m=5, seed=0), "global")
        with pytest.raises(ValueError, match="already"):
            preprocess(data, "global")

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            preprocess(gen_quadratic(n=2, m=4, seed=0), "minmax")

    def test_manifest_written(self, tmp_path):
        data = preprocess(gen_quadratic(n=3, m=5, seed=0), "global")
        path = tmp_path / "manifest.txt"
        write_dataset_manifest(path, data)
        text = path.read_text()
        assert "preprocessing global" in text
        assert "n_samples 3" in text


class TestFourierEncoder:
    def test_origin_maps_to_ones_then_zeros(self):
        enc = make_fourier_encoder(2, n_freq=5, scale=3.0, seed=0)
        out = fourier_encode(enc, np.zeros(2))
        assert out.shape == (10,)
        assert_allclose(out[:5], np.ones(5), atol=0)
        assert_allclose(out[5:], np.zeros(5), atol=0)

    def test_unit_norm_per_frequency(self, rng):
        enc = make_fourier_encoder(2, n_freq=8, scale=10.0, seed=1)
        coords = rng.uniform(0, 1, size=(20, 2))
        out = fourier_encode(enc, coords)
        assert out.shape == (20, 16)
        assert_allclose(out[:, :8] ** 2 + out[:, 8:] ** 2, np.ones((20, 8)), atol=1e-12)

    def test_worked_example_quarter_period(self):
        enc = FourierEncoder(freq_matrix=np.array([[1.0, 0.0]]), scale=1.0)
        out = fourier_encode(enc, np.array([0.25, 0.77]))
        assert_allclose(out, [0.0, 1.0], atol=1e-12)

    def test_deterministic_by_seed(self):
        a = make_fourier_encoder(2, n_freq=4, scale=5.0, seed=7)
        b = make_fourier_encoder(2, n_freq=4, scale=5.0, seed=7)
        assert_allclose(a.freq_matrix, b.freq_matrix, atol=0)

    def test_validation(self):
        enc = make_fourier_encoder(2, n_freq=3)
        with pytest.raises(ValueError):
            fourier_encode(enc, np.zeros(3))
        with pytest.raises(ValueError):
            fourier_encode(enc, np.array([np.nan, 0.0]))
        with pytest.raises(ValueError):
            FourierEncoder(freq_matrix=np.zeros((2, 2)), scale=-1.0)


class TestRasterCoords:
    def test_pixel_centers_2x2(self):
        got = pixel_centers(2, 2)
        want = np.array([[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]])
        assert_allclose(got, want, atol=0)

    def test_round_trip(self):
        coords = pixel_centers(3, 5)
        idx = centers_to_indices(coords, 3, 5)
        want = np.array([[i, j] for i in range(3) for j in range(5)])
        assert_allclose(idx, want, atol=0)

    def test_non_centers_rejected(self):
        with pytest.raises(ValueError):
            centers_to_indices(np.array([[0.3, 0.3]]), 2, 2)


class TestImageDataset:
    def test_zero_image(self):
        enc = make_fourier_encoder(2, n_freq=3, scale=2.0, seed=0)
        data = gen_image_dataset(np.zeros((2, 2)), enc, name="blank")
        assert len(data) == 1
        assert data[0].n_points == 4
        assert_allclose(data[0].values, np.zeros(4), atol=0)
        assert_allclose(data[0].mesh, fourier_encode(enc, pixel_centers(2, 2)), atol=0)

    def test_shared_mesh_and_row_major_values(self):
        enc = make_fourier_encoder(2, n_freq=2, seed=0)
        imgs = np.array([[[0.0, 0.25], [0.5, 1.0]], [[1.0, 0.0], [0.0, 1.0]]])
        data = gen_image_dataset(imgs, enc)
        assert data[0].mesh is data[1].mesh
        assert_allclose(data[0].values, [0.0, 0.25, 0.5, 1.0], atol=0)

    def test_range_enforced(self):
        enc = make_fourier_encoder(2, n_freq=2, seed=0)
        with pytest.raises(DataFormatError):
            gen_image_dataset(np.full((2, 2), 1.5), enc)
        with pytest.raises(ValueError):
            gen_image_dataset(np.zeros((2, 2)), make_fourier_encoder(1, n_freq=2))


class TestReadPgm:
    def test_ascii_with_comments(self, tmp_path):
        path = tmp_path / "a.pgm"
        path.write_text("P2\n# comment\n2 2\n# another\n255\n0 255\n128 64\n")
        img = read_pgm(path)
        assert_allclose(img, np.array([[0, 255], [128, 64]]) / 255.0, atol=0)

    def test_binary(self, tmp_path):
        path = tmp_path / "b.pgm"
        path.write_bytes(b"P5\n3 2\n255\n" + bytes([0, 128, 255, 10, 20, 30]))
        img = read_pgm(path)
        assert img.shape == (2, 3)
        assert_allclose(img[0], np.array([0, 128, 255]) / 255.0, atol=0)

    def test_sixteen_bit_big_endian(self, tmp_path):
        path = tmp_path / "c.pgm"
        pixels = np.array([0, 65535, 32768, 16384], dtype=">u2")
        path.write_bytes(b"P5\n2 2\n65535\n" + pixels.tobytes())
        img = read_pgm(path)
        assert_allclose(img.ravel(), [0.0, 1.0, 32768 / 65535, 16384 / 65535], atol=0)

    def test_errors(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
        with pytest.raises(DataFormatError, match="magic"):
            read_pgm(path)
        path.write_bytes(b"P5\n2 2\n")
        with pytest.raises(DataFormatError, match="truncated"):
            read_pgm(path)
        path.write_bytes(b"P5\n2 2\n255\n" + bytes(3))
        with pytest.raises(DataFormatError, match="pixels"):
            read_pgm(path)


class TestReadRasterCsv:
    def test_reads_grid(self, tmp_path):
        path = tmp_path / "img.csv"
        path.write_text("0.0,0.5\n1.0,0.25\n")
        assert_allclose(read_raster_csv(path), [[0.0, 0.5], [1.0, 0.25]], atol=0)

    def test_ragged_rejected(self, tmp_path):
        path = tmp_path / "img.csv"
        path.write_text("0.0,0.5\n1.0\n")
        with pytest.raises(DataFormatError, match="ragged"):
            read_raster_csv(path)
