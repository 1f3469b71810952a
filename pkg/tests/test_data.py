import gzip
import math
import struct

import numpy as np
import pytest
from scipy.stats import chisquare

from ldegen.data import (
    IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, IngestionError, Normalization, ToySpec, batch_iter,
    image_folder_load, mnist_load, parse_idx, read_idx, read_points_csv, read_pgm, split_rows,
    toy_bin_probabilities, toy_log_density, toy_sample, write_idx, write_points_csv,
)
from ldegen.plot import write_pgm

SPEC = ToySpec()


class TestToySampler:
    def test_no_points_inside_dropout_window_of_upper_ridge(self):
        pts, comp = toy_sample(SPEC, 50_000, seed=3, return_components=True)
        upper = pts[comp == 2]
        assert not np.any((upper[:, 0] > 1.6) & (upper[:, 0] < 2.6))

    def test_shape_and_determinism(self):
        a = toy_sample(SPEC, 1000, seed=11)
        b = toy_sample(SPEC, 1000, seed=11)
        assert a.shape == (1000, 2)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, toy_sample(SPEC, 1000, seed=12))

    def test_accepted_weights(self):
        # rejecting 5% of the upper ridge: 1/6 * 19/20 / (1 - 1/120) for that ridge
        w = SPEC.accepted_weights
        np.testing.assert_allclose(w.sum(), 1.0, rtol=1e-15)
        np.testing.assert_allclose(w[2], (1 / 6) * (19 / 20) / (119 / 120), rtol=1e-15)
        np.testing.assert_allclose(w[0], (1 / 6) / (119 / 120), rtol=1e-15)

    def test_component_frequencies_within_four_sigma(self):
        n = 60_000
        _, comp = toy_sample(SPEC, n, seed=5, return_components=True)
        freq = np.bincount(comp, minlength=6) / n
        w = SPEC.accepted_weights
        np.testing.assert_array_less(np.abs(freq - w), 4 * np.sqrt(w * (1 - w) / n))

    def test_chi_square_against_exact_bin_probabilities(self):
        n = 50_000
        pts = toy_sample(SPEC, n, seed=7)
        edges = np.arange(-12.0, 13.0, 1.0)
        probs = toy_bin_probabilities(SPEC, edges, edges).ravel()
        counts = np.histogram2d(pts[:, 0], pts[:, 1], bins=[edges, edges])[0].ravel()
        assert counts.sum() == n
        np.testing.assert_allclose(probs.sum(), 1.0, atol=1e-12)
        keep = probs * n >= 5
        obs = np.append(counts[keep], counts[~keep].sum())
        exp = np.append(probs[keep], probs[~keep].sum()) * n
        assert chisquare(obs, exp).pvalue > 1e-3

    def test_rejects_nonpositive_n(self):
        with pytest.raises(ValueError):
            toy_sample(SPEC, 0, seed=0)


class TestToyDensity:
    def test_origin_value(self):
        # origin lies on ridges t1 and t4, each contributing w * N(0;0,0.01) / 20
        w0 = SPEC.accepted_weights[0]
        expected = math.log(2 * w0 / 20 / (0.1 * math.sqrt(2 * math.pi)))
        assert toy_log_density(SPEC, np.array([0.0, 0.0])) == pytest.approx(expected, rel=1e-12)

    def test_inside_dropout_only_far_ridges_contribute(self):
        inside = toy_log_density(SPEC, np.array([2.0, 3.0]))
        mirror = toy_log_density(SPEC, np.array([-2.0, 3.0]))
        # the vertical ridge at x = 3 still leaks e^-50 into the window
        assert inside < mirror - 40

    def test_upper_ridge_renormalized_by_reduced_support(self):
        w2 = SPEC.accepted_weights[2]
        g = 1 / (0.1 * math.sqrt(2 * math.pi))
        # at (-6, 3) only the upper ridge matters; support length is 19
        assert toy_log_density(SPEC, np.array([-6.0, 3.0])) == pytest.approx(math.log(w2 * g / 19), rel=1e-9)

    def test_outside_support_is_minus_infinity_free_of_nan(self):
        v = toy_log_density(SPEC, np.array([[50.0, 50.0], [0.0, 0.0]]))
        assert v[0] == -np.inf and np.isfinite(v[1])

    def test_integrates_to_one(self):
        # Each ridge is separable: exact integral is 1 per component; check numerically on
        # a fine grid restricted to the ridges (the density is negligible elsewhere).
        h = 0.005
        total = 0.0
        g = np.arange(-1.0, 1.0, h) + h / 2
        u = np.arange(-10.5, 10.5, h) + h / 2
        for c in SPEC.components:
            uu, gg = np.meshgrid(u + c.bias[c.axis], g + c.bias[1 - c.axis], indexing="ij")
            pts = np.stack([uu, gg], -1) if c.axis == 0 else np.stack([gg, uu], -1)
            total += np.exp(toy_log_density(SPEC, pts.reshape(-1, 2))).sum() * h * h
        # ridges overlap near crossings; subtract the double-counted squares
        overlaps = 0.0
        for cx in (-3.0, 0.0, 3.0):
            for cy in (-3.0, 0.0, 3.0):
                xs = np.arange(cx - 1.0, cx + 1.0, h) + h / 2
                ys = np.arange(cy - 1.0, cy + 1.0, h) + h / 2
                xx, yy = np.meshgrid(xs, ys, indexing="ij")
                overlaps += np.exp(toy_log_density(SPEC, np.stack([xx, yy], -1).reshape(-1, 2))).sum() * h * h
        assert total - overlaps == pytest.approx(1.0, abs=1e-3)

    def test_bin_probabilities_sum_to_one(self):
        edges = np.linspace(-11, 11, 45)
        assert toy_bin_probabilities(SPEC, edges, edges).sum() == pytest.approx(1.0, abs=1e-12)


class TestPointsCsv:
    def test_round_trip_with_header(self, tmp_path):
        pts = np.array([[0.1, -2.5], [1e-12, 3.0]])
        path = tmp_path / "pts.csv"
        write_points_csv(path, pts)
        assert path.read_text().splitlines()[0] == "x1,x2"
        header, back = read_points_csv(path)
        assert header == ["x1", "x2"]
        np.testing.assert_array_equal(back, pts)


def idx_bytes(array: np.ndarray, magic_type: int = 0x08) -> bytes:
    return struct.pack(">I", (magic_type << 8) | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape) \
        + array.astype(np.uint8).tobytes()


def make_mnist(root, n_train=60, n_test=20, seed=0, shape=(28, 28)):
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    write_idx(root / "train-images-idx3-ubyte", rng.integers(0, 256, size=(n_train, *shape)))
    write_idx(root / "train-labels-idx1-ubyte", rng.integers(0, 10, size=n_train))
    write_idx(root / "t10k-images-idx3-ubyte", rng.integers(0, 256, size=(n_test, *shape)))
    write_idx(root / "t10k-labels-idx1-ubyte", rng.integers(0, 10, size=n_test))
    return root


class TestIdx:
    def test_header_of_full_training_file(self):
        header = struct.pack(">IIII", IDX_IMAGES_MAGIC, 60000, 28, 28)
        raw = header + bytes(60000 * 28 * 28)
        arr = parse_idx(raw, IDX_IMAGES_MAGIC)
        assert arr.shape == (60000, 28, 28)
        assert arr.dtype == np.uint8

    def test_labels_magic(self):
        arr = parse_idx(idx_bytes(np.array([3, 1, 4])), IDX_LABELS_MAGIC)
        np.testing.assert_array_equal(arr, [3, 1, 4])

    def test_round_trip_and_gzip(self, tmp_path, rng):
        arr = rng.integers(0, 256, size=(5, 4, 3)).astype(np.uint8)
        write_idx(tmp_path / "a", arr)
        np.testing.assert_array_equal(read_idx(tmp_path / "a"), arr)
        with gzip.open(tmp_path / "a.gz", "wb") as f:
            f.write((tmp_path / "a").read_bytes())
        np.testing.assert_array_equal(read_idx(tmp_path / "a.gz", IDX_IMAGES_MAGIC), arr)

    def test_bad_magic(self):
        raw = idx_bytes(np.zeros((2, 2, 2)))
        with pytest.raises(IngestionError, match="magic"):
            parse_idx(raw, IDX_LABELS_MAGIC)
        with pytest.raises(IngestionError, match="magic"):
            parse_idx(b"\x12\x34" + raw[2:])

    def test_truncated_and_trailing(self):
        raw = idx_bytes(np.zeros((3, 2, 2)))
        with pytest.raises(IngestionError, match="truncated"):
            parse_idx(raw[:-1])
        with pytest.raises(IngestionError, match="trailing"):
            parse_idx(raw + b"\x00")
        with pytest.raises(IngestionError):
            parse_idx(raw[:2])


class TestMnistLoad:
    def test_pixel_scaling_and_splits(self, tmp_path):
        root = make_mnist(tmp_path / "m")
        ds = mnist_load(root, validation_size=10, seed=1)
        assert ds.train.shape == (50, 784) and ds.validation.shape == (10, 784) and ds.test.shape == (20, 784)
        raw = read_idx(root / "t10k-images-idx3-ubyte").reshape(20, -1)
        np.testing.assert_allclose(ds.test, raw / 255.0, rtol=1e-15)
        assert ds.train.min() >= 0 and ds.train.max() <= 1
        assert ds.image_shape == (28, 28)

    def test_extreme_pixels(self, tmp_path):
        root = make_mnist(tmp_path / "m", n_train=3, n_test=2)
        write_idx(root / "t10k-images-idx3-ubyte", np.stack([np.zeros((28, 28)), np.full((28, 28), 255)]))
        ds = mnist_load(root, validation_size=1)
        assert ds.test[0].max() == 0.0 and ds.test[1].min() == 1.0

    def test_count_mismatch(self, tmp_path):
        root = make_mnist(tmp_path / "m")
        write_idx(root / "t10k-labels-idx1-ubyte", np.zeros(19))
        with pytest.raises(IngestionError, match="labels"):
            mnist_load(root, validation_size=10)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            mnist_load(tmp_path, validation_size=10)

    def test_subsampling(self, tmp_path):
        ds = mnist_load(make_mnist(tmp_path / "m"), validation_size=10, train_size=7, test_size=4)
        assert len(ds.train) == 7 and len(ds.test) == 4

    def test_splits_are_disjoint(self, tmp_path):
        root = tmp_path / "m"
        root.mkdir()
        # distinct images so row identity is recoverable
        imgs = np.zeros((40, 28, 28), dtype=np.uint8)
        imgs.reshape(40, -1)[np.arange(40), np.arange(40)] = 255
        write_idx(root / "train-images-idx3-ubyte", imgs)
        write_idx(root / "train-labels-idx1-ubyte", np.zeros(40))
        write_idx(root / "t10k-images-idx3-ubyte", imgs[:2])
        write_idx(root / "t10k-labels-idx1-ubyte", np.zeros(2))
        ds = mnist_load(root, validation_size=15)
        ids_tr = set(ds.train.argmax(1).tolist())
        ids_va = set(ds.validation.argmax(1).tolist())
        assert not ids_tr & ids_va and len(ids_tr | ids_va) == 40


class TestImageFolder:
    def test_load(self, tmp_path, rng):
        for i in range(6):
            write_pgm(tmp_path / f"{i:02d}.pgm", rng.integers(0, 256, size=(4, 3)))
        assert read_pgm(tmp_path / "00.pgm").shape == (4, 3)
        ds = image_folder_load(tmp_path, (4, 3), validation_size=2, test_size=1)
        assert (len(ds.train), len(ds.validation), len(ds.test)) == (3, 2, 1)
        assert ds.train.shape[1] == 12

    def test_wrong_shape(self, tmp_path):
        write_pgm(tmp_path / "a.pgm", np.zeros((5, 5)))
        with pytest.raises(IngestionError, match="shape"):
            image_folder_load(tmp_path, (4, 4), 0, 0)

    def test_empty(self, tmp_path):
        with pytest.raises(IngestionError):
            image_folder_load(tmp_path, (4, 4), 0, 0)


class TestBatching:
    def test_covers_every_row_once_with_short_tail(self):
        data = np.arange(10).reshape(10, 1)
        batches = list(batch_iter(data, 4, seed=0))
        assert [len(b) for b in batches] == [4, 4, 2]
        np.testing.assert_array_equal(np.sort(np.concatenate(batches)[:, 0]), np.arange(10))

    def test_seeded_and_epoch_dependent(self):
        data = np.arange(20).reshape(20, 1)
        a = np.concatenate(list(batch_iter(data, 5, seed=1, epoch=0)))
        b = np.concatenate(list(batch_iter(data, 5, seed=1, epoch=0)))
        c = np.concatenate(list(batch_iter(data, 5, seed=1, epoch=1)))
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_bad_batch_size(self):
        with pytest.raises(ValueError):
            next(batch_iter(np.zeros((3, 1)), 0, seed=0))

    def test_split_rows_disjoint(self):
        data = np.arange(30).reshape(30, 1)
        tr, va, te = split_rows(data, 5, 7, seed=2)
        assert (len(tr), len(va), len(te)) == (18, 5, 7)
        assert len(set(np.concatenate([tr, va, te])[:, 0])) == 30
        with pytest.raises(ValueError):
            split_rows(data, 20, 11, seed=0)


class TestNormalization:
    def test_power_of_two_round_trip_is_exact(self, rng):
        norm = Normalization(scale=2.0, offset=-1.0)
        x = rng.random(1000)
        np.testing.assert_array_equal(norm.denormalize(norm.normalize(x)), x)

    def test_pixel_round_trip(self):
        norm = Normalization(scale=1 / 255)
        pixels = np.arange(256)
        np.testing.assert_array_equal(np.rint(norm.denormalize(norm.normalize(pixels))), pixels)
        np.testing.assert_allclose(norm.denormalize(norm.normalize(pixels)), pixels, rtol=1e-14)
