import numpy as np
import pytest

from gamla.datasets import (
    Hyperrectangle,
    NoiseSpec,
    PointCloud,
    add_noise,
    gen_cylinder,
    gen_quadric,
    gen_quadric_with_hole,
    gen_swiss_roll,
    load_csv,
    quadric_height,
    save_csv,
    split,
)
from gamla.errors import DimensionMismatchError, SchemaError


class TestQuadric:
    def test_defining_equation_spot_values(self):
        assert quadric_height(0.0, 0.0) == 0.0
        assert quadric_height(1.0, 1.0) == pytest.approx(-0.2 + 0.5 + 0.2)

    def test_points_satisfy_equation_exactly(self):
        cloud = gen_quadric(5000, seed=1)
        x1, x2, x3 = cloud.points.T
        assert np.abs(x3 - quadric_height(x1, x2)).max() <= 1e-12
        assert x1.min() >= -1.0 and x1.max() <= 1.5
        assert x2.min() >= -1.0 and x2.max() <= 1.5

    def test_determinism(self):
        a = gen_quadric(100, seed=7)
        b = gen_quadric(100, seed=7)
        assert a.points.tobytes() == b.points.tobytes()
        c = gen_quadric(100, seed=8)
        assert a.points.tobytes() != c.points.tobytes()

    def test_paper_scale_count(self):
        cloud = gen_quadric(40000, seed=2)
        assert len(cloud) == 40000


class TestQuadricWithHole:
    def test_zero_radius_matches_plain_generator(self):
        a = gen_quadric(500, seed=3)
        b = gen_quadric_with_hole(500, seed=3, hole_radius=0.0)
        assert a.points.tobytes() == b.points.tobytes()

    def test_all_points_outside_hole(self):
        center, radius = (0.25, 0.25), 0.5
        cloud = gen_quadric_with_hole(2000, seed=4, hole_center=center, hole_radius=radius)
        d = np.hypot(cloud.points[:, 0] - center[0], cloud.points[:, 1] - center[1])
        assert len(cloud) == 2000
        assert d.min() >= radius

    def test_hole_covering_domain_rejected(self):
        with pytest.raises(ValueError):
            gen_quadric_with_hole(10, seed=5, hole_center=(0.25, 0.25), hole_radius=10.0)


class TestCylinder:
    def test_radial_residual_is_zero(self):
        cloud = gen_cylinder(5000, seed=6)
        x1, x2, x3 = cloud.points.T
        assert np.abs((x1 - 0.4) ** 2 + x2**2 - 0.16).max() <= 1e-12
        assert np.abs(x3).max() <= 0.4

    def test_parametrization_endpoints(self):
        # theta=0 gives (0.8, 0, l); theta=pi gives (0, ~0, l).
        assert 0.4 * np.cos(0.0) + 0.4 == pytest.approx(0.8)
        assert 0.4 * np.cos(np.pi) + 0.4 == pytest.approx(0.0, abs=1e-15)
        assert 0.4 * np.sin(np.pi) == pytest.approx(0.0, abs=1e-15)

    def test_three_quarters_only(self):
        cloud = gen_cylinder(20000, seed=7)
        x1, x2 = cloud.points[:, 0], cloud.points[:, 1]
        angles = np.arctan2(x2, x1 - 0.4)
        # The quarter theta in (1.5*pi, 2*pi) maps to angles in (-pi/2, 0).
        in_gap = (angles > -np.pi / 2) & (angles < 0)
        assert not in_gap.any()


class TestSwissRoll:
    def test_spot_value_at_inner_edge(self):
        # r=0 means t=1.5*pi: x1 = 0.04*t*cos(t) ~ 0, x3 = 0.04*t*sin(t) ~ -0.1885.
        t = 1.5 * np.pi
        assert 0.04 * t * np.cos(t) == pytest.approx(0.0, abs=1e-15)
        assert 0.04 * t * np.sin(t) == pytest.approx(-0.1884955592153876, abs=1e-15)

    def test_coordinate_ranges(self):
        cloud = gen_swiss_roll(20000, seed=8)
        x1, x2, x3 = cloud.points.T
        assert x2.min() > 0.0 and x2.max() < 0.8
        radius = np.hypot(x1, x3)
        assert radius.min() > 0.04 * 1.5 * np.pi - 1e-9
        assert radius.max() < 0.04 * 4.5 * np.pi + 1e-9


class TestNoise:
    def test_zero_sigma_is_identity(self):
        cloud = gen_quadric(100, seed=9)
        noisy = add_noise(cloud, NoiseSpec(0.0), seed=10)
        assert np.array_equal(noisy.points, cloud.points)

    def test_noise_statistics(self):
        cloud = PointCloud(np.zeros((200_000, 2)))
        sigma = 0.05
        noisy = add_noise(cloud, NoiseSpec(sigma), seed=11)
        disp = noisy.points - cloud.points
        n = len(cloud)
        # Mean displacement ~ N(0, sigma^2/n): check within 3 standard errors.
        assert np.abs(disp.mean(axis=0)).max() <= 3 * sigma / np.sqrt(n)
        assert np.abs(disp.std(axis=0) - sigma).max() <= 3 * sigma / np.sqrt(2 * n)

    def test_different_seeds_differ(self):
        cloud = gen_quadric(50, seed=12)
        a = add_noise(cloud, NoiseSpec(0.1), seed=13)
        b = add_noise(cloud, NoiseSpec(0.1), seed=14)
        assert not np.array_equal(a.points, b.points)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            NoiseSpec(-0.1)


class TestSplit:
    def test_zero_fraction_empty_test(self):
        cloud = gen_quadric(100, seed=15)
        train, test = split(cloud, 0.0, seed=16)
        assert len(train) == 100 and len(test) == 0

    def test_partition_properties(self):
        cloud = PointCloud(np.arange(50, dtype=float).reshape(-1, 1))
        train, test = split(cloud, 0.2, seed=17)
        assert len(train) + len(test) == 50
        assert len(test) == 10
        joined = np.sort(np.concatenate([train.points[:, 0], test.points[:, 0]]))
        assert np.array_equal(joined, np.arange(50, dtype=float))


class TestCsv:
    def test_round_trip_is_value_exact(self, tmp_path):
        cloud = gen_swiss_roll(64, seed=18)
        path = tmp_path / "cloud.csv"
        save_csv(cloud, path)
        loaded = load_csv(path)
        assert loaded.points.tobytes() == cloud.points.tobytes()
        assert loaded.labels is None

    def test_labels_survive(self, tmp_path):
        cloud = PointCloud(np.eye(3), labels=["a", "b", "c"])
        path = tmp_path / "labels.csv"
        save_csv(cloud, path)
        loaded = load_csv(path)
        assert loaded.labels == ["a", "b", "c"]

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(SchemaError):
            load_csv(path)

    def test_headerless_mode(self, tmp_path):
        path = tmp_path / "raw.csv"
        path.write_text("1.0,2.0,3.0\n4.0,5.0,6.0\n")
        cloud = load_csv(path, header=False)
        assert cloud.dim == 3 and len(cloud) == 2

    def test_ragged_rows_rejected(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("x1,x2\n1.0,2.0\n3.0\n")
        with pytest.raises(SchemaError):
            load_csv(path)

    def test_non_numeric_cell_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x1,x2\n1.0,oops\n")
        with pytest.raises(SchemaError):
            load_csv(path)


class TestHyperrectangle:
    def test_sampling_is_deterministic_and_inside(self):
        box = Hyperrectangle(np.zeros(3), np.ones(3))
        a = box.sample(1, seed=19)
        b = box.sample(1, seed=19)
        assert np.array_equal(a, b)
        big = box.sample(100_000, seed=20)
        assert big.min() >= 0.0 and big.max() <= 1.0

    def test_sample_mean_matches_uniform_clt(self):
        box = Hyperrectangle(np.array([-1.0, 2.0]), np.array([1.0, 6.0]))
        n = 100_000
        X = box.sample(n, seed=21)
        center = np.array([0.0, 4.0])
        widths = np.array([2.0, 4.0])
        se = widths / np.sqrt(12.0 * n)
        assert np.all(np.abs(X.mean(axis=0) - center) <= 3 * se)

    def test_degenerate_box_rejected(self):
        with pytest.raises(ValueError):
            Hyperrectangle(np.array([0.0, 1.0]), np.array([1.0, 1.0]))

    def test_from_points_margin(self):
        X = np.array([[0.0, 10.0], [1.0, 20.0]])
        box = Hyperrectangle.from_points(X, margin=0.25)
        assert np.allclose(box.low, [-0.25, 7.5])
        assert np.allclose(box.high, [1.25, 22.5])


class TestPointCloudInvariants:
    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            PointCloud(np.array([[1.0, np.nan]]))

    def test_label_count_must_match(self):
        with pytest.raises(DimensionMismatchError):
            PointCloud(np.eye(2), labels=["only-one"])
