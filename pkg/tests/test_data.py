import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satseg import data
from satseg.config import ConfigError
from satseg.data import PointCloud, SceneSpec


def small_spec(**kw):
    return SceneSpec(density=300.0, **kw)


def test_floor_only_scene():
    spec = small_spec(walls=False, ceiling=False, tables=(0, 0), boards=(0, 0), chairs=(0, 0), clutter=(0, 0))
    cloud = data.generate_scene(spec, seed=3)
    assert np.all(cloud.labels == data.CLASS_NAMES.index("floor"))
    assert np.max(np.abs(cloud.coords[:, 2])) < 6 * spec.noise
    assert np.all(cloud.size_class == 2)


def test_generator_is_deterministic():
    a = data.generate_scene(small_spec(), seed=11)
    b = data.generate_scene(small_spec(), seed=11)
    for f in ("coords", "colors", "labels", "size_class"):
        assert getattr(a, f).tobytes() == getattr(b, f).tobytes()
    c = data.generate_scene(small_spec(), seed=12)
    assert len(c) != len(a) or not np.array_equal(c.coords, a.coords)


def test_default_scenes_cover_classes_with_wide_spread():
    present = np.zeros(len(data.CLASS_NAMES), dtype=int)
    totals = np.zeros(len(data.CLASS_NAMES), dtype=np.int64)
    for seed in range(10):
        cloud = data.generate_scene(SceneSpec(), seed)
        counts = np.bincount(cloud.labels, minlength=len(data.CLASS_NAMES))
        present += counts > 0
        totals += counts
    assert np.all(present >= 8)
    assert totals.max() >= 10 * totals.min()


def test_desk_scenes_are_capped():
    cloud = data.generate_scene(data.desk_spec(), seed=0)
    assert len(cloud) <= 2048
    assert np.unique(cloud.labels).size == len(data.CLASS_NAMES)


def test_density_scaling_keeps_layout():
    lo = data.generate_scene(small_spec(), seed=5)
    hi = data.generate_scene(small_spec().replace(density=600.0), seed=5)
    assert 1.8 < len(hi) / len(lo) < 2.2
    assert np.allclose(lo.coords.min(axis=0), hi.coords.min(axis=0), atol=0.05)


@pytest.mark.parametrize("bad", [dict(room=(0.2, 3.0, 2.5)), dict(density=0.0), dict(chairs=(3, 1))])
def test_degenerate_spec(bad):
    with pytest.raises(ConfigError):
        data.generate_scene(SceneSpec(**bad), 0)


def random_cloud(seed, n=50, k=7):
    rng = np.random.default_rng(seed)
    return PointCloud(rng.normal(scale=3, size=(n, 3)), rng.random((n, 3)), rng.integers(0, k, n), k)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 80))
def test_round_trip(tmp_path_factory, seed, n):
    cloud = random_cloud(seed, n)
    path = tmp_path_factory.mktemp("rt") / "c.satpc"
    data.write_cloud(path, cloud)
    back = data.read_cloud(path)
    assert np.max(np.abs(back.coords - cloud.coords)) <= 1e-6
    assert np.max(np.abs(back.colors - cloud.colors)) <= 1e-6
    assert np.array_equal(back.labels, cloud.labels)
    assert back.num_classes == cloud.num_classes


def test_header_format(tmp_path):
    data.write_cloud(tmp_path / "a.satpc", random_cloud(0, n=4))
    lines = (tmp_path / "a.satpc").read_text().splitlines()
    assert lines[0] == "SATPC1 4 3 7"
    assert len(lines) == 5 and len(lines[1].split()) == 7


def test_empty_file(tmp_path):
    (tmp_path / "e.satpc").write_text("")
    with pytest.raises(data.CloudFormatError, match="line 1"):
        data.read_cloud(tmp_path / "e.satpc")


def test_truncated_row_names_line(tmp_path):
    p = tmp_path / "t.satpc"
    p.write_text("SATPC1 3 3 7\n0 0 0 .1 .2 .3 1\n1 1 1 .1 .2\n2 2 2 .1 .2 .3 0\n")
    with pytest.raises(data.CloudFormatError, match="line 3"):
        data.read_cloud(p)


def test_missing_rows(tmp_path):
    p = tmp_path / "m.satpc"
    p.write_text("SATPC1 3 3 7\n0 0 0 .1 .2 .3 1\n")
    with pytest.raises(data.CloudFormatError, match="line 3"):
        data.read_cloud(p)


def test_bad_header(tmp_path):
    p = tmp_path / "h.satpc"
    p.write_text("PCD 1 3 7\n0 0 0 0 0 0 0\n")
    with pytest.raises(data.CloudFormatError, match="line 1"):
        data.read_cloud(p)


def test_label_out_of_range(tmp_path):
    p = tmp_path / "l.satpc"
    p.write_text("SATPC1 2 3 7\n0 0 0 .1 .2 .3 1\n1 1 1 .1 .2 .3 7\n")
    with pytest.raises(data.CloudValidationError, match="line 3"):
        data.read_cloud(p)


def test_read_dir_sorted(tmp_path):
    for i in (2, 0, 1):
        data.write_cloud(tmp_path / f"s{i}.satpc", random_cloud(i, n=i + 1))
    assert [len(c) for c in data.read_dir(tmp_path)] == [1, 2, 3]


def test_batches_pass_small_clouds_through():
    clouds = [random_cloud(i, n=20) for i in range(3)]
    out = data.make_batches(clouds, 64, seed=0, shuffle=False)
    assert all(a is b for a, b in zip(out, clouds))


def test_batches_deterministic():
    clouds = [random_cloud(i, n=200) for i in range(4)]
    a = data.make_batches(clouds, 50, seed=9, epoch=2)
    b = data.make_batches(clouds, 50, seed=9, epoch=2)
    assert all(np.array_equal(x.coords, y.coords) for x, y in zip(a, b))
    c = data.make_batches(clouds, 50, seed=9, epoch=3)
    assert not all(np.array_equal(x.coords, y.coords) for x, y in zip(a, c))


def test_subsample_unique_indices():
    rng = np.random.default_rng(0)
    n = 10_000
    # encode the original index in the x coordinate so picks can be audited
    cloud = PointCloud(np.stack([np.arange(n), rng.random(n), rng.random(n)], axis=1), rng.random((n, 3)),
                       rng.integers(0, 7, n))
    (out,) = data.make_batches([cloud], 1234, seed=4)
    picked = out.coords[:, 0].astype(int)
    assert len(out) == 1234
    assert np.unique(picked).size == 1234
    assert np.array_equal(out.labels, cloud.labels[picked])


def test_point_cloud_validation():
    with pytest.raises(data.CloudValidationError):
        PointCloud(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=int))
    with pytest.raises(data.CloudValidationError):
        PointCloud(np.zeros((2, 3)), np.zeros((2, 3)), [0, 9])
    with pytest.raises(data.CloudValidationError):
        PointCloud([[np.inf, 0, 0]], [[0, 0, 0]], [0])
