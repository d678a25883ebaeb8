import numpy as np
import pytest
from scipy.stats import chisquare

from hrtfnp.sphere import approx_uniform_grid
from hrtfnp.store import AlignedSet, load_container
from hrtfnp.tasks import (
    SamplerConfig,
    TaskStream,
    dump_task,
    mirror_task,
    sample_task,
    task_rng,
    uniform_sphere,
)


def make_set(rng, p=300, bins=5, subject="s1"):
    pos = approx_uniform_grid(p)
    spectra = rng.standard_normal((p, 2, bins)) + 1j * rng.standard_normal((p, 2, bins))
    return AlignedSet(subject, pos, np.zeros((p, 2)), spectra, 33075.0, 2 * (bins - 1))


def test_zero_context_task():
    rng = np.random.default_rng(0)
    aligned = make_set(rng)
    cfg = SamplerConfig(max_context=0, seed=1)
    task = sample_task(aligned, cfg, np.random.default_rng(1), train_mode=False)
    assert task.context_size == 0
    assert task.target_size == len(aligned.positions)


def test_eval_mode_is_deterministic():
    rng = np.random.default_rng(2)
    aligned = make_set(rng)
    cfg = SamplerConfig(seed=3)
    t1 = sample_task(aligned, cfg, np.random.default_rng(77), train_mode=False)
    t2 = sample_task(aligned, cfg, np.random.default_rng(77), train_mode=False)
    assert np.array_equal(t1.context_indices, t2.context_indices)
    assert np.array_equal(t1.context_locations, t2.context_locations)
    assert np.array_equal(t1.target_features, t2.target_features)
    assert not t1.mirrored


def test_partition_and_location_exactness():
    rng = np.random.default_rng(4)
    aligned = make_set(rng)
    cfg = SamplerConfig(seed=5)
    for step in range(50):
        task = sample_task(aligned, cfg, task_rng(5, 0, step), train_mode=True)
        combined = np.concatenate([task.context_indices, task.target_indices])
        assert len(np.unique(combined)) == len(aligned.positions)
        assert task.context_size + task.target_size == len(aligned.positions)
        expect_ctx = aligned.positions[task.context_indices]
        expect_feat = aligned.spectra[task.context_indices]
        if task.mirrored:
            expect_ctx = expect_ctx * np.array([1.0, -1.0, 1.0])
            expect_feat = expect_feat[:, ::-1]
        assert np.array_equal(task.context_locations, expect_ctx)
        assert np.array_equal(task.context_features, expect_feat)
        assert task.context_size <= task.requested_context


def test_context_size_histogram_uniform():
    # chi-square over requested sizes 0..100 across 10^4 sampled tasks
    rng = np.random.default_rng(6)
    pos = approx_uniform_grid(1730)
    spectra = np.zeros((1730, 2, 3), complex)
    aligned = AlignedSet("s", pos, np.zeros((1730, 2)), spectra, 33075.0, 4)
    cfg = SamplerConfig(seed=7)
    counts = np.zeros(101, dtype=int)
    for step in range(10_000):
        task = sample_task(aligned, cfg, task_rng(7, 0, step), train_mode=True)
        counts[task.requested_context] += 1
        assert task.context_size + task.target_size == 1730
    assert chisquare(counts).pvalue > 0.01


def test_mirror_task_involution_and_swap():
    rng = np.random.default_rng(8)
    aligned = make_set(rng)
    task = sample_task(aligned, SamplerConfig(seed=9), task_rng(9, 0, 0), False)
    twice = mirror_task(mirror_task(task))
    assert np.array_equal(twice.context_locations, task.context_locations)
    assert np.array_equal(twice.context_features, task.context_features)
    assert np.array_equal(twice.target_features, task.target_features)
    assert twice.mirrored == task.mirrored

    mirrored = mirror_task(task)
    assert np.array_equal(
        mirrored.target_features[:, 0], task.target_features[:, 1]
    )
    assert np.array_equal(
        mirrored.target_locations, task.target_locations * [1.0, -1.0, 1.0]
    )


def test_mirror_fixes_median_plane_points():
    loc = np.array([[1.0, 0.0, 0.0]])
    feats = np.arange(4, dtype=float).reshape(1, 2, 2) + 0j
    from hrtfnp.tasks import Task

    task = Task(loc, feats, loc.copy(), feats.copy(), np.array([0]), np.array([0]), 1)
    m = mirror_task(task)
    assert np.array_equal(m.context_locations, loc)
    assert np.array_equal(m.context_features[:, 0], feats[:, 1])


def test_uniform_sphere_statistics():
    pts = uniform_sphere(np.random.default_rng(10), 20000)
    assert np.abs(np.linalg.norm(pts, axis=1) - 1.0).max() < 1e-12
    assert np.linalg.norm(pts.mean(axis=0)) < 0.02


def test_stream_reproducible_per_step():
    rng = np.random.default_rng(11)
    subjects = [make_set(rng, subject=f"s{i}") for i in range(3)]
    stream = TaskStream(subjects, SamplerConfig(seed=12), stream_id=4)
    a = stream.task(17)
    b = stream.task(17)
    assert np.array_equal(a.context_indices, b.context_indices)
    assert np.array_equal(a.target_features, b.target_features)
    # different steps differ (almost surely)
    c = stream.task(18)
    assert a.requested_context != c.requested_context or not np.array_equal(
        a.context_indices, c.context_indices
    )


def test_eval_stream_ignores_augmentation():
    rng = np.random.default_rng(13)
    subjects = [make_set(rng)]
    stream = TaskStream(
        subjects, SamplerConfig(p_irregular=1.0, p_mirror=1.0, seed=14), train_mode=False
    )
    for step in range(20):
        task = stream.task(step)
        assert not task.mirrored
        # locations are exactly dataset positions (no iid-uniform probes leak)
        assert np.array_equal(
            task.context_locations, subjects[0].positions[task.context_indices]
        )


def test_dump_task(tmp_path):
    rng = np.random.default_rng(15)
    aligned = make_set(rng, p=40)
    task = sample_task(aligned, SamplerConfig(seed=16), task_rng(16, 0, 0), False)
    path = tmp_path / "task.hrtfc"
    dump_task(path, task, aligned.fs, aligned.n_taps)
    loaded = load_container(path)
    assert len(loaded.positions) == task.context_size + task.target_size
    sidecar = path.with_suffix(".hrtfc.json").read_text()
    assert "context_indices" in sidecar


def test_small_set_never_empties_target():
    rng = np.random.default_rng(17)
    aligned = make_set(rng, p=12)
    cfg = SamplerConfig(max_context=100, seed=18)
    for step in range(200):
        task = sample_task(aligned, cfg, task_rng(18, 0, step), train_mode=True)
        assert task.target_size >= 1


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(p_irregular=1.5)
    with pytest.raises(ValueError):
        SamplerConfig(max_context=-1)
