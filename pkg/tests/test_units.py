import numpy as np
import pytest

from unitg2p.config import FramingConfig, ToyLanguageSpec
from unitg2p.dsp import apply_cmvn, compute_cmvn, compute_mfcc
from unitg2p.eval import nmi
from unitg2p.exceptions import ContainerFormatError, DomainError
from unitg2p.synthlang import generate_corpus
from unitg2p.units import (
    ClusterModel,
    UnitSequence,
    assign_units,
    collapse_runs,
    encoder_layer_tag,
    expand_runs,
    kmeans_fit,
    load_cluster_model,
    parse_source_tag,
    run_lengths,
    save_cluster_model,
)


def test_kmeans_exact_cover():
    corners = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.float64)
    model = kmeans_fit(corners, 4, seed=0)
    assert sorted(map(tuple, model.centroids)) == sorted(map(tuple, corners))
    assert model.inertia == 0.0


def test_kmeans_recovers_two_blobs():
    rng = np.random.default_rng(0)
    a = rng.normal(0.0, 0.1, size=(200, 2))
    b = rng.normal(10.0, 0.1, size=(200, 2))
    model = kmeans_fit(np.vstack([a, b]), 2, seed=3)
    centroids = model.centroids[np.argsort(model.centroids[:, 0])]
    np.testing.assert_allclose(centroids[0], a.mean(axis=0), atol=0.05)
    np.testing.assert_allclose(centroids[1], b.mean(axis=0), atol=0.05)


def test_kmeans_needs_k_frames():
    with pytest.raises(DomainError):
        kmeans_fit(np.zeros((3, 2)), 5, seed=0)


def test_kmeans_rejects_non_finite():
    frames = np.ones((10, 2))
    frames[4, 1] = np.inf
    with pytest.raises(DomainError):
        kmeans_fit(frames, 2, seed=0)


def test_lloyd_inertia_never_increases():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        frames = rng.standard_normal((60, 3)) * rng.uniform(0.5, 3.0)
        history = kmeans_fit(frames, 4, seed=seed, rel_tol=0.0, max_iters=30).inertia_history
        assert all(b <= a * (1 + 1e-12) for a, b in zip(history, history[1:]))


def test_kmeans_is_seeded():
    frames = np.random.default_rng(1).standard_normal((100, 4))
    a, b = kmeans_fit(frames, 5, seed=9), kmeans_fit(frames, 5, seed=9)
    assert np.array_equal(a.centroids, b.centroids)


def test_kmeans_subsamples_to_cap():
    frames = np.random.default_rng(2).standard_normal((500, 2))
    model = kmeans_fit(frames, 3, seed=0, max_frames=100)
    assert model.k == 3


def test_assign_exact_centroid():
    centroids = np.arange(12, dtype=np.float64).reshape(6, 2) * 10
    model = ClusterModel(centroids, "mfcc", 0, 0.0)
    assert assign_units(centroids[3:4], model).tolist() == [3]


def test_assign_tie_goes_to_lowest_index():
    centroids = np.array([[50, 50], [60, 60], [1, 0], [70, 70], [80, 80], [-1, 0]], dtype=np.float64)
    model = ClusterModel(centroids, "mfcc", 0, 0.0)
    assert assign_units(np.zeros((1, 2)), model).tolist() == [2]


def test_assign_matches_brute_force():
    rng = np.random.default_rng(3)
    centroids = rng.standard_normal((7, 5))
    frames = rng.standard_normal((100, 5))
    model = ClusterModel(centroids, "mfcc", 0, 0.0)
    expected = [min(range(7), key=lambda c: float(np.sum((f - centroids[c]) ** 2))) for f in frames]
    assert assign_units(frames, model).tolist() == expected


def test_assign_dimension_mismatch():
    model = ClusterModel(np.zeros((2, 3)), "mfcc", 0, 0.0)
    with pytest.raises(DomainError):
        assign_units(np.zeros((4, 2)), model)


def test_collapse_runs():
    assert collapse_runs(UnitSequence([7, 7, 7, 2, 2, 7], 10)).tolist() == [7, 2, 7]
    assert collapse_runs(UnitSequence([], 10)).tolist() == []


def test_collapse_then_expand_restores():
    rng = np.random.default_rng(4)
    for _ in range(100):
        z = UnitSequence(rng.integers(0, 3, size=int(rng.integers(0, 30))), 3)
        collapsed = collapse_runs(z)
        assert not np.any(collapsed.units[1:] == collapsed.units[:-1])
        assert np.array_equal(expand_runs(collapsed, run_lengths(z)).units, z.units)


def test_unit_sequence_range():
    with pytest.raises(DomainError):
        UnitSequence([0, 5], 5)


def test_source_tags():
    assert parse_source_tag("mfcc") is None
    assert parse_source_tag(encoder_layer_tag(8)) == 8
    with pytest.raises(DomainError):
        parse_source_tag("layer8")


def test_cluster_model_round_trip(tmp_path):
    frames = np.random.default_rng(5).standard_normal((80, 6))
    model = kmeans_fit(frames, 4, seed=1, source_tag=encoder_layer_tag(2))
    save_cluster_model(tmp_path / "c.ugpk", model)
    back = load_cluster_model(tmp_path / "c.ugpk")
    assert back.source_tag == "encoder_layer(2)"
    assert back.seed == 1
    assert np.array_equal(back.centroids, model.centroids)
    assert np.array_equal(assign_units(frames, back).units, assign_units(frames, model).units)


def test_cluster_model_rejects_truncation(tmp_path):
    model = kmeans_fit(np.random.default_rng(6).standard_normal((20, 3)), 2, seed=0)
    path = tmp_path / "c.ugpk"
    save_cluster_model(path, model)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ContainerFormatError):
        load_cluster_model(path)


def test_cluster_model_keeps_full_width_seed(tmp_path):
    frames = np.random.default_rng(7).standard_normal((30, 3))
    model = kmeans_fit(frames, 3, seed=2**64 - 1)
    save_cluster_model(tmp_path / "c.ugpk", model)
    assert load_cluster_model(tmp_path / "c.ugpk").seed == 2**64 - 1
    with pytest.raises(DomainError):
        kmeans_fit(frames, 3, seed=2**64)
    with pytest.raises(DomainError):
        kmeans_fit(frames, 3, seed=-1)


def test_kmeans_with_fixed_init_ignores_row_order():
    rng = np.random.default_rng(8)
    centers = np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]])
    frames = np.concatenate([c + rng.standard_normal((40, 2)) for c in centers])
    init = centers + 0.5
    perm = rng.permutation(len(frames))

    model = kmeans_fit(frames, 3, seed=0, init_centroids=init)
    shuffled = kmeans_fit(frames[perm], 3, seed=0, init_centroids=init)
    np.testing.assert_allclose(shuffled.centroids, model.centroids, atol=1e-5)
    labels = assign_units(frames, model).units
    assert np.array_equal(assign_units(frames[perm], shuffled).units, labels[perm])


def test_inertia_matches_assignment():
    rng = np.random.default_rng(9)
    for k in (1, 3, 6):
        frames = rng.standard_normal((200, 4))
        model = kmeans_fit(frames, k, seed=k)
        z = assign_units(frames, model).units
        recomputed = float(np.sum((frames - model.centroids[z]) ** 2))
        assert model.inertia == pytest.approx(recomputed, rel=1e-9)


@pytest.mark.slow
def test_mfcc_clusters_recover_toy_phonemes():
    spec = ToyLanguageSpec(seed=11)
    framing = FramingConfig()
    corpus = generate_corpus(spec, 300, 5, framing)
    feats = [compute_mfcc(u.audio, u.sample_rate, framing) for u in corpus]
    stats = compute_cmvn(feats)
    frames = np.concatenate([apply_cmvn(f, stats).data for f in feats])
    gold = np.concatenate([u.gold_frame_labels for u in corpus])
    model = kmeans_fit(frames, spec.inventory_size, seed=0)
    assert nmi(assign_units(frames, model).units, gold) >= 0.8
