import json

import numpy as np
import pytest

from fsproto import episodes as ep
from fsproto import serialize
from fsproto.encoder import DEFAULT_TEMPLATE, LabelTemplate
from fsproto.errors import DataError, EpisodeError, FormatError, SplitError


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")


def make_dataset(tmp_path, classes, per_class, name="data.jsonl"):
    rows = []
    for c in range(classes):
        for i in range(per_class):
            rows.append({"text": f"class{c} sample {i} filler words", "label": f"c{c}"})
    path = tmp_path / name
    write_jsonl(path, rows)
    return path


def make_splits(tmp_path, train, valid, test, name="splits.json"):
    path = tmp_path / name
    path.write_text(json.dumps({"train": train, "valid": valid, "test": test}))
    return path


def test_load_dataset_two_lines(tmp_path):
    path = tmp_path / "tiny.jsonl"
    write_jsonl(path, [{"text": "a", "label": "x"}, {"text": "b", "label": "y"}])
    ds = ep.load_dataset(path)
    assert len(ds) == 2
    assert ds.label_map == {"x": 0, "y": 1}
    assert [inst.row_index for inst in ds.instances] == [0, 1]


def test_load_dataset_order_preserving_and_stats(tmp_path):
    path = make_dataset(tmp_path, classes=3, per_class=4)
    ds = ep.load_dataset(path)
    assert [inst.row_index for inst in ds.instances] == list(range(12))
    stats = ds.stats()
    assert stats["samples"] == 12
    assert stats["classes"] == 3
    assert stats["instances_per_class_min"] == stats["instances_per_class_max"] == 4
    assert stats["mean_token_length"] == 5.0


def test_load_dataset_reuters_shape(tmp_path):
    # 31 classes x 20 instances = 620 samples
    path = make_dataset(tmp_path, classes=31, per_class=20)
    ds = ep.load_dataset(path)
    stats = ds.stats()
    assert stats["samples"] == 620
    assert stats["classes"] == 31
    assert stats["instances_per_class_min"] == 20


def test_load_dataset_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"text": "ok", "label": "x"}\nnot json\n', encoding="utf-8")
    with pytest.raises(DataError, match=":2"):
        ep.load_dataset(path)

    path2 = tmp_path / "missing.jsonl"
    path2.write_text('{"text": "no label here"}\n', encoding="utf-8")
    with pytest.raises(DataError, match="label"):
        ep.load_dataset(path2)


def test_load_splits_valid(tmp_path):
    data = make_dataset(tmp_path, classes=6, per_class=3)
    ds = ep.load_dataset(data)
    splits_path = make_splits(tmp_path, ["c0", "c1", "c2"], ["c3"], ["c4", "c5"])
    splits = ep.load_splits(splits_path, ds)
    assert splits.counts() == {"train": 3, "valid": 1, "test": 2}


def test_load_splits_rejects_overlap_and_missing(tmp_path):
    data = make_dataset(tmp_path, classes=3, per_class=2)
    ds = ep.load_dataset(data)
    overlap = make_splits(tmp_path, ["c0", "c1"], ["c1"], ["c2"], name="s1.json")
    with pytest.raises(SplitError, match="c1"):
        ep.load_splits(overlap, ds)
    missing = make_splits(tmp_path, ["c0"], ["c1"], [], name="s2.json")
    with pytest.raises(SplitError, match="c2"):
        ep.load_splits(missing, ds)
    twice = tmp_path / "s3.json"
    twice.write_text(json.dumps({"train": ["c0", "c0"], "valid": ["c1"], "test": ["c2"]}))
    with pytest.raises(SplitError, match="c0"):
        ep.load_splits(twice, ds)
    unknown = make_splits(tmp_path, ["c0", "ghost"], ["c1"], ["c2"], name="s4.json")
    with pytest.raises(SplitError, match="ghost"):
        ep.load_splits(unknown, ds)


def test_episode_spec_validation():
    with pytest.raises(EpisodeError):
        ep.EpisodeSpec(n_way=1, k_shot=1, m_query=1)
    with pytest.raises(EpisodeError):
        ep.EpisodeSpec(n_way=2, k_shot=0, m_query=1)
    with pytest.raises(EpisodeError):
        ep.EpisodeSpec(n_way=2, k_shot=1, m_query=0)


@pytest.fixture
def toy(tmp_path):
    data = make_dataset(tmp_path, classes=5, per_class=8)
    ds = ep.load_dataset(data)
    splits = ep.load_splits(
        make_splits(tmp_path, ["c0", "c1", "c2"], ["c3"], ["c4"]), ds)
    return ds, splits


def test_sample_episode_minimal(toy):
    ds, splits = toy
    spec = ep.EpisodeSpec(n_way=2, k_shot=1, m_query=1)
    episode = ep.sample_episode(ds, splits, "train", spec, LabelTemplate(),
                                np.random.default_rng(0))
    assert len(episode.support) == 2 and len(episode.query) == 2
    support_rows = {s.row_index for s in episode.support}
    query_rows = {q.row_index for q in episode.query}
    assert not support_rows & query_rows


def test_sample_episode_templating_support_only(toy):
    ds, splits = toy
    spec = ep.EpisodeSpec(n_way=2, k_shot=2, m_query=3)
    episode = ep.sample_episode(ds, splits, "train", spec, LabelTemplate(),
                                np.random.default_rng(1))
    for item in episode.support:
        assert item.text.endswith(f"{DEFAULT_TEMPLATE} {item.class_name}")
    for item in episode.query:
        assert DEFAULT_TEMPLATE not in item.text


def test_sample_episode_untemplated_when_disabled(toy):
    ds, splits = toy
    spec = ep.EpisodeSpec(n_way=2, k_shot=1, m_query=1)
    episode = ep.sample_episode(ds, splits, "train", spec, None,
                                np.random.default_rng(2))
    assert not episode.templated
    for item in episode.support:
        assert DEFAULT_TEMPLATE not in item.text


def test_sample_episode_exhausts_class_exactly(tmp_path):
    # 20 instances per class, K=5, M=15 uses every instance of a sampled class
    data = make_dataset(tmp_path, classes=3, per_class=20)
    ds = ep.load_dataset(data)
    splits = ep.load_splits(make_splits(tmp_path, ["c0", "c1"], ["c2"], []), ds)
    spec = ep.EpisodeSpec(n_way=2, k_shot=5, m_query=15)
    episode = ep.sample_episode(ds, splits, "train", spec, None,
                                np.random.default_rng(3))
    for local in range(2):
        rows = {s.row_index for s in episode.support if s.local_label == local}
        rows |= {q.row_index for q in episode.query if q.local_label == local}
        assert len(rows) == 20


def test_sample_episode_deterministic_and_seed_sensitive(toy):
    ds, splits = toy
    spec = ep.EpisodeSpec(n_way=3, k_shot=2, m_query=2)
    a = ep.sample_episode(ds, splits, "train", spec, LabelTemplate(), np.random.default_rng(7))
    b = ep.sample_episode(ds, splits, "train", spec, LabelTemplate(), np.random.default_rng(7))
    assert a == b
    seen = {tuple(s.row_index for s in ep.sample_episode(
        ds, splits, "train", spec, None, np.random.default_rng(seed)).support)
        for seed in range(20)}
    assert len(seen) > 1


def test_sample_episode_insufficient_classes_or_instances(toy):
    ds, splits = toy
    with pytest.raises(EpisodeError, match="classes"):
        ep.sample_episode(ds, splits, "valid", ep.EpisodeSpec(2, 1, 1), None,
                          np.random.default_rng(0))
    with pytest.raises(EpisodeError, match="instances"):
        ep.sample_episode(ds, splits, "train", ep.EpisodeSpec(2, 4, 5), None,
                          np.random.default_rng(0))


def test_episode_invariants_over_many_samples(toy):
    ds, splits = toy
    spec = ep.EpisodeSpec(n_way=3, k_shot=2, m_query=2)
    train_classes = splits.classes_of("train")
    for seed in range(200):
        episode = ep.sample_episode(ds, splits, "train", spec, LabelTemplate(),
                                    np.random.default_rng(seed))
        assert len(episode.support) == 6 and len(episode.query) == 6
        for local in range(3):
            assert sum(s.local_label == local for s in episode.support) == 2
            assert sum(q.local_label == local for q in episode.query) == 2
        assert not ({s.row_index for s in episode.support} &
                    {q.row_index for q in episode.query})
        for item in episode.support:
            assert ds.instances[item.row_index].class_name in train_classes


def test_query_views_are_label_free(toy):
    ds, splits = toy
    episode = ep.sample_episode(ds, splits, "train", ep.EpisodeSpec(2, 1, 2),
                                None, np.random.default_rng(11))
    views = episode.query_views()
    assert all(not hasattr(v, "local_label") for v in views)
    assert [v.text for v in views] == [q.text for q in episode.query]


def test_fixed_embeddings_roundtrip(tmp_path):
    data = make_dataset(tmp_path, classes=3, per_class=1)
    ds = ep.load_dataset(data)
    vectors = np.arange(24, dtype=np.float32).reshape(3, 8) / 7.0
    path = tmp_path / "emb.fseb"
    serialize.write_fixed_embeddings(path, vectors)
    table = ep.load_fixed_embeddings(path, ds)
    assert table.dim == 8
    assert np.array_equal(table.vectors, vectors.astype("<f4"))


def test_fixed_embeddings_count_mismatch(tmp_path):
    data = make_dataset(tmp_path, classes=3, per_class=1)
    ds = ep.load_dataset(data)
    path = tmp_path / "emb.fseb"
    serialize.write_fixed_embeddings(path, np.zeros((2, 4), dtype=np.float32))
    with pytest.raises(DataError, match="count 2"):
        ep.load_fixed_embeddings(path, ds)


def test_fixed_embeddings_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "bad.fseb"
    path.write_bytes(b"NOPE" + b"\x00" * 12)
    with pytest.raises(FormatError, match="magic"):
        serialize.read_fixed_embeddings(path)
    good = tmp_path / "good.fseb"
    serialize.write_fixed_embeddings(good, np.ones((2, 2), dtype=np.float32))
    truncated = tmp_path / "trunc.fseb"
    truncated.write_bytes(good.read_bytes()[:-4])
    with pytest.raises(FormatError, match="expected"):
        serialize.read_fixed_embeddings(truncated)


def test_checkpoint_roundtrip(tmp_path):
    params = {
        "weights": np.linspace(-1, 1, 12, dtype=np.float32),
        "bias": np.array([0.5, -0.5], dtype=np.float32),
    }
    path = tmp_path / "model.fsck"
    serialize.write_checkpoint(path, d=4, vocab_size=9, params=params)
    d, vocab_size, blocks = serialize.read_checkpoint(path)
    assert (d, vocab_size) == (4, 9)
    assert set(blocks) == {"weights", "bias"}
    assert np.array_equal(blocks["weights"], params["weights"])
    assert np.array_equal(blocks["bias"], params["bias"])
    # byte determinism
    first = path.read_bytes()
    serialize.write_checkpoint(path, d=4, vocab_size=9, params=params)
    assert path.read_bytes() == first
