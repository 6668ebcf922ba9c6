import json

import pytest

from fsproto import synth
from fsproto.episodes import load_dataset, load_splits


@pytest.fixture(scope="session")
def synth_corpus(tmp_path_factory):
    """Small labeled corpus with strong keyword signal: 6 classes x 14 instances."""
    root = tmp_path_factory.mktemp("synthdata")
    spec = synth.SynthSpec(classes=6, instances_per_class=14, vocab_size=60,
                           keywords_per_class=3, injection_rate=0.4)
    rows = synth.generate_synthetic(spec, seed=123)
    data_path = root / "data.jsonl"
    synth.write_jsonl(data_path, rows)
    split_path = root / "splits.json"
    split_path.write_text(json.dumps(synth.split_by_class_order(rows, (3, 2, 1))))
    dataset = load_dataset(data_path)
    splits = load_splits(split_path, dataset)
    return {"spec": spec, "rows": rows, "data_path": data_path,
            "split_path": split_path, "dataset": dataset, "splits": splits}
