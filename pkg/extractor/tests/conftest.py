import csv
import os

import pytest
import torch

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")
os.environ.setdefault("HF_HUB_DISABLE_PROGRESS_BARS", "1")
os.environ.setdefault("TRANSFORMERS_VERBOSITY", "error")

VOCAB = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
         "a", "b", "cat", "dog", "runs", "the", "##s", "fast", "slow",
         "red", "blue", "green", "bird", "fish", "jumps"]


def _tiny_config(**overrides):
    from transformers import BertConfig
    base = dict(vocab_size=len(VOCAB), hidden_size=32, num_hidden_layers=2,
                num_attention_heads=2, intermediate_size=64,
                max_position_embeddings=64)
    base.update(overrides)
    return BertConfig(**base)


def _write_tokenizer(path) -> None:
    from transformers import BertTokenizer
    (path / "vocab.txt").write_text("\n".join(VOCAB) + "\n")
    BertTokenizer(str(path / "vocab.txt")).save_pretrained(str(path))


@pytest.fixture(scope="session")
def encoder_dir(tmp_path_factory):
    """Randomly initialized (seeded) tiny encoder saved to disk."""
    from transformers import BertModel
    path = tmp_path_factory.mktemp("tiny-encoder")
    _write_tokenizer(path)
    torch.manual_seed(1234)
    BertModel(_tiny_config()).save_pretrained(str(path))
    return str(path)


@pytest.fixture(scope="session")
def classifier_dir(tmp_path_factory):
    """Tiny model with a 3-way classification head."""
    from transformers import BertForSequenceClassification
    path = tmp_path_factory.mktemp("tiny-classifier")
    _write_tokenizer(path)
    torch.manual_seed(4321)
    BertForSequenceClassification(_tiny_config(num_labels=3)).save_pretrained(str(path))
    return str(path)


def write_csv(path, rows, fieldnames):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    return str(path)


@pytest.fixture
def dataset_csv(tmp_path):
    rows = [
        {"text": "the cat runs fast", "text_b": "a dog", "label": 0, "score": 0.1},
        {"text": "a red bird", "text_b": "the blue fish", "label": 1, "score": 0.9},
        {"text": "the dog jumps", "text_b": "a cat runs", "label": 2, "score": 0.5},
        {"text": "blue fish", "text_b": "green bird", "label": 0, "score": 0.3},
        {"text": "the slow cat", "text_b": "a fast dog", "label": 1, "score": 0.7},
        {"text": "a green dog runs", "text_b": "the red cat", "label": 2, "score": 0.2},
    ]
    return write_csv(tmp_path / "data.csv", rows, ["text", "text_b", "label", "score"])
