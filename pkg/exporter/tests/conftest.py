import pytest
import torch
from transformers import BertConfig, BertForMaskedLM, BertTokenizerFast

VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "the", "a", "cat", "dog", "sat", "ran", "on", "mat", "fast", "slow",
    "hello", "world", "quick", "brown", "fox", "jumps", "over", "lazy",
    "##s", "##ing", "##ed", ".", ",",
]


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A small randomly-initialized BERT saved locally (no downloads)."""
    d = tmp_path_factory.mktemp("tiny-bert")
    vocab_file = d / "vocab.txt"
    vocab_file.write_text("\n".join(VOCAB) + "\n")
    tokenizer = BertTokenizerFast(vocab_file=str(vocab_file))
    config = BertConfig(
        vocab_size=len(VOCAB),
        hidden_size=16,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=32,
        max_position_embeddings=64,
    )
    torch.manual_seed(0)
    model = BertForMaskedLM(config)
    model.save_pretrained(str(d))
    tokenizer.save_pretrained(str(d))
    return str(d)


@pytest.fixture(scope="session")
def texts():
    return [
        "the cat sat on the mat",
        "a dog ran fast",
        "hello world",
        "the quick brown fox jumps over the lazy dog",
        "cats sitting on mats",
        "slow and fast",
        "the dog sat",
        "a cat ran over the mat",
        "hello",
        "the lazy dog slept",
    ]
