"""Run a pretrained MLM encoder over texts and emit lexroute embedding files.

Each input text becomes one record: per-token hidden states (special tokens
included) in the `tokens` array and the first position's hidden state in the
`cls` field. Optionally the MLM output head's linear layer is exported as
router parameters: its transposed weight matrix maps a hidden state to one
logit per vocabulary entry, exactly the shape the engine's router expects.

Token vectors are exported at the model's full hidden size; the engine
accepts any dimension, so no learned projection is applied here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from lexroute import RoutedToken, EncodedDocument, RouterParams, save_router_params
from lexroute.io import atomic_write_text, write_embeddings_binary, write_embeddings_jsonl

FORMATS = ("jsonl", "binary")


class ExportError(RuntimeError):
    pass


@dataclass
class ExportConfig:
    model: str
    output_path: str
    max_length: int = 128
    format: str = "jsonl"
    device: str = "cpu"
    batch_size: int = 8
    emit_router_params: bool = False
    router_params_path: str | None = None
    manifest_path: str | None = None

    def __post_init__(self):
        if self.max_length < 1:
            raise ExportError("max_length must be >= 1")
        if self.batch_size < 1:
            raise ExportError("batch_size must be >= 1")
        if self.format not in FORMATS:
            raise ExportError(f"format must be one of {FORMATS}")
        if self.emit_router_params and not self.router_params_path:
            raise ExportError("emit_router_params requires router_params_path")


def _load(config: ExportConfig):
    import torch
    from transformers import AutoModelForMaskedLM, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(config.model)
        model = AutoModelForMaskedLM.from_pretrained(config.model)
    except Exception as e:
        raise ExportError(f"cannot load model {config.model!r}: {e}") from e
    model.to(config.device)
    model.eval()
    torch.set_grad_enabled(False)
    return tokenizer, model


def _encode_batch(texts, tokenizer, model, config):
    import torch

    enc = tokenizer(
        texts,
        padding=True,
        truncation=True,
        max_length=config.max_length,
        return_tensors="pt",
    ).to(config.device)
    with torch.inference_mode():
        out = model(**enc, output_hidden_states=True)
    hidden = out.hidden_states[-1].cpu().numpy().astype(np.float64)
    ids = enc["input_ids"].cpu().numpy()
    mask = enc["attention_mask"].cpu().numpy()
    records = []
    for row_ids, row_mask, row_hidden in zip(ids, mask, hidden):
        n = int(row_mask.sum())
        tokens = [
            RoutedToken(row_hidden[pos], int(row_ids[pos]), [])
            for pos in range(n)
        ]
        records.append((tokens, row_hidden[0]))
    return records


def _run_batches(texts, tokenizer, model, config):
    records = []
    size = config.batch_size
    start = 0
    retried = False
    while start < len(texts):
        chunk = texts[start:start + size]
        try:
            records.extend(_encode_batch(chunk, tokenizer, model, config))
        except RuntimeError as e:
            # one retry at half the batch size on memory exhaustion, then fail
            if "out of memory" in str(e).lower() and not retried and size > 1:
                retried = True
                size = max(1, size // 2)
                continue
            raise ExportError(f"inference failed: {e}") from e
        start += len(chunk)
    return records


def _router_params_from_mlm_head(model) -> RouterParams:
    head = model.get_output_embeddings()
    if head is None:
        raise ExportError("model has no MLM output head")
    weight = head.weight.detach().cpu().numpy().astype(np.float64)  # (|V|, c)
    bias = getattr(head, "bias", None)
    if bias is not None:
        bias = bias.detach().cpu().numpy().astype(np.float64)
    else:
        bias = np.zeros(weight.shape[0])
    return RouterParams(weight.T, bias)


def export_corpus(texts: list[str], config: ExportConfig) -> dict:
    """Export texts as embedding records; returns the manifest dictionary."""
    if not texts:
        raise ExportError("texts must be non-empty")
    tokenizer, model = _load(config)
    records = _run_batches(list(texts), tokenizer, model, config)
    docs = [
        EncodedDocument(f"text{i:04d}", tokens, cls)
        for i, (tokens, cls) in enumerate(records)
    ]
    if config.format == "binary":
        write_embeddings_binary(docs, config.output_path)
    else:
        write_embeddings_jsonl(docs, config.output_path)

    manifest = {
        "model": config.model,
        "hidden_size": int(model.config.hidden_size),
        "vocab_size": int(model.config.vocab_size),
        "max_length": config.max_length,
        "format": config.format,
        "records": len(docs),
        "output_path": config.output_path,
    }
    if config.emit_router_params:
        params = _router_params_from_mlm_head(model)
        if params.embedding_dim != model.config.hidden_size:
            raise ExportError("MLM head dimension does not match hidden size")
        save_router_params(params, config.router_params_path)
        manifest["router_params_path"] = config.router_params_path
        manifest["router_keys"] = params.key_count
    if config.manifest_path:
        atomic_write_text(config.manifest_path, json.dumps(manifest, indent=2) + "\n")
    return manifest
