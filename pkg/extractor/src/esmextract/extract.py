"""Run transformer models over dataset rows and write the binary artifacts."""

from __future__ import annotations

import numpy as np
import torch

from . import formats
from .jobs import ExtractionJob, labels_of, load_rows, texts_of


def _load_tokenizer(ref: str):
    from transformers import AutoTokenizer
    return AutoTokenizer.from_pretrained(ref)


def _load_encoder(ref: str):
    from transformers import AutoModel
    model = AutoModel.from_pretrained(ref)
    model.eval()
    return model


def _load_classifier(ref: str):
    from transformers import AutoConfig, AutoModelForSequenceClassification
    config = AutoConfig.from_pretrained(ref)
    names = config.architectures or []
    if not any("ForSequenceClassification" in name for name in names):
        raise ValueError(
            f"model {ref!r} has no classification head (architectures: {names or 'unknown'})"
        )
    model = AutoModelForSequenceClassification.from_pretrained(ref)
    model.eval()
    return model


def _batches(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def _encode(tokenizer, first, second, job: ExtractionJob, sl: slice):
    pair = second[sl] if second is not None else None
    return tokenizer(first[sl], pair, padding=True, truncation=True,
                     max_length=job.max_seq_len, return_tensors="pt")


def _pool(hidden: torch.Tensor, mask: torch.Tensor, pooling: str) -> torch.Tensor:
    if pooling == "cls":
        return hidden[:, 0]
    weights = mask.unsqueeze(-1).to(hidden.dtype)
    return (hidden * weights).sum(dim=1) / weights.sum(dim=1)


def compute_embeddings(job: ExtractionJob) -> tuple[np.ndarray, dict]:
    """Embed every (subsampled) row; returns (n×d float32, metadata)."""
    rows, subsampled = load_rows(job)
    first, second = texts_of(rows, job)
    tokenizer = _load_tokenizer(job.model)
    model = _load_encoder(job.model)
    outputs = []
    with torch.no_grad():
        for sl in _batches(len(first), job.batch_size):
            enc = _encode(tokenizer, first, second, job, sl)
            hidden = model(**enc).last_hidden_state
            outputs.append(_pool(hidden, enc["attention_mask"], job.pooling))
    data = torch.cat(outputs).to(torch.float32).numpy()
    meta = {"model_id": job.model, "pooling": job.pooling}
    if subsampled:
        meta["subsample_seed"] = job.seed
    return data, meta


def extract_embeddings(job: ExtractionJob, out_path, labels_out=None) -> int:
    """Write an "ESEB" file (and optionally the paired "ESLB" labels).
    Returns the number of rows written."""
    data, meta = compute_embeddings(job)
    formats.write_embeddings(data, out_path, meta)
    if labels_out is not None:
        if not job.label_column:
            raise ValueError("labels output requested but the job has no label column")
        rows, _ = load_rows(job)
        values = labels_of(rows, job)
        if job.label_kind == "classification":
            formats.write_class_labels(values, int(values.max()) + 1, labels_out)
        else:
            formats.write_regression_labels(values, labels_out)
    return data.shape[0]


def extract_mean_representation(job: ExtractionJob, out_path) -> int:
    """Mean of the embedding rows as a 1×d "ESEB" file (for cosine scoring)."""
    data, meta = compute_embeddings(job)
    mean = data.astype(np.float64).mean(axis=0, keepdims=True).astype(np.float32)
    formats.write_embeddings(mean, out_path, meta)
    return data.shape[0]


def extract_pseudo_labels(job: ExtractionJob, out_path) -> int:
    """Softmax outputs of a classifier-headed model as an "ESPL" file."""
    rows, _ = load_rows(job)
    first, second = texts_of(rows, job)
    tokenizer = _load_tokenizer(job.model)
    model = _load_classifier(job.model)
    outputs = []
    with torch.no_grad():
        for sl in _batches(len(first), job.batch_size):
            enc = _encode(tokenizer, first, second, job, sl)
            logits = model(**enc).logits
            outputs.append(torch.softmax(logits.to(torch.float64), dim=-1))
    probs = torch.cat(outputs).numpy()
    probs /= probs.sum(axis=1, keepdims=True)
    formats.write_pseudo_labels(probs.astype(np.float32), out_path,
                                {"model_id": job.model})
    return probs.shape[0]


def extract_tokenset(job: ExtractionJob, out_path) -> int:
    """Union of input token ids (special tokens excluded) as an "ESTS" file.
    Returns the vocabulary size written."""
    rows, _ = load_rows(job)
    first, second = texts_of(rows, job)
    tokenizer = _load_tokenizer(job.model)
    texts = list(first) + (list(second) if second is not None else [])
    ids: set[int] = set()
    for text in texts:
        ids.update(tokenizer(text, add_special_tokens=False,
                             truncation=True, max_length=job.max_seq_len)["input_ids"])
    ids -= set(tokenizer.all_special_ids)
    if not ids:
        raise ValueError("token set is empty after excluding special tokens")
    formats.write_token_set(sorted(ids), out_path, tokenizer_id=job.model)
    return len(ids)
