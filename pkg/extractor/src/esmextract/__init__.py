"""Bridge from transformer models to the selection toolkit's binary formats."""

from .extract import (compute_embeddings, extract_embeddings,
                      extract_mean_representation, extract_pseudo_labels,
                      extract_tokenset)
from .jobs import ExtractionJob

__version__ = "0.1.0"
