"""Embedding-space maps and transferability scoring for intermediate task
selection."""

from .esm import Esm, EsmTrainConfig, apply_esm, train_esm_closed_form, train_esm_iterative
from .projection import project_2d
from .ranking import (EvalReport, EvalRow, GroundTruth, RankedItem, Ranking,
                      aggregate_report, evaluate_ranking, load_ground_truth,
                      load_ranking, ndcg, rank_sources, regret_at_k,
                      save_ground_truth, save_ranking, save_report)
from .scoring import (FeatureDecomposition, LogMEResult, Score, esm_logme, leep,
                      logme, mean_pool, nce, textemb_score, vocab_overlap)
from .store import (EmbeddingMatrix, FormatError, LabelData, PseudoLabelMatrix,
                    SourceEntry, SourceManifest, TokenSet, load_manifest,
                    read_esm, read_labels, read_matrix, read_pseudo,
                    read_tokenset, save_manifest, write_esm, write_labels,
                    write_matrix, write_pseudo, write_tokenset)

__version__ = "0.1.0"
