"""Speculative decoding with verification skipping on synthetic models."""

from .cache import (CachedFeature, FeatureCache, dump_csv, retrieve_latest,
                    retrieve_with_offset, update)
from .core import (EmbeddingCodebook, TokenSequence, cosine, nearest_neighbors,
                   normalize, rng_stream, sample_index)
from .engine import (FRESH, EngineConfig, GenerationTrace, IterationRecord,
                     Metrics, compute_metrics, config_from_mapping,
                     replace_verified, serialize_trace, speculative_decode,
                     trace_to_csv, vanilla_ar, vvs_generate)
from .errors import (CacheUnderflow, DegenerateProposal, DegenerateResidual,
                     DegenerateTrace, DegenerateVector, RejectedInput,
                     SpecskipError)
from .models import (DraftModel, ModelOutput, TargetModel, draft_forward,
                     make_model_pair, target_forward, target_forward_masked)
from .schedule import (PathSimilarity, SkipPolicy, decay_weights, decide,
                       path_similarity)
from .select import SelectionPolicy, select_path, truncate_path
from .tree import (DraftNode, DraftTree, LinearizedTree, TokenPath, build_tree,
                   enumerate_paths, linearize, serialize_tree)
from .verify import (RelaxConfig, VerifyOutcome, pooled_mass, relaxed_accept,
                     residual_sample, strict_accept, verify_tree)

__version__ = "0.1.0"
