"""Trajectory extraction for causal language models.

Drives autoregressive generation over a prompt list, records the hidden
state at the final sequence position of every transformer layer at every
generated token, and writes the result as a binary trajectory dataset
(plus, optionally, the model's static input embedding table). The output
is consumed by the manifold-probe toolkit through its file formats and
CLI; nothing else couples the two.
"""

from .extraction import (
    EMBEDDING_FILENAME,
    PROMPT_TEMPLATE,
    TRAJECTORY_PATTERN,
    ExtractionConfig,
    ExtractionResult,
    Prompt,
    dump_embeddings,
    extract,
    read_prompts,
)
from .trajstore import (
    EMBEDDING_MAGIC,
    MANIFEST_NAME,
    TRAJECTORY_MAGIC,
    read_embedding_file,
    read_trajectory_file,
    set_manifest_embedding,
    write_embedding_file,
    write_manifest,
    write_trajectory_file,
)

__version__ = "0.1.0"

__all__ = [
    "EMBEDDING_FILENAME",
    "EMBEDDING_MAGIC",
    "MANIFEST_NAME",
    "PROMPT_TEMPLATE",
    "TRAJECTORY_MAGIC",
    "TRAJECTORY_PATTERN",
    "ExtractionConfig",
    "ExtractionResult",
    "Prompt",
    "dump_embeddings",
    "extract",
    "read_embedding_file",
    "read_prompts",
    "read_trajectory_file",
    "set_manifest_embedding",
    "write_embedding_file",
    "write_manifest",
    "write_trajectory_file",
    "__version__",
]
