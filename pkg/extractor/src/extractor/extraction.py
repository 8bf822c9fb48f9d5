"""Hidden-state trajectory extraction from causal language models.

Runs a model autoregressively over a prompt list and records, at every
generation step, the hidden state at the final sequence position of each
transformer layer. One trajectory file is written per (prompt, layer);
the static input embedding table can be dumped alongside. The output is
a dataset the manifold-probe CLI validates and analyzes as-is.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModelForCausalLM, AutoTokenizer

from . import trajstore

PROMPT_TEMPLATE = "{prompt}"
TRAJECTORY_PATTERN = "traj_{prompt_id}_L{layer:03d}.bin"
EMBEDDING_FILENAME = "embeddings.bin"


@dataclass(frozen=True)
class Prompt:
    prompt_id: str
    text: str
    group_label: str = ""


@dataclass(frozen=True)
class ExtractionConfig:
    """Everything one extraction run depends on.

    ``layers`` is either "all" or an explicit tuple of layer indices in
    the recorded numbering: by default index 0 is the first transformer
    block's output; with ``include_embedding_layer`` index 0 becomes the
    embedding output and the blocks shift up by one.
    """

    model_id: str
    output_root: str | Path
    prompts_path: str | Path = ""
    temperature: float = 0.7
    max_new_tokens: int = 128
    layers: str | tuple[int, ...] = "all"
    seed: int = 0
    include_embedding_layer: bool = False

    def __post_init__(self) -> None:
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        if self.layers != "all":
            layers = tuple(int(x) for x in self.layers)
            if not layers:
                raise ValueError("layers must be 'all' or a non-empty index list")
            if any(x < 0 for x in layers):
                raise ValueError(f"negative layer index in {layers}")
            if len(set(layers)) != len(layers):
                raise ValueError(f"duplicate layer index in {layers}")
            object.__setattr__(self, "layers", tuple(sorted(layers)))


@dataclass(frozen=True)
class ExtractionResult:
    root: Path
    num_prompts: int
    num_records: int
    skipped: tuple[str, ...]
    embedding_path: Path | None


def read_prompts(path) -> tuple[Prompt, ...]:
    """Parse a prompt list: one prompt per line, optionally followed by a
    tab and a group label. Blank lines are ignored."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    prompts: list[Prompt] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) > 2:
            raise ValueError(f"{path}:{lineno}: more than one tab-separated field")
        text = parts[0].strip()
        if not text:
            raise ValueError(f"{path}:{lineno}: empty prompt text")
        label = parts[1].strip() if len(parts) == 2 else ""
        prompts.append(Prompt(prompt_id=f"p{len(prompts):03d}", text=text, group_label=label))
    if not prompts:
        raise ValueError(f"no prompts in {path}")
    return tuple(prompts)


def _load_model(model_id: str):
    try:
        model = AutoModelForCausalLM.from_pretrained(model_id)
    except OSError:
        raise
    except Exception as exc:
        raise RuntimeError(f"cannot load model '{model_id}': {exc}") from exc
    model.eval()
    return model


def _load_tokenizer(model_id: str):
    try:
        return AutoTokenizer.from_pretrained(model_id)
    except OSError:
        raise
    except Exception as exc:
        raise RuntimeError(f"cannot load tokenizer for '{model_id}': {exc}") from exc


def _capture(model, tokenizer, text: str, temperature: float, max_new_tokens: int):
    """Generate from one prompt and return final-position hidden states as
    an array of shape (num_hidden_layers + 1, steps, width), layer 0 being
    the embedding output. Returns None when nothing was generated."""
    encoded = tokenizer(text, return_tensors="pt")
    if encoded["input_ids"].shape[1] == 0:
        return None
    kwargs: dict = {
        "max_new_tokens": max_new_tokens,
        "output_hidden_states": True,
        "return_dict_in_generate": True,
    }
    pad = tokenizer.pad_token_id
    if pad is None:
        pad = tokenizer.eos_token_id
    if pad is not None:
        kwargs["pad_token_id"] = pad
    if temperature == 0:
        kwargs["do_sample"] = False
    else:
        kwargs["do_sample"] = True
        kwargs["temperature"] = float(temperature)
    with torch.no_grad():
        output = model.generate(
            encoded["input_ids"], attention_mask=encoded["attention_mask"], **kwargs
        )
    steps = output.hidden_states
    if not steps:
        return None
    depth = len(steps[0])
    return np.stack(
        [
            np.stack([step[i][0, -1, :].to(torch.float32).cpu().numpy() for step in steps])
            for i in range(depth)
        ]
    )


def _resolve_layers(config: ExtractionConfig, num_layers: int) -> tuple[int, ...]:
    if config.layers == "all":
        return tuple(range(num_layers))
    for layer in config.layers:
        if layer >= num_layers:
            raise ValueError(
                f"layer {layer} out of range: model exposes {num_layers} recordable layers"
            )
    return config.layers


def extract(config: ExtractionConfig, with_embeddings: bool = False) -> ExtractionResult:
    """Run the model over every prompt and write the dataset.

    The trajectory step count equals the number of generated tokens;
    prompt positions are never recorded. Prompts whose generation comes
    back empty are skipped and noted in the manifest. The manifest is
    written last, so a readable manifest implies a complete dataset.
    With ``with_embeddings`` the input embedding table is dumped too,
    which requires it to be untied from the output head.
    """
    if not str(config.prompts_path):
        raise ValueError("prompts_path must be set for extraction")
    prompts = read_prompts(config.prompts_path)
    tokenizer = _load_tokenizer(config.model_id)
    model = _load_model(config.model_id)
    torch.manual_seed(config.seed)

    root = Path(config.output_root)
    root.mkdir(parents=True, exist_ok=True)

    offset = 0 if config.include_embedding_layer else 1
    notes = [
        f"prompt_template: {PROMPT_TEMPLATE}",
        "layer 0 is the embedding output"
        if config.include_embedding_layer
        else "layer 0 is the first transformer block output",
    ]
    entries: list[dict] = []
    skipped: list[str] = []
    num_layers: int | None = None

    for prompt in prompts:
        text = PROMPT_TEMPLATE.format(prompt=prompt.text)
        captured = _capture(model, tokenizer, text, config.temperature, config.max_new_tokens)
        if captured is None:
            skipped.append(prompt.prompt_id)
            notes.append(f"skipped {prompt.prompt_id}: empty generation")
            continue
        depth = captured.shape[0] - 1 + (1 if config.include_embedding_layer else 0)
        if num_layers is None:
            num_layers = depth
            selected = _resolve_layers(config, num_layers)
        elif depth != num_layers:
            raise RuntimeError(
                f"inconsistent layer count across prompts: {depth} vs {num_layers}"
            )
        for layer in selected:
            name = TRAJECTORY_PATTERN.format(prompt_id=prompt.prompt_id, layer=layer)
            trajstore.write_trajectory_file(
                root / name,
                prompt_id=prompt.prompt_id,
                layer_index=layer,
                model_id=config.model_id,
                states=captured[layer + offset],
                group_label=prompt.group_label,
            )
            entries.append(
                {
                    "relative_path": name,
                    "prompt_id": prompt.prompt_id,
                    "layer_index": layer,
                    "group_label": prompt.group_label,
                }
            )

    if num_layers is None:
        # every prompt came back empty; record the layer count from the
        # model config so the manifest still makes sense
        num_layers = int(model.config.num_hidden_layers) + (
            1 if config.include_embedding_layer else 0
        )

    embedding_path: Path | None = None
    embedding_rel: str | None = None
    if with_embeddings:
        rows = _embedding_table(model, config.model_id)
        embedding_path = root / EMBEDDING_FILENAME
        trajstore.write_embedding_file(embedding_path, model_id=config.model_id, rows=rows)
        embedding_rel = EMBEDDING_FILENAME

    trajstore.write_manifest(
        root,
        model_id=config.model_id,
        num_layers=num_layers,
        temperature=config.temperature,
        max_new_tokens=config.max_new_tokens,
        entries=entries,
        embedding_path=embedding_rel,
        notes=tuple(notes),
    )
    return ExtractionResult(
        root=root,
        num_prompts=len(prompts),
        num_records=len(entries),
        skipped=tuple(skipped),
        embedding_path=embedding_path,
    )


def _embedding_table(model, model_id: str) -> np.ndarray:
    input_embeddings = model.get_input_embeddings()
    if input_embeddings is None or getattr(input_embeddings, "weight", None) is None:
        raise RuntimeError(f"model '{model_id}' exposes no input embedding table")
    weight = input_embeddings.weight
    output_embeddings = model.get_output_embeddings()
    if (
        output_embeddings is not None
        and getattr(output_embeddings, "weight", None) is not None
        and output_embeddings.weight.data_ptr() == weight.data_ptr()
    ):
        raise RuntimeError(
            f"embedding table of '{model_id}' is tied to the output head; "
            "refusing to dump it as a standalone table"
        )
    return weight.detach().to(torch.float32).cpu().numpy()


def dump_embeddings(config: ExtractionConfig) -> Path:
    """Write the model's input embedding table into the output root.

    If the root already holds a manifest (from a previous extract run),
    it is updated to reference the table; otherwise only the file is
    written. Tied or absent tables raise with the condition named.
    """
    model = _load_model(config.model_id)
    rows = _embedding_table(model, config.model_id)
    root = Path(config.output_root)
    root.mkdir(parents=True, exist_ok=True)
    destination = root / EMBEDDING_FILENAME
    trajstore.write_embedding_file(destination, model_id=config.model_id, rows=rows)
    trajstore.set_manifest_embedding(root, EMBEDDING_FILENAME)
    return destination
