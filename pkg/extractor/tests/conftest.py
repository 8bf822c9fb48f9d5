import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from toy import build_tied, build_untied

TOY_WIDTH = 64
TOY_LAYERS = 4


@pytest.fixture(scope="session")
def toy_model_dir(tmp_path_factory):
    return build_untied(tmp_path_factory.mktemp("toy-untied"), width=TOY_WIDTH, layers=TOY_LAYERS)


@pytest.fixture(scope="session")
def tied_model_dir(tmp_path_factory):
    return build_tied(tmp_path_factory.mktemp("toy-tied"))


@pytest.fixture(scope="session")
def small_prompts(tmp_path_factory):
    path = tmp_path_factory.mktemp("prompts") / "small.txt"
    path.write_text("w001 w002 w003\nw010 w020 w030\n", encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def labeled_prompts(tmp_path_factory):
    path = tmp_path_factory.mktemp("prompts") / "labeled.txt"
    path.write_text(
        "w001 w002\tarith\nw003 w004\tarith\nw005 w006\tlogic\n", encoding="utf-8"
    )
    return path


@pytest.fixture(scope="session")
def smoke_prompts(tmp_path_factory):
    rng = np.random.default_rng(0)
    lines = [
        " ".join(f"w{rng.integers(0, 250):03d}" for _ in range(5)) for _ in range(20)
    ]
    path = tmp_path_factory.mktemp("prompts") / "smoke.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
