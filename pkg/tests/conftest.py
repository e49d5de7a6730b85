import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from camorect.models import ArchConfig  # noqa: E402
from camorect.synth import build_corpus  # noqa: E402

# toy network for gradient and contract tests (~900 parameters)
TOY_ARCH = dict(
    resolution=4, stem_stride=1, cond_channels=2, leader_widths=(2, 2, 2, 2), den_widths=(2, 2, 2, 2),
    stem_width=2, time_dim=4, patch=2, dim=4, depth=4, heads=1, mlp_ratio=1,
)
# small but realistic network for fast training tests
SMALL_ARCH = dict(leader_widths=(8, 8, 8, 8), den_widths=(8, 8, 8, 8), cond_channels=8, dim=16, depth=4,
                  stem_width=4, time_dim=16)


@pytest.fixture
def toy_arch():
    return ArchConfig(**TOY_ARCH)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """12 samples at 64x64."""
    root = tmp_path_factory.mktemp("corpus") / "c12"
    build_corpus(12, (64, 64), root, seed=5)
    return root


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield
