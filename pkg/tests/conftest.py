import numpy as np
import pytest
import torch
from hypothesis import settings

from mirrornet.networks import MirrorNet, NetConfig

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")

# tiny network used for finite-difference checks: under 2k parameters
TINY = dict(
    image_size=(16, 16),
    latent_channels=1,
    latent_size=(2, 2),
    width=1,
    res_blocks=1,
    alpha_backbone="small-conv",
    alpha_width=2,
    alpha_blocks=1,
    mask_width=1,
)

ACCEPTANCE_LINES = {}


def record_acceptance(key: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[key] = f"{key} {'PASS' if passed else 'FAIL'}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])


def randomize(net: torch.nn.Module, scale: float = 0.3, seed: int = 0) -> None:
    """Replace every parameter (including zero-initialized heads) with N(0, scale^2) draws."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in net.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)


@pytest.fixture
def tiny_net():
    torch.manual_seed(0)
    net = MirrorNet(NetConfig(**TINY)).double()
    randomize(net)
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(0)
