"""
共享 fixtures：tiny 配置、8×8 模型、玩具样本、隔离的日志目录
"""

import pytest
import torch

from src.logger import set_log_dir
from src.models import AdapterRole, Background, Caption, FaceSize, Placement
from src.network import ModelBundle, build_adapter, build_unet
from src.presets import PresetManager
from src.toy.world import make_identity, render_sample


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def isolated_logs(tmp_path):
    set_log_dir(tmp_path / "logs")
    yield


@pytest.fixture
def tiny_cfg():
    return PresetManager().get("tiny")


@pytest.fixture
def tiny_unet(tiny_cfg):
    return build_unet(tiny_cfg, seed=0).eval()


@pytest.fixture
def tiny_bundle(tiny_cfg, tiny_unet):
    return ModelBundle(
        unet=tiny_unet,
        iea=build_adapter(tiny_cfg, AdapterRole.IEA, tiny_unet, seed=0),
        tca=build_adapter(tiny_cfg, AdapterRole.TCA, tiny_unet, seed=0),
    )


@pytest.fixture
def caption():
    return Caption(background=Background.GREEN, placement=Placement.LEFT, size=FaceSize.LARGE)


@pytest.fixture
def tiny_sample(caption):
    return render_sample(make_identity(1), caption, seed=3, image_size=8)


@pytest.fixture
def sample32(caption):
    return render_sample(make_identity(1), caption, seed=3)


@pytest.fixture
def rng():
    return torch.Generator().manual_seed(1234)
