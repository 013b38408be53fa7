import numpy as np
import pytest
import torch

from telltale.cli import main as telltale_cli

import neuralcodec as nc


@pytest.fixture(scope="session")
def refs64_dir(tmp_path_factory):
    """A 64×64 reference watermark bundle written by the toolkit's CLI."""
    out = tmp_path_factory.mktemp("refs64")
    assert telltale_cli(["create-watermarks", "--height", "64", "--width", "64",
                         "--out-dir", str(out)]) == 0
    return out


@pytest.fixture(scope="session")
def refs64(refs64_dir):
    """The same bundle as float32 channel-last torch tensors."""
    refs = nc.load_bundle(refs64_dir / "manifest.json")
    return {name: torch.from_numpy(np.ascontiguousarray(refs[name], np.float32))
            for name in ("sem", "pho", "geo")}


@pytest.fixture()
def rng():
    return np.random.default_rng(20260814)
