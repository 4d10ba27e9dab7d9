import numpy as np
import pytest

from demul.synthgen import GatherGeometry, ParamSpace, make_dataset


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """24 default-geometry pairs, shared across harness tests."""
    path = tmp_path_factory.mktemp("data") / "tiny.dmlt"
    make_dataset(ParamSpace(), GatherGeometry(), n=24, seed=11, path=path)
    return path
