import numpy as np
import pytest

from minis2st.pipeline import run_toy_pipeline


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    """One fully trained toy pipeline shared by the whole session.

    Expensive (minutes of CPU); everything downstream treats it as read-only.
    """
    out = tmp_path_factory.mktemp("toyrun")
    return run_toy_pipeline(out_dir=str(out), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
