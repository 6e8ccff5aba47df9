import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from svspipe.dsp import AudioBuffer
from svspipe.pipeline import make_config, run
from svspipe.synthetic import make_corpus

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def sine(freq, seconds=1.0, sr=24000, amp=0.5, phase=0.0):
    t = np.arange(int(round(seconds * sr))) / sr
    return AudioBuffer(amp * np.sin(2 * np.pi * freq * t + phase), sr)


@pytest.fixture(scope="session")
def synthetic_corpus(tmp_path_factory):
    return make_corpus(tmp_path_factory.mktemp("corpus"))


@pytest.fixture(scope="session")
def pipeline_run(synthetic_corpus, tmp_path_factory):
    """Full 1..9 run on the synthetic corpus with one worker."""
    work = tmp_path_factory.mktemp("work1")
    config = make_config({"data_dir": synthetic_corpus, "work_dir": work, "n_workers": 1})
    assert run(config) == 0
    return config
