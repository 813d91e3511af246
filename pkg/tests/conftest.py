import numpy as np
import pytest

from spikestat.core import Activation, Kernel, NetworkConfig, Refractory


@pytest.fixture
def cfg_feedback():
    """One feedback neuron at constant rate 1; meant to run truncated at 2."""
    return NetworkConfig(
        theta=1.0,
        source_rates=(),
        activations=(Activation.constant(1.0),),
        background=(0.0,),
    )


@pytest.fixture
def cfg_source():
    """Single Poisson source, rate 1.5."""
    return NetworkConfig(theta=1.0, source_rates=(1.5,), activations=(), background=())


@pytest.fixture
def cfg_pair():
    """One source driving one self-connected neuron with a hard refractory."""
    return NetworkConfig(
        theta=1.0,
        source_rates=(0.8,),
        activations=(Activation("linear", lo=0.2, hi=1.5, slope=1.0, intercept=0.4),),
        background=(0.1,),
        refractory=Refractory("hard", delta=0.35),
        source_kernels=((Kernel("triangle", amplitude=0.8),),),
        recurrent_kernels=((Kernel("bump", amplitude=0.5),),),
        w_sources=[[1.0]],
        w_recurrent=[[0.6]],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
