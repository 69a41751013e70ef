"""Shared fixtures for the denoised_smoothing test suite."""
import numpy as np
import pytest
import yaml

from denoised_smoothing.classifiers import MixtureClassifier
from denoised_smoothing.data_model import LabeledMixture, MixtureModel
from denoised_smoothing.denoisers import DenoiserSpec
from denoised_smoothing.pipeline import SmoothedClassifier
from denoised_smoothing.schedule import NoiseSchedule

XOR_MEANS = [[-0.5, -0.5], [0.5, 0.5], [-0.5, 0.5], [0.5, -0.5]]


@pytest.fixture
def cosine_schedule():
    return NoiseSchedule()


@pytest.fixture
def linear_schedule():
    return NoiseSchedule(kind='linear')


@pytest.fixture
def xor_mixture():
    """Four corners of a square, opposite corners share a class."""
    model = MixtureModel(np.full(4, 0.25), XOR_MEANS, 0.2)
    return LabeledMixture(model, [0, 0, 1, 1], 2)


@pytest.fixture
def halfplane_mixture():
    """Two components on the first axis; the smoothed decision is sign(y1)."""
    model = MixtureModel([0.5, 0.5], [[-0.6, 0.0], [0.6, 0.0]], 0.2)
    return LabeledMixture(model, [0, 1], 2)


@pytest.fixture
def line_mixture():
    """Symmetric 1-D two-component mixture."""
    model = MixtureModel([0.5, 0.5], [[-0.9], [0.9]], 0.05)
    return LabeledMixture(model, [0, 1], 2)


def make_smoothed(lm, schedule=None, kind='one_shot_posterior_mean', **denoiser_args):
    denoiser = DenoiserSpec(kind, None if kind == 'identity' else lm.model, **denoiser_args)
    return SmoothedClassifier(denoiser, MixtureClassifier(lm), schedule or NoiseSchedule())


@pytest.fixture
def smoothed_factory():
    return make_smoothed


def _xor_config(**overrides):
    data = {
        'seed': 3,
        'workers': 1,
        'schedule': {'kind': 'cosine', 'T': 1000, 's': 0.008},
        'mixture': {
            'tau': 0.2,
            'components': [
                {'weight': 0.25, 'mean': m, 'label': label}
                for m, label in zip(XOR_MEANS, [0, 0, 1, 1])
            ],
        },
        'dataset': {'size': 12, 'seed': 5},
        'denoiser': {'kind': 'one_shot_posterior_mean'},
        'classifier': {'kind': 'bayes'},
        'certify': {'n0': 50, 'n': 500, 'alpha_fail': 0.001, 'eta': 0.001, 'batch_size': 200},
        'sigma_grid': [0.25, 0.5],
        'epsilon_grid': [0.0, 0.1, 0.25, 0.5],
    }
    data.update(overrides)
    return data


@pytest.fixture
def xor_config():
    """Builder of a small XOR run-config mapping; keyword arguments replace sections."""
    return _xor_config


@pytest.fixture
def write_config(tmp_path):
    """Write a config mapping to a YAML file and return its path."""
    def write(data, name='run.yaml'):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data), encoding='utf-8')
        return path
    return write
