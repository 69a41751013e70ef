"""
denoised_smoothing - certified l2 robustness by denoised randomized smoothing.

A diffusion-style denoiser is placed in front of an off-the-shelf classifier
and the pair is smoothed with Gaussian noise. Certification, timestep
matching, denoisers and an exact low-dimensional oracle are provided for
Gaussian-mixture data models.
"""

__version__ = '1.0.0'
__author__ = 'Justin Long'
__email__ = 'justinwlong1@gmail.com'

from .classifiers import MixtureClassifier
from .config import RunConfig, load_config
from .data_model import LabeledMixture, MixtureModel, Point
from .denoisers import DenoiserSpec, denoise
from .pipeline import SmoothedClassifier, certify, certify_dataset, predict
from .run_record import RunRecord
from .schedule import NoiseSchedule, get_timestep
from .stats import ABSTAIN, CertifyParams

__all__ = [
    'ABSTAIN',
    'CertifyParams',
    'DenoiserSpec',
    'LabeledMixture',
    'MixtureClassifier',
    'MixtureModel',
    'NoiseSchedule',
    'Point',
    'RunConfig',
    'RunRecord',
    'SmoothedClassifier',
    'certify',
    'certify_dataset',
    'denoise',
    'get_timestep',
    'load_config',
    'predict',
]
