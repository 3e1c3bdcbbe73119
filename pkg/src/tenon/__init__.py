"""Desk-scale diffusion-policy pipeline for contact-rich tenon insertion.

Subpackages follow the data path: :mod:`tenon.sim` (planar contact
simulator), :mod:`tenon.demos` / :mod:`tenon.episodes` (demonstration
generation and the episode file format), :mod:`tenon.datapipe`
(preprocessing to training samples), :mod:`tenon.diffusion`,
:mod:`tenon.unet`, :mod:`tenon.training` (the action-diffusion policy),
and :mod:`tenon.rollout` / :mod:`tenon.experiments` (receding-horizon
evaluation and ablation studies).
"""

from .sim import (
    InsertionSim,
    JointGeometry,
    SimConfig,
    SimStatus,
    make_sim,
    sample_mortise_offset,
)
from .episodes import EpisodeRecord, read_episode, validate_episode, write_episode
from .demos import ScriptedExpert, TeleopTransform, collect_demos, map_controller, scripted_demo
from .datapipe import NormStats, PipelineConfig, build_manifest, load_manifest, process_episode
from .diffusion import NoiseSchedule, cosine_schedule, ddim_sample, forward_noise
from .training import Checkpoint, PolicyConfig, grad_check, load_checkpoint, save_checkpoint, train
from .rollout import RolloutConfig, RolloutResult, pool_actions, rollout
from .experiments import ExperimentReport, evaluate, run_experiment_suite

__version__ = "0.1.0"
