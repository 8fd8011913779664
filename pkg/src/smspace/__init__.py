"""Learning the spatial structure of a sensor's position from sensorimotor
prediction: simulated worlds, a siamese predictive network, and analysis tools."""
from .analysis import d_metric, d_topo, evaluate, redundancy_collapse
from .exploration import Regime, generate_dataset, load_dataset, save_dataset
from .harness import ExperimentConfig, cmd_experiment, train_run
from .neural import build_model, train_step
from .numcore import RandomStream, seed_derive
from .worlds import make_world

__version__ = "0.1.0"
