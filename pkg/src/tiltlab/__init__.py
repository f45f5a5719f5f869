"""tiltlab: antenna-downtilt self-optimization on crowdsourced measurement maps."""

from .scenario import ScenarioConfig, RsrpGridSet, generate_grids, serving_cell_map
from .mdt import (MdtDataset, MdtReport, synthesize_reports, pixelize,
                  compute_deltas, sample_weights, save_dataset, load_dataset)
from .reward import (CqiTable, SchedulerConfig, CoverageCostParams,
                     coverage_fraction, coverage_cost, reward_case1, reward_case2)
from .env import TiltEnv, EnvConfig, Action
from .nn import QNetworkSpec, init_params, forward, save_checkpoint, load_checkpoint
from .agent import (AgentConfig, TrainResult, train, evaluate_greedy,
                    eta_for_step, episode_success_probability, EpsSchedule)
from .baselines import best_first_search, brute_force_optimum, random_policy
from .config import RunConfig, load_run_config

__version__ = "0.1.0"

__all__ = [
    "ScenarioConfig", "RsrpGridSet", "generate_grids", "serving_cell_map",
    "MdtDataset", "MdtReport", "synthesize_reports", "pixelize",
    "compute_deltas", "sample_weights", "save_dataset", "load_dataset",
    "CqiTable", "SchedulerConfig", "CoverageCostParams",
    "coverage_fraction", "coverage_cost", "reward_case1", "reward_case2",
    "TiltEnv", "EnvConfig", "Action",
    "QNetworkSpec", "init_params", "forward", "save_checkpoint", "load_checkpoint",
    "AgentConfig", "TrainResult", "train", "evaluate_greedy",
    "eta_for_step", "episode_success_probability", "EpsSchedule",
    "best_first_search", "brute_force_optimum", "random_policy",
    "RunConfig", "load_run_config",
    "__version__",
]
