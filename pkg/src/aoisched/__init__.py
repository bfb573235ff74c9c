"""Signal-agnostic AoI scheduling of correlated Gauss-Markov sources."""
from .signal import GaussMarkovModel, default_model
from .penalty import JointPenalty, PenaltyTable, TruncationConfig, build_f_table, model_tables
from .relaxed_mdp import (cyclic_search, gain_index, joint_mdp_oracle, threshold_decide,
                          value_iteration)
from .policies import (CyclicTwoSource, EMAMaxWeight, MaxAgeFirst, MaxExpectedError,
                       MaxGainFirst, RandomizedPolicy)
from .online import OnlineMaxGainFirst, OnlineSourceEstimator, OnlineThreshold
from .simulation import Simulator, evaluate_policy

__version__ = "0.1.0"

__all__ = [
    "GaussMarkovModel", "default_model", "JointPenalty", "PenaltyTable", "TruncationConfig",
    "build_f_table", "model_tables", "cyclic_search", "gain_index", "joint_mdp_oracle",
    "threshold_decide", "value_iteration", "CyclicTwoSource", "EMAMaxWeight", "MaxAgeFirst",
    "MaxExpectedError", "MaxGainFirst", "RandomizedPolicy", "OnlineMaxGainFirst",
    "OnlineSourceEstimator", "OnlineThreshold", "Simulator", "evaluate_policy",
]
