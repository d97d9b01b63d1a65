"""Static Value-at-Risk planning and learning for tabular MDPs."""

from .dp import (
    QTensor,
    RiskGrid,
    WeightedNorm,
    bellman_lower_sweep,
    bellman_soft_sweep,
    bellman_upper_sweep,
    read_qtensor,
    soft_operator,
    solve_dvar_dp,
    solve_neutral_dp,
    solve_nvar_dp,
    solve_stationary_soft,
    solve_var_dp,
    weighted_norm_dist,
    write_qtensor,
)
from .errors import ConfigError, DataError, NumericalError, VarqError
from .mdp import (
    DomainSpec,
    Mdp,
    from_rows,
    gen_cliffwalk,
    gen_gamblers_ruin,
    gen_inventory,
    gen_random_mdp,
    load_mdp_csv,
    write_mdp_csv,
)
from .oracle import brute_force_qstar, policy_return_distribution
from .policy import EvalReport, EpisodeResult, evaluate_policy, exec_var_episode, mc_quantile, simulate_markov
from .qlearn import SampleEvent, TrainConfig, ql_init, ql_update, step_size, train
from .risk import (
    DiscreteDistribution,
    dist_new,
    huber_loss,
    quantile_loss,
    quantile_lower,
    quantile_upper,
    shortfall_value,
    soft_loss,
    soft_loss_grad,
    var,
    wasserstein1,
)

__version__ = "0.1.0"
