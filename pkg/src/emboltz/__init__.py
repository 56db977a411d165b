"""Boltzmann machines with unconstrained connectivity.

Training couples a Monte Carlo completion pass over the hidden units with
pluggable complete-data gradient estimators (CD-k, persistent CD,
pseudo-likelihood); evaluation rests on moment-difference statistics with
exact enumeration oracles for small machines and annealed importance
sampling for bipartite ones.
"""

from .model import BoltzmannMachine, init_random, init_random_rbm, sigmoid
from .exact import (ENUMERATION_CAP, EnumerationCapError, ExactDistribution,
                    exact_distribution, exact_moments, kl_divergence,
                    visible_marginal_exact)
from .sampling import (ChainState, RbmLayout, gibbs_sweep_all, gibbs_update,
                       init_chains, is_bipartite, rbm_block_step,
                       sample_hidden_given_visible)
from .gradients import (GradientUpdate, MomentVector, cd_gradient, data_moments,
                        pcd_gradient, pl_gradient, pseudo_log_likelihood,
                        rbm_cd_gradient_hinton)
from .training import (CompleteDataSet, TrainConfig, TrainTrace, TrainingDiverged,
                       lr_schedule, train_emlike, train_rbm_baseline)
from .evaluation import (EvalConfig, EvalReport, ais_log_z, avg_error, avg_log_prob,
                         data_moment_estimate, diff_stats, evaluate_machine,
                         exact_kl_visible, kl_gradient_check, model_moment_estimate)
from .datasets import (BinaryDataSet, TargetDistribution, batches, binarize,
                       load_dataset, load_mnist_idx, load_target,
                       make_artificial_target, sample_target, save_dataset,
                       save_target)
from .streams import RNG_ALGORITHM, SeedTree

__version__ = "0.1.0"
