"""Sequential evaluation of offline reinforcement-learning algorithms.

The offline dataset is revealed to a learner a few transitions at a time and
the learner is scored as a function of how much data it has seen.
"""

from .algorithms import ALGORITHMS, AlgorithmState, Hyperparams, act, train_step
from .buffer import SequentialBuffer, new_buffer
from .dataset import (TIERS, DatasetMeta, OfflineDataset, Segment, generate_dataset, load_dataset,
                      make_mixed, normalize_score, save_dataset, shuffle_dataset)
from .engine import EvalPoint, LearningCurve, RunConfig, run_finetune_phase, run_minibatch, run_seqeval
from .errors import (BufferExhausted, ConfigError, DatasetFormatError, DatasetValidationError,
                     DegenerateReference, InputError, ProtocolError, UndefinedMetric)
from .evaluation import evaluate_policy, fqe_fit, fqe_score
from .mdp import (Episode, MdpSpec, Policy, Transition, chain_mdp, discounted_return, gridworld,
                  optimal_q, rollout, step)
from .metrics import (AggregateReport, ModelCard, build_model_card, finetune_uplift, iqm,
                      optimality_gap, perf_at)
from .tiers import build_tiers

__version__ = "0.1.0"
