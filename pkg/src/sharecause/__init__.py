"""Debiased modeling of news dissemination on social media.

Inverse-propensity-weighted ranking models of who shares which news, a
user-susceptibility outcome model that uses the learned embeddings as a
surrogate confounder, and tools to compare cohort behavior.
"""

from ._backend import COMPILED
from .behavior import (BehaviorReport, EmbeddingSample, balance_cohorts, compare_behaviors,
                       dbscan, project_2d, silhouette)
from .causal import (AttributeTable, CausalFit, compare_effect_estimates, fit_outcome_model,
                     predict_susceptibility, regression_metrics, susceptibility,
                     susceptibility_vector)
from .dissemination import (FactorModel, TrainConfig, TripletBatch, batch_objective,
                            gradients, init_model, sample_triplets, score, train)
from .errors import NumericalError, ValidationError
from .eval_rank import MetricsReport, RankedList, evaluate, ndcg_at_k, recall_at_k
from .interactions import InteractionSet
from .pipeline import ExperimentConfig, PipelineError, run_pipeline
from .propensity import (NeuralPropensityModel, PropensityTable, fit_neural_propensity,
                         news_propensity, positivity_report, score_propensity,
                         user_news_propensity)
from .synthgen import (SyntheticWorld, WorldConfig, expected_unbiased_loss, generate_world,
                       ideal_loss_oracle, make_uniform_test, sample_interactions,
                       standard_world_config)

__version__ = "0.1.0"
