"""Bayesian-network abstraction of feed-forward networks.

The toolkit projects layer pre-activations into low-dimensional linear
feature spaces, discretises them into interval partitions, fits a
layered discrete Bayesian network from a dataset, and uses that
abstraction for probabilistic inference, runtime monitoring, coverage
measurement, and LP-based concolic generation of new test inputs.
"""

from .bayesnet import (AbstractionConfig, BNAbstraction, BNStructure, NodeRef,
                       build_structure, evidential_update, fit_abstraction,
                       fit_tables, joint_probability, map_query, marginals,
                       monitor_outlier, monitor_shift, refit_tables)
from .concolic import ConcolicConfig, GenerationState, oracle, run
from .coverage import (bfcov, bfdcov, bfxcov, coverage_report,
                       criterion_satisfied, uncovered_targets)
from .discretise import (Partition, discretise_density,
                         discretise_kbins_quantile, discretise_kbins_uniform,
                         elicited_combination, interval_of)
from .features import (FeatureMap, fit_feature_map, project, project_dataset,
                       reconstruct)
from .formats import (load_abstraction, load_dataset, load_feature_map,
                      load_model, save_abstraction, save_dataset,
                      save_feature_map, save_model)
from .lp import LinearConstraint, LPProblem, LPSolution, dump_lp, solve
from .model import (Activations, Dataset, LayerSpec, Model, classify, forward,
                    maxpool_selection_matrix)

__version__ = "0.1.0"
