"""ParFilter: partition-and-filter FDR control for replicability analysis."""

import logging

from .baselines import (adaptive_bh_storey, adaptive_cofilter_bh, bh, bogomolov_heller_adaptive,
                        by, cofilter_bh, oracle_rejections, pc_pvalues, storey_pi0)
from .combine import (Combiner, combine_bonferroni, combine_fisher, combine_simes,
                      combine_stouffer, gbhpc, gbhpc_enumerate, gbhpc_rows)
from .config import (ImbalanceReport, TestingConfig, default_max_rep_config,
                     default_two_group_config, imbalance_report, load_config, sample_config)
from .engine import (RejectionReport, compute_thresholds, fdp_hat, local_pc_pvalues, parfilter,
                     pi_hat, posthoc_study, rejection_set)
from .errors import (ConfigError, EnumerationLimitError, InvalidInputError, ModeMismatchError,
                     NumericalError, ParFilterError, UnsupportedModeError)
from .select import SelectionResult, inflated_threshold_selection, threshold_selection
from .weights import (LocalWeights, WorkingModelParams, expected_p, fit_working_model,
                      local_pc_weights_a, local_pc_weights_b, mixture_density, omega, unit_weights)

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())
