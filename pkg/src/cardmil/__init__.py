"""Multi-instance learning with cardinality potentials.

Exact inference over bags of instances under count-coupled labeling models,
maximum-likelihood training of the instance scorer, marginal-weighted bag
kernels, and an SMO-based SVM on precomputed Gram matrices.
"""

from .model import (
    NEGATIVE,
    POSITIVE,
    Bag,
    CardinalityPotential,
    InstanceModel,
    NormalPotential,
    RatioPotential,
    TabularPotential,
    UniformPotential,
    cardinality_log_potential,
    log_potential_table,
    unary_weight,
    unary_weights,
)
from .inference import (
    BruteForceResult,
    CountDistribution,
    DegenerateModelError,
    Marginals,
    bag_label_posterior,
    brute_force,
    conditional_marginals,
    count_distribution,
    instance_marginals,
    log_partition,
    map_labeling,
)

__version__ = "0.1.0"
