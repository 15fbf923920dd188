"""Learning and evaluating diversified rankings.

A linear bi-criteria ranker (per-document relevance plus per-pair
dissimilarity) trained with cutting-plane max-margin updates against
cascade diversity measures, together with the measures themselves,
greedy target construction, diversity feature extraction, baselines and
a batch CLI.
"""

from .baselines import mmr_rank, relevance_rank, tune_mmr_lambda
from .estimators import (
    DiverseRankingSVM,
    MMRRanker,
    PlsaTopicModel,
    RelevanceRanker,
    check_query_instances,
)
from .features import (
    CHANNELS,
    FeatureConfig,
    TopicModel,
    assemble_pairwise,
    cosine_dissim,
    link_dissim,
    odp_distance,
    plsa_fit,
    topic_distance,
    url_dissim,
)
from .greedy import build_target, exhaustive_best, greedy_select
from .metrics import (
    CascadeState,
    dcem,
    dcem_loss,
    ideal_ranking,
    ideal_raw_dcem,
    marginal_gain,
    precision_ia,
    raw_dcem,
    subtopic_recall,
)
from .model import discriminant, joint_feature_map, loss_augmented_infer, predict
from .synth import SynthConfig, generate, oracle_weights, split_dataset
from .trainer import (
    TrainConfig,
    TrainStats,
    c_sweep,
    cutting_plane_train,
    hinge,
    solve_restricted_qp,
)
from .types import (
    ALPHA_NDCG,
    ERR_IA,
    MEASURES,
    NRBP,
    DegenerateQueryError,
    DocumentRecord,
    InvalidRankingError,
    MeasureParams,
    QueryInstance,
    SubtopicJudgments,
    WeightVector,
    validate_instance,
)

__version__ = "0.1.0"
