"""Knowledge-graph link prediction with budgeted connected explanations.

Train a compact query-conditioned message-passing model, harden copies of
it against edge removal, learn a per-edge soft mask guided by personalized
random walks, and extract connected explanation subgraphs under an edge
budget. A fine-tune protocol scores explainers by the downstream ranking
quality of their subgraphs.
"""

__version__ = "0.1.0"

from .backbone import (
    BackboneConfig,
    EmbeddingTable,
    ModelHandle,
    ScoreVector,
    batch_scores,
    embed,
    fine_tune,
    forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
    train_backbone,
)
from .baselines import instance_mask_explain, parameterized_mask_explain
from .config import RunConfig, load_config
from .errors import (
    BoundsError,
    CheckpointError,
    ConfigError,
    ContractError,
    KgxkError,
    ParseError,
    ProtocolError,
    TrainingError,
    VocabError,
)
from .evaluator import train_evaluator
from .explainer import (
    EdgeMask,
    ExplainerHParams,
    Explanation,
    MaskNet,
    edge_scores,
    extract_explanation,
    load_masknet,
    read_explanations,
    regularizers,
    save_masknet,
    teleport_set,
    train_explainer,
    write_explanations,
)
from .graph import (
    Dataset,
    FilterIndex,
    KnowledgeGraph,
    Query,
    SubgraphView,
    Triple,
    Vocab,
    build_graph,
    count_components,
    filtered_candidates,
    load_dataset_dir,
    load_triples,
    make_queries,
)
from .perturb import DropSchedule, drop_edges_distance, drop_edges_uniform, ego_network
from .protocol import (
    EmptyArm,
    FullComponentArm,
    InstanceArm,
    ParameterizedArm,
    ProtocolHParams,
    ProtocolReport,
    RawArm,
    SweepReport,
    edge_drop_sweep,
    ego_radius_sweep,
    run_protocol,
    write_metrics_csv,
    write_report_csv,
    write_report_json,
    write_sweep_csv,
)
from .ranking import RankingMetrics, evaluate_model, rank_metrics
from .seeding import derived_rng
from .synthetic import SyntheticDataset, SyntheticSpec, generate, write_dataset_dir
from .walk import (
    NodeDistribution,
    PPRConfig,
    PairwiseWeights,
    StochasticAdjacency,
    collapse_relations,
    partition_edges,
    ppr,
    stochastic_adjacency,
)
