"""Expert-ensemble soft-label contrastive fine-tuning toolkit."""

from .corpus import (
    DatasetSplit,
    DegenerateVectorError,
    EmbeddingMatrix,
    GroupSplit,
    MatrixFormatError,
    TextCollection,
    TextItem,
    cosine,
    load_matrix,
    read_matrix,
    save_matrix,
    write_matrix,
)
from .experts import (
    ExpertPanel,
    LabeledPair,
    active_set_fractions,
    label_pairs,
    score_pairs,
    soft1,
    soft2,
    soft3,
)
from .pairgen import (
    PairDataset,
    PairOrigin,
    PairRecord,
    build_negative_pairs,
    build_pair_dataset,
    build_positive_pairs,
)
from .trainer import (
    AdapterModel,
    TrainConfig,
    TrainReport,
    apply_adapter,
    gradient,
    initial_adapter,
    load_adapter,
    loss,
    save_adapter,
    train,
)
from .evalkit import (
    Histogram,
    PRCurve,
    QrelSet,
    RunRanking,
    SimilaritySample,
    aggregate_report,
    intra_inter,
    map_at_k,
    mrr_at_k,
    ndcg_at_k,
    pr_curve,
    similarity_histogram,
    symmetric_kl,
)
from .synthetic import SyntheticData, SyntheticWorld, synth

__version__ = "0.1.0"
