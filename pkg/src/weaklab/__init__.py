"""weaklab: weak supervision for text classification.

Rule-based and prompt-based weak sources vote (or abstain) on unlabeled
utterances; votes are aggregated into noisy training labels; a small
noise-robust classifier is trained on them via contrastive self-training.
"""

from .corpus import (
    ClassLabel,
    CorpusError,
    Dataset,
    LabelSchema,
    Lexicon,
    TokenSequence,
    Utterance,
    dump_dataset,
    load_dataset,
    load_lexicon,
    load_schema,
    normalize_text,
)
from .rules import (
    ClassBindings,
    LabelVote,
    RuleError,
    RuleSourceConfig,
    SoundexCode,
    filler_label,
    fluent_default_label,
    lexicon_label,
    repetition_label,
    soundex,
    soundex_repeat_label,
)
from .backends import (
    BackendError,
    LMBackend,
    MockBackend,
    PermanentBackendError,
    RemoteBackend,
    TransientBackendError,
)
from .prompts import (
    Demonstration,
    PromptError,
    PromptTemplate,
    cloze_label,
    ensemble_prompt_label,
    load_prompt_specs,
    nli_label,
    render_cloze,
    render_nli_hypotheses,
)
from .aggregate import (
    AggregatedLabels,
    LabelMatrix,
    SourceStats,
    aggregate_labels,
    build_matrix,
    majority_vote,
    soft_aggregate,
    source_stats,
)
from .metrics import EvalReport, macro_f1, rule_baseline_eval
from .trainer import (
    ClassifierParams,
    FeatureVector,
    TrainConfig,
    TrainReport,
    featurize,
    grad_check,
    init_train,
    predict_proba,
    self_train,
)
from .pipeline import ConfigError, PipelineConfig, StageError, run_pipeline

__version__ = "0.1.0"
