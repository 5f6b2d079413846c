"""cwcselect: consistency-based feature selection, plain and under simulated encryption.

Three interchangeable pipelines produce the same minimal consistent feature
subset: a plaintext reference, an oblivious single-backend pipeline over a
gate-level encrypted-bit simulator, and a two-party protocol that shuffles
payloads through a mix stage so sorting can move ciphertext handles instead
of ciphertexts.  Everything is instrumented with exact gate counts so the
cost structure is testable without real cryptography.
"""

from .dataset import (
    Dataset,
    DatasetError,
    EmptyDatasetError,
    NormalizeResult,
    ParseError,
    RelevanceReport,
    Row,
    SchemaError,
    load_dataset,
    mutual_information,
    normalize,
    pad_with_dummies,
)
from .cwc import (
    BitString,
    InconsistentDatasetError,
    SelectionResult,
    SortPermutation,
    compute_bitstring,
    consistency_count,
    cwc_select,
    is_consistent,
    minimal_consistent_subsets,
    sort_features,
    subset_consistent_bruteforce,
    verify_minimal,
)
from .bitcircuit import (
    BitBackend,
    CostModel,
    EncBit,
    EncInt,
    GateStats,
    InsecureCleartextBackend,
    add,
    equals,
    less_than,
    make_backend,
    negate,
    oblivious_swap,
    saturating_popcount,
)
from .baseline import (
    BaselineResult,
    ComparatorSchedule,
    EncFeaturePayload,
    batcher_schedule,
    default_b_max,
    run_baseline,
)
from .mixnet import (
    ImprovedResult,
    ProtocolError,
    Transcript,
    audit_transcript,
    mix_network,
    run_improved,
)

__version__ = "0.1.0"
