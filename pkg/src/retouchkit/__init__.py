"""Training-free white-box image retouching.

The package retouches a source image toward the style of reference images
(or a user instruction) by generating, executing, and score-selecting small
retouching programs built from seven photometric filters.
"""

from .errors import (
    AgentFailure,
    BackendError,
    DecodeError,
    DescriptionParseError,
    EmptyReferenceSetError,
    InsufficientDatasetError,
    InvalidDistributionError,
    ParamOutOfRangeError,
    ProgramParseError,
    RetouchError,
    ShapeMismatchError,
    TooSmallError,
    WrongStateError,
)
from .estimator import ProgramTransformer, ReferenceRetoucher, check_image
from .filters import FilterKind, RetouchStep, apply_filter, execute_program
from .image import (
    ImageBuffer,
    ImageStats,
    compute_stats,
    load_image,
    luminance,
    rgb_to_lab,
    save_image,
)
from .metrics import build_reference_pairs, delta_e, psnr, ssim
from .programs import (
    AspectJudgment,
    DifferenceDescription,
    Direction,
    Overall,
    RetouchProgram,
    allowed_ranges,
    parse_description,
    parse_program,
    serialize_program,
)
from .scoring import (
    ALL_PROMPTS,
    GLOBAL_PROMPTS,
    EmbeddingProvider,
    PromptDistribution,
    PromptSet,
    StatsProvider,
    gram_distance,
    hist_distance,
    kl_selection_score,
    prompt_distribution,
    reference_distribution,
    select_best,
)
from .session import (
    IterationRecord,
    SessionConfig,
    SessionState,
    SessionStatus,
    interactive_step,
    run_iteration,
    run_session,
    user_select,
    warm_start_candidate,
)

__version__ = "0.1.0"
