"""qvkit: quantization-vector extraction, zero-shot patching, and 3-bit PTQ.

Checkpoints live in the bit-exact QVC1 container; a quantization vector is
the displacement from a standard fine-tuned checkpoint to its matched
quantization-aware twin, and patching adds a scaled donor vector to a
compatible receiver. The geometry module verifies the projection /
cosine-squared recovery law and its cubic error bound on synthetic
objectives, and the toy trainer produces matched checkpoint pairs at desk
scale.
"""

from .containers import (
    Checkpoint,
    DEFAULT_HEAD_FILTER,
    NO_FILTER,
    NameFilter,
    checkpoint_axpy,
    checkpoint_diff,
    load_checkpoint,
    save_checkpoint,
)
from .errors import (
    BadMagic,
    DivergenceError,
    DuplicateTensorName,
    GaugeMismatch,
    IncompatibleCheckpoints,
    NonFiniteTensor,
    NumericError,
    QvkitError,
    SizeMismatch,
    TruncatedPayload,
    UnknownTask,
    ValidationError,
)
from .geometry import (
    CubicModel,
    LineSearchResult,
    QuadraticModel,
    cubic_objective,
    h_cos_sq,
    line_search_lambda,
    optimal_lambda,
    quadratic_objective,
    recovered_fraction,
    second_order_deviation,
)
from .optim import AdamWState, adamw_step
from .quantize import (
    QuantSpec,
    QuantizedView,
    channel_scales,
    fake_quantize_checkpoint,
    fake_quantize_tensor,
    quantize_view,
    ste_apply,
    ste_backward,
)
from .tasks import ToyTask, make_task, registered_tasks
from .trainer import TrainConfig, evaluate_top1, train
from .transfer import LAMBDA_GRID, SweepResult, lambda_sweep, transfer_gain
from .vectors import (
    Provenance,
    QuantizationVector,
    extract_qv,
    load_qv,
    patch,
    qv_cosine,
    qv_norm,
    save_qv,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
