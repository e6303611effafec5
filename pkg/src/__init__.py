"""
DualPath - 双通路图像提示适配器（玩具尺度）

冻结的文本条件 U-Net 上挂两个结构相同的图像 adapter：
IEA 负责身份保真，TCA 负责文本一致，推理时按注意力推断的脸部掩码逐层融合两条通路的特征。
"""

from .models import (
    Background, Placement, FaceSize, Caption, IdentitySpec,
    AdapterRole, FusionMode, PathwaySelection, ThresholdMethod,
    MaskStats, GenerationReport, EvalRow, AblationRow, SweepRow,
    GradCheckEntry, GradCheckReport,
    generate_run_id,
)
from .config import (
    RunConfig, to_flat_dict, from_flat_dict, serialize_config, parse_config,
    dump_config, load_config,
)
from .presets import PresetManager
from .logger import get_logger, setup_logger, set_log_dir
from .errors import (
    DualPathError, ParameterError, ConfigError, StructuralError,
    ScheduleIndexError, StateError, TrainingDivergedError,
    CheckpointError, DatasetFormatError, ErrorHandler,
)
from .diffusion import make_schedule, add_noise, ddim_step, cfg_combine, run_ddim
from .network import UNet, ImageAdapter, ModelBundle, merged_attention, encode_face
from .fusion import (
    loss_iea, loss_tca, fuse_noise, loss_fusion, total_loss,
    PathwaySpec, dual_path_forward,
)
from .masking import generate_mask, largest_region, otsu_threshold
from .checkpoint import save_checkpoint, load_checkpoint
from .training import train_base, train_adapters, grad_check
from .pipeline import generate, evaluate, ablate, alpha_sweep
from .commands import create_default_registry


__version__ = "0.1.0"

__all__ = [
    # Models
    "Background", "Placement", "FaceSize", "Caption", "IdentitySpec",
    "AdapterRole", "FusionMode", "PathwaySelection", "ThresholdMethod",
    "MaskStats", "GenerationReport", "EvalRow", "AblationRow", "SweepRow",
    "GradCheckEntry", "GradCheckReport",
    "generate_run_id",

    # Config
    "RunConfig", "to_flat_dict", "from_flat_dict", "serialize_config", "parse_config",
    "dump_config", "load_config", "PresetManager",

    # Logger
    "get_logger", "setup_logger", "set_log_dir",

    # Errors
    "DualPathError", "ParameterError", "ConfigError", "StructuralError",
    "ScheduleIndexError", "StateError", "TrainingDivergedError",
    "CheckpointError", "DatasetFormatError", "ErrorHandler",

    # Numerics
    "make_schedule", "add_noise", "ddim_step", "cfg_combine", "run_ddim",
    "UNet", "ImageAdapter", "ModelBundle", "merged_attention", "encode_face",
    "loss_iea", "loss_tca", "fuse_noise", "loss_fusion", "total_loss",
    "PathwaySpec", "dual_path_forward",
    "generate_mask", "largest_region", "otsu_threshold",
    "save_checkpoint", "load_checkpoint",

    # Workflows
    "train_base", "train_adapters", "grad_check",
    "generate", "evaluate", "ablate", "alpha_sweep",
    "create_default_registry",
]
