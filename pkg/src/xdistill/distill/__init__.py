from .losses import DistillWeights, combine_values, combined_loss, cross_entropy, frobenius_loss, kd_loss
from .schedule import AnnealState, LossSchedule, epoch_decay, schedule_table, schedule_value
from .student import StudentConfig, StudentModel, derive_student_config, init_student_from_teacher, roundup
from .trainer import MetricsRecord, NumericalError, evaluate, make_loss_schedule, run_delta_distillation

__all__ = [
    "DistillWeights",
    "combine_values",
    "combined_loss",
    "cross_entropy",
    "frobenius_loss",
    "kd_loss",
    "AnnealState",
    "LossSchedule",
    "epoch_decay",
    "schedule_table",
    "schedule_value",
    "StudentConfig",
    "StudentModel",
    "derive_student_config",
    "init_student_from_teacher",
    "roundup",
    "MetricsRecord",
    "NumericalError",
    "evaluate",
    "make_loss_schedule",
    "run_delta_distillation",
]
