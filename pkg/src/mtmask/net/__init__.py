from .checkpoint import (
    Checkpoint,
    CheckpointError,
    init_from_checkpoint,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from .layers import attention_forward, conv2d_forward
from .model import (
    ModelSpec,
    MultiTaskModel,
    binarize,
    multitask_forward,
    multitask_loss,
    single_task_spec,
)
from .train import TrainConfig, TrainingDiverged, evaluate, mean_f1, predict_masks, train


def single_task_variant(spec, mask_name, seed=0):
    """Model with the same backbone spec as ``spec`` and only the ``mask_name`` head."""
    return MultiTaskModel(single_task_spec(spec, mask_name), seed=seed)
