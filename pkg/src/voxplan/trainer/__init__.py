from ..losses import LOSS_KINDS, bce_grad, bce_loss, loss_and_grad, soft_dice_grad, soft_dice_loss
from ..optim import OptimizerConfig, adam_update, sgd_update
from .loop import METRICS_HEADER, EpochRecord, TrainConfig, evaluate, metrics_csv, predict_masks, stack_batch, train
from .metrics import Confusion, accuracy, confusion_voxels, dice_coefficient
