from .data import TrainingCorpus, Utterance, batches, same_length_groups
from .losses import (l1, loss_d_cgan, loss_d_metricgan, loss_g_cgan, loss_g_metricgan,
                     loss_irm_l1)
from .loops import (DivergenceError, Trainer, generate, multimetric_schedule, score_masks,
                    train_epoch, train_multimetric_epoch)
from .plan import CurvePoint, TrainPlan, TrainState, init_state, resolve_metrics
