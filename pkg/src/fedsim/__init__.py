"""Federated-learning simulator: FedAvg / FedAvgM over synthetic box-regression scenes."""
from .aggregation import AggregatedDelta, FedAvgMState, aggregate, fedavg_step, fedavgm_step, pseudo_gradient
from .data import (BoundingBox, DataConfig, PartitionScheme, Scene, Shard, augment_dataset, dataset_hash,
                   generate_dataset, load_dataset, partition, rotate_augment, save_dataset, train_test_split)
from .errors import ClientError, ConfigError, DimensionError, FedSimError, NumericError, ProtocolError
from .metrics import EvalReport, convergence_stats, evaluate_model, global_metric, iou
from .models import ModelKind, ModelSpec, TrainConfig, init_params, local_train, loss_and_grad, predict
from .orchestrator import (ExperimentConfig, ExperimentResult, prepare_data, run_centralized, run_experiment,
                           run_round, sample_clients)
from .params import ClientUpdate, RoundRecord, StrategyTag, as_params, vec_weighted_sum

__version__ = "0.1.0"
