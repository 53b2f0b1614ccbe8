"""Layer graphs, training, model files and datasets."""
from .data import (CLASS_NAMES, Dataset, IDXFormatError, generate_synthetic_dataset, load_idx_dataset,
                   read_idx, train_test_split, write_idx)
from .graph import (LayerGraph, LayerSpec, UnitRef, forward_with_taps, objective_and_input_grad, predict,
                    unit_values)
from .modelio import ModelFormatError, load_model, model_digest, save_model
from .models import add_detector_layers, build_base_model, build_detector
from .train import TrainHyper, TrainingDiverged, TrainResult, accuracy, loss_and_grad, sgd_train

__all__ = [
    "CLASS_NAMES", "Dataset", "IDXFormatError", "LayerGraph", "LayerSpec", "ModelFormatError", "TrainHyper",
    "TrainResult", "TrainingDiverged", "UnitRef", "accuracy", "add_detector_layers", "build_base_model",
    "build_detector", "forward_with_taps", "generate_synthetic_dataset", "load_idx_dataset", "load_model",
    "loss_and_grad", "model_digest", "objective_and_input_grad", "predict", "read_idx", "save_model",
    "sgd_train", "train_test_split", "unit_values", "write_idx",
]
