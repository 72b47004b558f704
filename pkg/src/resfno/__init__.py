"""Sequence-to-sequence B-H hysteresis modeling with a multi-scale
ResNet-augmented Fourier neural operator."""

import os as _os

# RESFNO_THREADS caps internal (BLAS) parallelism; the thread pools read
# their env vars when numpy first loads, so bridge before any submodule
# import.  No effect if numpy was already imported by the host process.
_threads = _os.environ.get("RESFNO_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                 "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .autodiff import Gradients, ShapeError, Tape, TapeError, Tensor, backward
from .data import Dataset, SynthConfig, load_csv_dir, split_train_val, \
    synth_generate, write_csv_dir
from .features import FeatureBundle, ScalerState, WaveformSample, db_dt, \
    delta_b, downsample_stride, make_bundle, resample_linear, scaler_fit
from .metrics import EvalReport, core_loss_density, evaluate, nrmse, r_squared
from .model import ModelConfig, ModelParams, build, forward, \
    load_checkpoint, save_checkpoint
from .training import TrainConfig, TrainState, adam_step, early_stop_update, \
    mse_loss, train

__version__ = "0.1.0"
