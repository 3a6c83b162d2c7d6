"""Unsupervised anomaly detection for irregularly sampled sequences.

Time-aware recurrent encoders (A-LSTM, D-LSTM, M-LSTM, M-RNN, M-GRU) are
trained jointly with a reconstruction decoder and a one-class head (SVDD or
OC-SVM), offline with minibatches or online one sequence at a time.

Typical use::

    from irregad import Hyperparameters, synth_generate, SynthConfig, train_offline
    ds = synth_generate(SynthConfig(), np.random.default_rng(0))
    report = train_offline(ds[:300], ds[300:400], Hyperparameters(p=4, n_epoch=5))
    scores = report.model.scores(list(ds[400:]))
"""

__version__ = "0.1.0"

from .data import Dataset, SynthConfig, read_jsonl, synth_generate, write_jsonl  # noqa: E402
from .eval import auc_pairwise, roc_curve  # noqa: E402
from .kernels import backend as kernel_backend  # noqa: E402
from .model import AnomalyModel  # noqa: E402
from .online import OnlineState, process_sequence, pso_race  # noqa: E402
from .sequences import IrregularSequence  # noqa: E402
from .trainer import Hyperparameters, select_hyperparameters, train_offline  # noqa: E402

__all__ = [
    "AnomalyModel",
    "Dataset",
    "Hyperparameters",
    "IrregularSequence",
    "OnlineState",
    "SynthConfig",
    "__version__",
    "auc_pairwise",
    "kernel_backend",
    "process_sequence",
    "pso_race",
    "read_jsonl",
    "roc_curve",
    "select_hyperparameters",
    "synth_generate",
    "train_offline",
    "write_jsonl",
]
