"""Hidden neural Markov chain sequence labeling toolkit.

Entropic forward-backward inference for order-1, order-2 and
correlated-noise hidden Markov chains; neural layers built on the same
recursions with a self-contained reverse-mode autodiff engine; recurrent
baselines; training, metrics and a CLI, all validated against brute-force
enumeration oracles.
"""

from .hmm import (CnEmission, EntropicHmmParams, GenerativeHmmParams,
                  classic_fb, derive_entropic, efb, efb2, efb_cn,
                  enumerate_posteriors, random_hmm, random_hmm2,
                  random_hmm_cn, unnormalized_recursions)
from .layers import (ArchitectureSpec, BiRnnLayer, HnmcCnLayer, HnmcLayer,
                     Hnmc2Layer, LabeledModel, RnnLayer, build_model)
from .tensor import Tape, Tensor, backward, fresh_tape
from .training import (Adam, Checkpoint, Sgd, TrainConfig, TrainResult,
                       evaluate, load_checkpoint, model_from_checkpoint,
                       save_checkpoint, train)

__version__ = "0.1.0"

__all__ = [
    "Adam", "ArchitectureSpec", "BiRnnLayer", "Checkpoint", "CnEmission",
    "EntropicHmmParams", "GenerativeHmmParams", "HnmcCnLayer", "HnmcLayer",
    "Hnmc2Layer", "LabeledModel", "RnnLayer", "Sgd", "Tape", "Tensor",
    "TrainConfig", "TrainResult", "backward", "build_model", "classic_fb",
    "derive_entropic", "efb", "efb2", "efb_cn", "enumerate_posteriors",
    "evaluate", "fresh_tape", "load_checkpoint", "model_from_checkpoint",
    "random_hmm", "random_hmm2", "random_hmm_cn", "save_checkpoint",
    "train", "unnormalized_recursions",
]
