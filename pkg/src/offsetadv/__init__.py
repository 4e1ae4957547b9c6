"""Toolkit for building and evaluating offset-resistant audio adversarial examples.

The pipeline is self-contained: a synthetic tone corpus trains a small
CTC recognizer, a gradient attack perturbs a clip toward a chosen target
transcript, and the evaluation harness measures how the attack survives
sample offsets and a simulated noisy channel.
"""

from offsetadv.audio import (
    AudioClip,
    DistortionBound,
    distortion_db,
    load_wav,
    pad_with_offset,
    prepend_silence,
    samples_per_distance,
    save_wav,
)
from offsetadv.frontend import FrontendConfig, frame_signal, mfcc, mfcc_difference, mfcc_vjp
from offsetadv.ctc import Alphabet, ctc_grad, ctc_loss, greedy_decode
from offsetadv.model import (
    AcousticModel,
    TrainConfig,
    backward_to_input,
    backward_to_params,
    forward,
    initialize_model,
    load_model,
    save_model,
    train,
    transcribe,
)
from offsetadv.corpus import CorpusSpec, generate_corpus, load_corpus, render_utterance, write_corpus
from offsetadv.attack import AttackJob, AttackResult, expected_offsets, run_attack
from offsetadv.evaluate import (
    ChannelConfig,
    SweepReport,
    channel_evaluation,
    edit_distance,
    offset_sweep,
    simulate_channel,
)

__version__ = "0.1.0"
