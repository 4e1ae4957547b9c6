"""Targeted adversarial perturbation search against the CTC recognizer.

Two modes share one update rule (signed-gradient descent with projection
into the distortion box and the valid PCM range):

* baseline — the gradient is taken on x + delta exactly as fed to the
  front end, which overfits the perturbation to one bucket alignment;
* offset_training — every gradient evaluation surrounds x + delta with a
  hop's worth of silence split at a random point, the waveform gradient
  is truncated back to the original extent (discarding the part that fell
  on the padding), and a batch of such gradients is averaged before the
  sign is taken. The perturbation then works at every bucket alignment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from offsetadv.audio import AudioClip, DistortionBound, distortion_db, pad_with_offset
from offsetadv.ctc import _loss_and_grad, required_frames
from offsetadv.frontend import FrontendConfig, _analyze, _dct_matrix, _vjp_from_analysis
from offsetadv.model import AcousticModel
from offsetadv.model import _backward as _model_backward
from offsetadv.model import _run as _model_run

MODE_BASELINE = "baseline"
MODE_OFFSET_TRAINING = "offset_training"

# symmetric clamp keeping x + delta storable as 16-bit PCM
_PCM_SAFE = 32767.0


class AttackDivergedError(RuntimeError):
    """Raised when the attack loss becomes non-finite."""

    def __init__(self, iteration: int):
        super().__init__(f"non-finite loss at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class AttackJob:
    original: AudioClip
    target: str
    bound: DistortionBound
    iterations: int = 1000
    batch_size: int = 8
    mode: str = MODE_OFFSET_TRAINING
    learning_rate: float = 10.0
    seed: int = 0
    hop: int = 320  # total padding per gradient evaluation

    def __post_init__(self) -> None:
        if self.mode not in (MODE_BASELINE, MODE_OFFSET_TRAINING):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.iterations < 1 or self.batch_size < 1:
            raise ValueError("iterations and batch_size must be at least 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.hop < 1:
            raise ValueError("hop must be at least 1")
        if not self.target:
            raise ValueError("target transcript must be non-empty")


@dataclass(frozen=True)
class AttackResult:
    perturbation: AudioClip
    adversarial: AudioClip
    loss_history: tuple
    achieved_db: float
    iterations_run: int


class StepResult(NamedTuple):
    gradient: np.ndarray
    loss: float


def chain_gradient(clip: AudioClip, target: np.ndarray, model: AcousticModel,
                   frontend: FrontendConfig) -> StepResult:
    """CTC loss of a clip against a target and its waveform gradient."""
    analysis = _analyze(clip, frontend)
    features = np.log(analysis["mel"] + frontend.log_floor) @ _dct_matrix(frontend).T
    cache = _model_run(model, features)
    loss, g_logits = _loss_and_grad(cache["logits"], target, model.alphabet)
    g_features, _ = _model_backward(model, features, g_logits,
                                    want_params=False, cache=cache)
    return StepResult(_vjp_from_analysis(analysis, frontend, g_features), loss)


def attack_step_offset(x: AudioClip, delta: AudioClip, target: str,
                       model: AcousticModel, frontend: FrontendConfig,
                       r: int, hop: int) -> StepResult:
    """Gradient for one padding split: zeros(hop - r), x + delta, zeros(r).

    The gradient over the padded waveform is truncated by hop - r at the
    head and r at the tail, discarding exactly the entries that fell on
    the silence, so the result aligns with delta sample for sample.
    """
    if len(delta) != len(x):
        raise ValueError("delta must have the same length as x")
    padded = pad_with_offset(
        AudioClip(x.samples + delta.samples, x.sample_rate), r, hop
    )
    grad, loss = chain_gradient(padded, model.alphabet.encode(target), model, frontend)
    return StepResult(grad[hop - r : hop - r + len(x)], loss)


def attack_step_batch(x: AudioClip, delta: AudioClip, target: str,
                      model: AcousticModel, frontend: FrontendConfig,
                      batch_size: int, hop: int,
                      rng: np.random.Generator) -> StepResult:
    """Average the truncated gradients of batch_size random padding splits.

    Each split point is drawn uniformly from 1..hop; losses are averaged
    alongside the gradients. Draws come from the caller's generator so a
    whole attack is reproducible from one seed.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    offsets = rng.integers(1, hop + 1, size=batch_size)
    grad_sum = np.zeros(len(x))
    loss_sum = 0.0
    for r in offsets:
        grad, loss = attack_step_offset(x, delta, target, model, frontend, int(r), hop)
        grad_sum += grad
        loss_sum += loss
    return StepResult(grad_sum / batch_size, loss_sum / batch_size)


def run_attack(job: AttackJob, model: AcousticModel,
               frontend: FrontendConfig) -> AttackResult:
    """Iterate signed-gradient descent on delta under the distortion bound.

    delta starts at zero; every iteration applies the mode's gradient,
    steps against its sign, then projects delta into the amplitude box
    implied by the bound and keeps x + delta inside the PCM range — so
    the distortion ceiling holds after every iteration, not just at the
    end. The recorded loss is the value seen before that iteration's
    update (averaged over the batch in offset-training mode).
    """
    target = model.alphabet.encode(job.target)
    # require headroom of one hop so any padded-and-truncated variant
    # still offers enough frames for the target
    margin = len(job.original) - job.hop
    if required_frames(target) > frontend.frame_count(margin):
        raise ValueError(
            f"target {job.target!r} is too long for a {len(job.original)}-sample clip"
        )

    x = job.original.samples
    delta = np.zeros_like(x)
    half_box = job.bound.half_box()
    rng = np.random.default_rng(job.seed)
    history = []
    for iteration in range(job.iterations):
        delta_clip = AudioClip(delta, job.original.sample_rate)
        if job.mode == MODE_BASELINE:
            adv = AudioClip(x + delta, job.original.sample_rate)
            grad, loss = chain_gradient(adv, target, model, frontend)
        else:
            grad, loss = attack_step_batch(
                job.original, delta_clip, job.target, model, frontend,
                job.batch_size, job.hop, rng,
            )
        if not np.isfinite(loss):
            raise AttackDivergedError(iteration)
        history.append(float(loss))
        delta = delta - job.learning_rate * np.sign(grad)
        delta = np.clip(delta, -half_box, half_box)
        delta = np.clip(delta, -_PCM_SAFE - x, _PCM_SAFE - x)

    perturbation = AudioClip(delta, job.original.sample_rate)
    adversarial = AudioClip(x + delta, job.original.sample_rate)
    return AttackResult(
        perturbation=perturbation,
        adversarial=adversarial,
        loss_history=tuple(history),
        achieved_db=distortion_db(perturbation),
        iterations_run=job.iterations,
    )


def expected_offsets(iterations: int, hop: int) -> float:
    """Expected number of distinct padding splits seen in N draws.

    Drawing with replacement from hop equally likely values covers
    hop * (1 - ((hop-1)/hop)**N) distinct ones on average; about 306 of
    320 after a thousand draws.
    """
    if iterations < 0 or hop < 1:
        raise ValueError("need iterations >= 0 and hop >= 1")
    return hop * (1.0 - ((hop - 1) / hop) ** iterations)
