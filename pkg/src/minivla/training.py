"""Imitation objective, trainable-parameter selection, Adam, train loop.

The objective per trajectory sums over timesteps: mean squared error
over the six pose dims (mean over dims keeps the gripper weight
scale-free) plus lambda times logit-form binary cross-entropy on the
gripper bit. Training is teacher-forced behavior cloning: observations
come from the demonstration, hidden state carries across its steps, and
one Adam update runs per batch of trajectories (batch size 1 by
default). Only the resampler(s), the cross-attention sublayers with
their gates, and the policy head ever receive updates; the encoder,
self-attention blocks, and embedding table stay frozen.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from . import policy as pol
from . import sim
from .config import TrainConfig
from .errors import ContractError, DivergedTrainingError
from .numerics import ParamSet, Tensor

Array = np.ndarray

FROZEN_PREFIXES = ("vit.", "embed.")


def trainable_parameter_set(model: pol.Model) -> ParamSet:
    """Exactly the resampler(s), cross-attention (incl. gates), and head."""
    return model.params.subset(lambda name: model.params[name].requires_grad)


def frozen_checksum(model: pol.Model) -> tuple[float, ...]:
    """Fingerprint of every frozen group; unchanged by any training run."""
    p = model.params
    return (p.checksum("vit."), p.checksum("embed."),
            sum(p.checksum(f"decoder.{l}.self.")
                for l in range(model.cfg.decoder_layers)))


def imitation_loss(preds, demo, lam: float) -> tuple[Tensor, Tensor, Tensor]:
    """(total, pose_mse_sum, gripper_bce_sum) over one trajectory.

    preds: per-step (pose (1,6) Tensor, gripper logit (1,1) Tensor).
    demo: per-step expert sim.Action.
    """
    if len(preds) != len(demo):
        raise ContractError(
            f"prediction/demonstration length mismatch: {len(preds)} vs {len(demo)}"
        )
    if not preds:
        raise ContractError("imitation loss needs at least one step")
    if lam < 0:
        raise ContractError(f"lambda_gripper must be >= 0, got {lam}")
    mse_sum = None
    bce_sum = None
    for (pose, logit), action in zip(preds, demo):
        target = Tensor(np.asarray(action.pose, dtype=np.float64).reshape(1, 6))
        label = Tensor([[1.0 if action.gripper_closed else 0.0]])
        step_mse = nm.mse(pose, target)
        step_bce = nm.bce_with_logits(logit, label)
        mse_sum = step_mse if mse_sum is None else nm.add(mse_sum, step_mse)
        bce_sum = step_bce if bce_sum is None else nm.add(bce_sum, step_bce)
    total = nm.add(mse_sum, nm.mul(nm.as_tensor(lam), bce_sum))
    return total, mse_sum, bce_sum


class Adam:
    """Bias-corrected adaptive-moment updates over a trainable ParamSet."""

    def __init__(self, cfg: TrainConfig):
        self.lr = cfg.learning_rate
        self.b1, self.b2 = cfg.betas
        self.eps = cfg.adam_eps
        self.clip_norm = cfg.clip_norm
        self.t = 0
        self._m: dict[str, Array] = {}
        self._v: dict[str, Array] = {}

    def step(self, trainables: ParamSet) -> None:
        grads: list[tuple[str, Tensor, Array]] = []
        sq = 0.0
        for name, tensor in trainables.trainable_items():
            g = tensor.grad
            if g is None:
                g = np.zeros_like(tensor.data)
            if not np.isfinite(g).all():
                raise DivergedTrainingError(f"non-finite gradient in {name}")
            grads.append((name, tensor, g))
            sq += float((g * g).sum())
        norm = np.sqrt(sq)
        scale = self.clip_norm / norm if norm > self.clip_norm else 1.0

        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, tensor, g in grads:
            g = g * scale
            m = self._m.setdefault(name, np.zeros_like(tensor.data))
            v = self._v.setdefault(name, np.zeros_like(tensor.data))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            tensor.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    mse: float
    bce: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epochs[-1].loss if self.epochs else float("nan")


def encode_dataset(model: pol.Model, dataset: list[sim.Trajectory]):
    """Precompute the frozen token sequences once; they never change
    under teacher forcing."""
    encoded = []
    for traj in dataset:
        instr = model.instruction(traj.instruction)
        steps = [pol.encode_observation(model, obs) for obs, _ in traj.steps]
        actions = [action for _, action in traj.steps]
        encoded.append((instr, steps, actions))
    return encoded


def _trajectory_loss(model: pol.Model, instr, enc_steps, actions, lam: float):
    hidden = pol.reset_hidden(model)
    preds = []
    for encoded in enc_steps:
        pose, logit, hidden = pol.policy_core(model, encoded, instr, hidden)
        preds.append((pose, logit))
    return imitation_loss(preds, actions, lam)


def train_run(dataset: list[sim.Trajectory], model: pol.Model, cfg: TrainConfig,
              on_epoch=None) -> TrainReport:
    """Seed-fixed shuffled epochs of per-batch updates; deterministic.

    on_epoch(epoch_index, EpochStats) fires after each epoch (checkpoint
    hooks plug in there). Raises DivergedTrainingError (with the epoch
    index) if the loss goes non-finite.
    """
    if not dataset:
        raise ContractError("training needs a nonempty dataset")
    cfg.validate()
    trainables = trainable_parameter_set(model)
    optimizer = Adam(cfg)
    shuffle_rng = np.random.default_rng(cfg.seed)
    encoded = encode_dataset(model, dataset)

    report = TrainReport()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(encoded))
        loss_sum = mse_sum = bce_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            trainables.zero_grads()
            totals = []
            for idx in batch:
                instr, enc_steps, actions = encoded[idx]
                total, mse_t, bce_t = _trajectory_loss(
                    model, instr, enc_steps, actions, cfg.lambda_gripper)
                if not np.isfinite(total.data):
                    raise DivergedTrainingError(f"loss diverged at epoch {epoch}")
                totals.append(total)
                loss_sum += total.item()
                mse_sum += mse_t.item()
                bce_sum += bce_t.item()
            batch_loss = totals[0] if len(totals) == 1 else nm.mul(
                nm.as_tensor(1.0 / len(totals)),
                _sum_tensors(totals),
            )
            nm.backward(batch_loss, trainables)
            optimizer.step(trainables)
        n = len(encoded)
        stats = EpochStats(epoch, loss_sum / n, mse_sum / n, bce_sum / n,
                           time.perf_counter() - t0)
        report.epochs.append(stats)
        if on_epoch is not None:
            on_epoch(epoch, stats)
    return report


def _sum_tensors(tensors):
    acc = tensors[0]
    for t in tensors[1:]:
        acc = nm.add(acc, t)
    return acc


def full_model_gradcheck(seed: int = 7, eps: float = 1e-5) -> nm.GradCheckResult:
    """Finite differences over every trainable entry of a complete policy.

    Exercises the whole composition (depth pipeline, frozen encoder,
    resampler, 2-layer fusion stack, recurrent head, loss) on a 2-step
    synthetic batch. Dims are the smallest that keep every stage present,
    so the check finishes in well under a minute.
    """
    from . import depth as dp
    from .config import ModelConfig

    cfg = ModelConfig(image_hw=8, patch=4, d_model=16, vit_blocks=1,
                      resampler_k=2, decoder_layers=2, lstm_layers=2,
                      lstm_width=8, seed=seed)
    rng = np.random.default_rng(seed)

    def synth_obs():
        return sim.Observation(
            rgb_static=rng.random((8, 8, 3)).astype(np.float32),
            rgb_gripper=rng.random((8, 8, 3)).astype(np.float32),
            depth_static=(0.6 + 0.4 * rng.random((8, 8))).astype(np.float32),
            depth_gripper=(0.6 + 0.4 * rng.random((8, 8))).astype(np.float32),
        )

    observations = [synth_obs(), synth_obs()]
    stats = dp.compute_stats(
        [o.depth_static for o in observations] + [o.depth_gripper for o in observations])
    model = pol.init_model(cfg, stats)
    for layer in model.decoder_layers():
        layer["cross.alpha"].data = np.asarray(0.3)

    actions = []
    for _ in range(2):
        pose = np.zeros(6)
        pose[:3] = rng.uniform(-0.06, 0.06, size=3)
        actions.append(sim.Action(pose, bool(rng.random() < 0.5)))
    instr = model.instruction("lift the red block")
    encoded = [pol.encode_observation(model, o) for o in observations]

    def f(params):
        total, _, _ = _trajectory_loss(model, instr, encoded, actions, 1.0)
        return total

    return nm.grad_check(f, trainable_parameter_set(model), eps=eps)
