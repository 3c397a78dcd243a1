"""Model assembly and the policy head: max-pool, LSTM stack, action heads.

A Model bundles every parameter (frozen encoder/backbone entries plus
the trainable resampler, cross-attention, and head entries) in one
ParamSet, the closed vocabulary, and the depth statistics the pipeline
normalizes against. The per-step policy composes:

    depth preprocessing -> frozen patch encoder -> resampler ->
    fused tokens -> gated cross-attention stack -> token max-pool ->
    LSTM -> pose / gripper MLP heads

Relative pose output is tanh-squashed and scaled to the per-step clip
bound; the gripper logit binarizes at probability 0.5 with ties
resolving to open.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import decoder as dec
from . import depth as dp
from . import encoders as enc
from . import numerics as nm
from . import sim
from .config import ModelConfig
from .errors import ContractError, DimensionError, MinivlaError
from .numerics import ParamSet, Tensor

Array = np.ndarray

LSTM_GATES = 4  # input, forget, cell, output; concatenated in that order


@dataclass
class Instruction:
    text: str
    ids: list[int]
    embedded: Array  # (M, d), rows of the frozen table


@contextlib.contextmanager
def _stage(name: str):
    """Tag sub-module errors with the pipeline stage they came from."""
    try:
        yield
    except MinivlaError as e:
        raise type(e)(f"[stage={name}] {e}") from e


class Model:
    """Parameters, vocabulary, and depth statistics for one policy."""

    def __init__(self, cfg: ModelConfig, params: ParamSet, vocab: list[str],
                 depth_stats: dp.DepthStats | None = None):
        self.cfg = cfg
        self.params = params
        self.vocab = vocab
        self.vocab_index = {w: i for i, w in enumerate(vocab)}
        self.depth_stats = depth_stats
        self._instr_cache: dict[str, Instruction] = {}

    # -- parameter views ----------------------------------------------------

    def vit_arrays(self) -> dict[str, Array]:
        prefix = "vit."
        return {name[len(prefix):]: t.data
                for name, t in self.params.items() if name.startswith(prefix)}

    def resampler_tensors(self, modality: str) -> dict[str, Tensor]:
        prefix = ("resampler.shared."
                  if not self.cfg.sep_resampler else f"resampler.{modality}.")
        return {key: self.params[prefix + key] for key in ("latents", "wk", "wv")}

    def decoder_layers(self) -> list[dict[str, Tensor]]:
        layers = []
        for l in range(self.cfg.decoder_layers):
            prefix = f"decoder.{l}."
            layer = {name[len(prefix):]: t for name, t in self.params.items()
                     if name.startswith(prefix)}
            layers.append(layer)
        return layers

    def embedding_table(self) -> Array:
        return self.params["embed.table"].data

    def instruction(self, text: str) -> Instruction:
        cached = self._instr_cache.get(text)
        if cached is not None:
            return cached
        ids = dec.tokenize(text, self.vocab_index)
        instr = Instruction(text, ids, dec.embed_ids(self.embedding_table(), ids))
        self._instr_cache[text] = instr
        return instr


def init_model(cfg: ModelConfig, depth_stats: dp.DepthStats | None = None) -> Model:
    """Seed-fixed initialization.

    Separate-resampler models clone one proto resampler into both
    modalities, so shared and separate variants start out functionally
    identical.
    """
    cfg.validate()
    ss = np.random.SeedSequence(cfg.seed)
    rng_vit, rng_embed, rng_res, rng_dec, rng_head = [
        np.random.default_rng(s) for s in ss.spawn(5)
    ]
    params = ParamSet()

    for name, arr in enc.init_vit_arrays(cfg.image_hw, cfg.patch, cfg.d_model,
                                         cfg.vit_blocks, rng_vit).items():
        params.add(f"vit.{name}", arr, trainable=False)

    vocab = dec.build_vocab(sim.vocabulary_words())
    params.add("embed.table",
               dec.init_embedding_array(len(vocab), cfg.d_model, rng_embed),
               trainable=False)

    proto = enc.init_resampler_arrays(cfg.resampler_k, cfg.d_model, cfg.d_model,
                                      rng_res, pos_embed=params["vit.pos_embed"].data)
    if cfg.sep_resampler:
        for modality in ("rgb", "depth"):
            for key, arr in proto.items():
                params.add(f"resampler.{modality}.{key}", arr.copy(), trainable=True)
    else:
        for key, arr in proto.items():
            params.add(f"resampler.shared.{key}", arr, trainable=True)

    for l in range(cfg.decoder_layers):
        for key, arr in dec.init_decoder_layer_arrays(cfg.d_model, rng_dec,
                                                      cfg.gate_init).items():
            params.add(f"decoder.{l}.{key}", arr, trainable=key.startswith("cross."))

    d, r = cfg.d_model, cfg.lstm_width
    for i in range(cfg.lstm_layers):
        d_in = d if i == 0 else r
        params.add(f"head.lstm.{i}.wx",
                   rng_head.normal(0.0, d_in ** -0.5, size=(d_in, LSTM_GATES * r)),
                   trainable=True)
        params.add(f"head.lstm.{i}.wh",
                   rng_head.normal(0.0, r ** -0.5, size=(r, LSTM_GATES * r)),
                   trainable=True)
        # Input and output gates start open and the forget gate mildly
        # retentive, so early hidden states track the current features and
        # the encoder path gets usable gradients from step one.
        bias = np.zeros(LSTM_GATES * r)
        bias[:r] = 1.5
        bias[r:2 * r] = 1.0
        bias[3 * r:] = 1.5
        params.add(f"head.lstm.{i}.b", bias, trainable=True)
    for head, width in (("pose", 6), ("gripper", 1)):
        params.add(f"head.{head}.w1", rng_head.normal(0.0, r ** -0.5, size=(r, r)),
                   trainable=True)
        params.add(f"head.{head}.b1", np.zeros(r), trainable=True)
        params.add(f"head.{head}.w2", rng_head.normal(0.0, 0.1 * r ** -0.5, size=(r, width)),
                   trainable=True)
        params.add(f"head.{head}.b2", np.zeros(width), trainable=True)

    return Model(cfg, params, vocab, depth_stats)


# --- policy-head primitives ---------------------------------------------------


def maxpool_tokens(tokens: Tensor) -> Tensor:
    """Column-wise max over the token dimension; (M, d) -> (1, d)."""
    return nm.max_over_rows(tokens)


def lstm_step(x: Tensor, prev: list[tuple[Tensor, Tensor]], model: Model
              ) -> tuple[Tensor, list[tuple[Tensor, Tensor]]]:
    """Standard stacked LSTM recurrence; returns (top h, new state)."""
    cfg = model.cfg
    if len(prev) != cfg.lstm_layers:
        raise DimensionError(
            f"hidden state has {len(prev)} layers, model expects {cfg.lstm_layers}"
        )
    r = cfg.lstm_width
    new_state: list[tuple[Tensor, Tensor]] = []
    inp = x
    for i, (h, c) in enumerate(prev):
        if h.shape != (1, r) or c.shape != (1, r):
            raise DimensionError(f"hidden slot {i} has shape {h.shape}, want (1, {r})")
        wx = model.params[f"head.lstm.{i}.wx"]
        wh = model.params[f"head.lstm.{i}.wh"]
        b = model.params[f"head.lstm.{i}.b"]
        if inp.shape[1] != wx.shape[0]:
            raise DimensionError(
                f"lstm layer {i} input width {inp.shape[1]} vs weights {wx.shape}"
            )
        z = nm.add(nm.add(nm.matmul(inp, wx), nm.matmul(h, wh)), b)
        i_gate = nm.sigmoid(nm.slice_cols(z, 0, r))
        f_gate = nm.sigmoid(nm.slice_cols(z, r, 2 * r))
        g_cell = nm.tanh(nm.slice_cols(z, 2 * r, 3 * r))
        o_gate = nm.sigmoid(nm.slice_cols(z, 3 * r, 4 * r))
        c_new = nm.add(nm.mul(f_gate, c), nm.mul(i_gate, g_cell))
        h_new = nm.mul(o_gate, nm.tanh(c_new))
        new_state.append((h_new, c_new))
        inp = h_new
    return inp, new_state


def action_heads(h_top: Tensor, model: Model) -> tuple[Tensor, Tensor]:
    """(pose (1,6) scaled into the clip bound, raw gripper logit (1,1))."""
    p = model.params
    pose = nm.mul(
        nm.tanh(nm.mlp2(h_top, p["head.pose.w1"], p["head.pose.b1"],
                        p["head.pose.w2"], p["head.pose.b2"])),
        nm.as_tensor(model.cfg.pose_clip),
    )
    logit = nm.mlp2(h_top, p["head.gripper.w1"], p["head.gripper.b1"],
                    p["head.gripper.w2"], p["head.gripper.b2"])
    return pose, logit


def reset_hidden(model: Model) -> list[tuple[Tensor, Tensor]]:
    r = model.cfg.lstm_width
    return [(Tensor(np.zeros((1, r))), Tensor(np.zeros((1, r))))
            for _ in range(model.cfg.lstm_layers)]


# --- observation encoding (frozen; numpy only) ---------------------------------


def encode_observation(model: Model, obs: sim.Observation) -> tuple[Array, Array]:
    """Frozen token sequences (X_rgb, X_depth), each (2N, d) float64."""
    cfg = model.cfg
    vit = model.vit_arrays()
    with _stage("depth_pipeline"):
        if cfg.depth_input == "constant":
            flat = np.full((cfg.image_hw, cfg.image_hw), sim.Z_CAM)
            d_static = d_gripper = flat
        else:
            d_static = np.asarray(obs.depth_static, dtype=np.float64)
            d_gripper = np.asarray(obs.depth_gripper, dtype=np.float64)
        if model.depth_stats is None:
            raise ContractError("model has no depth statistics; compute stats first")
        depth_a = dp.preprocess_depth(d_static, model.depth_stats)
        depth_b = dp.preprocess_depth(d_gripper, model.depth_stats)
    with _stage("encoder"):
        x_rgb = enc.vit_encode_pair(obs.rgb_static, obs.rgb_gripper, vit,
                                    cfg.patch, cfg.vit_blocks)
        x_depth = enc.vit_encode_pair(depth_a, depth_b, vit,
                                      cfg.patch, cfg.vit_blocks)
    return x_rgb, x_depth


# --- full per-step policy -------------------------------------------------------


def fused_tokens(model: Model, encoded: tuple[Array, Array]) -> Tensor:
    """Resample both modalities and concatenate (RGB first)."""
    x_rgb, x_depth = encoded
    rs_rgb = model.resampler_tensors("rgb")
    rs_depth = model.resampler_tensors("depth")
    xv = enc.resample(x_rgb, rs_rgb["latents"], rs_rgb["wk"], rs_rgb["wv"])
    xde = enc.resample(x_depth, rs_depth["latents"], rs_depth["wk"], rs_depth["wv"])
    return enc.fuse_concat(xv, xde)


def policy_core(model: Model, encoded: tuple[Array, Array], instr: Instruction,
                hidden: list[tuple[Tensor, Tensor]]
                ) -> tuple[Tensor, Tensor, list[tuple[Tensor, Tensor]]]:
    """Differentiable step: returns (pose (1,6), gripper logit (1,1), state)."""
    with _stage("resampler"):
        xvde = fused_tokens(model, encoded)
    with _stage("fusion_decoder"):
        x = dec.decode(Tensor(instr.embedded), xvde, model.decoder_layers())
    with _stage("policy_head"):
        pooled = maxpool_tokens(x)
        h_top, new_hidden = lstm_step(pooled, hidden, model)
        pose, logit = action_heads(h_top, model)
    return pose, logit, new_hidden


def policy_step(model: Model, obs: sim.Observation, instruction,
                hidden: list[tuple[Tensor, Tensor]]
                ) -> tuple[sim.Action, list[tuple[Tensor, Tensor]]]:
    """Observation + instruction -> executable action (gripper binarized)."""
    instr = instruction if isinstance(instruction, Instruction) \
        else model.instruction(instruction)
    encoded = encode_observation(model, obs)
    pose, logit, new_hidden = policy_core(model, encoded, instr, hidden)
    closed = logit.item() > 0.0  # p > 0.5; an exact tie stays open
    return sim.Action(pose.data.reshape(6).copy(), closed), new_hidden


class PolicyAgent:
    """Pixels-only rollout adapter around a Model (no world-state access)."""

    def __init__(self, model: Model):
        self.model = model
        self._hidden = reset_hidden(model)

    def reset(self):
        self._hidden = reset_hidden(self.model)

    def begin_task(self, task, instruction: str):
        pass

    def act(self, obs: sim.Observation, instruction: str, state=None) -> sim.Action:
        with nm.no_grad():
            action, self._hidden = policy_step(self.model, obs, instruction, self._hidden)
        return action
