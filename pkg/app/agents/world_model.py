"""
File: app/agents/world_model.py
Description: The naive (observation-only) and privileged recurrent latent
world models, the oracle posterior that sees both embeddings, and the joint
training step on replayed sequences.

Latent states are (h, z): h is the recurrent vector, z a grouped one-hot
sample. s- is the naive posterior state, s+ the privileged one and s* the
oracle state (naive h with a z inferred from both embeddings).
"""

# Standard Library Imports
from dataclasses import dataclass
from typing import Dict, List, Optional

# Third-Party Imports
import numpy as np
from loguru import logger

# Internal Imports
from app.agents.schemas import WorldLosses
from app.core import grad as G
from app.core.config import LossConfig, ModelConfig, TrainingConfig
from app.core.distributions import CategoricalDistribution, kl_categorical
from app.core.errors import ConfigurationError
from app.core.nn import MLP, GRUCell, Linear, Module
from app.core.optim import Adam
from app.envs.replay import SequenceBatch


@dataclass
class Wiring:
    """Which components exist and what they read, per ablation variant."""

    variant: str = "full"
    privileged: bool = True  # privileged model and oracle posterior exist
    align: bool = True
    decode_from_star: bool = True  # naive decoder input s* (else s-)
    naive_decodes_priv: bool = True
    naive_heads: bool = False  # reward/cost heads on the naive model over s-
    critic_uses_priv: bool = True


@dataclass
class LatentState:
    h: G.Tensor  # [B, deter]
    z: G.Tensor  # [B, groups, classes]

    @property
    def batch_size(self) -> int:
        return self.h.shape[0]

    def features(self) -> G.Tensor:
        flat = self.z.reshape(self.z.shape[0], self.z.shape[1] * self.z.shape[2])
        return G.concat([self.h, flat], axis=-1)

    def detach(self) -> "LatentState":
        return LatentState(G.stop_gradient(self.h), G.stop_gradient(self.z))


def _as_rows(x: np.ndarray) -> np.ndarray:
    """[B, T, ...] -> [T * B, ...] in time-major order."""
    x = np.swapaxes(x, 0, 1)
    return x.reshape((x.shape[0] * x.shape[1],) + x.shape[2:])


def rep_loss(
    q: CategoricalDistribution,
    p: CategoricalDistribution,
    alpha: float = 0.1,
    beta: float = 0.5,
    free_bits: float = 0.0,
) -> G.Tensor:
    """
    alpha * KL[q || sg(p)] + beta * KL[sg(q) || p], averaged over the batch.
    With free_bits > 0 each group's KL is clamped below at that many nats
    before the groups are summed.
    """
    toward = kl_categorical(q, p.detach(), reduce_groups=False)
    back = kl_categorical(q.detach(), p, reduce_groups=False)
    if free_bits > 0.0:
        toward = G.maximum(toward, free_bits)
        back = G.maximum(back, free_bits)
    return alpha * toward.sum(axis=-1).mean() + beta * back.sum(axis=-1).mean()


def bernoulli_nll(logits: G.Tensor, target: np.ndarray) -> G.Tensor:
    """-log p(target | logits) summed over bits: softplus(x) - t * x."""
    return (G.softplus(logits) - logits * target).sum(axis=-1)


def gaussian_nll(mean: G.Tensor, target: np.ndarray) -> G.Tensor:
    """Unit-variance Gaussian, constant dropped; summed over the last axis."""
    return (0.5 * G.square(mean - target)).sum(axis=-1)


class Encoder(Module):
    def __init__(self, in_dim: int, config: ModelConfig, rng: np.random.Generator):
        self.in_dim = in_dim
        self.net = MLP([in_dim, config.hidden, config.embed], rng)

    def __call__(self, x: G.Tensor) -> G.Tensor:
        return self.net(x)


class Dynamics(Module):
    """Recurrent cell plus prior head; h_t = f(h_{t-1}, z_{t-1}, a_{t-1})."""

    def __init__(self, config: ModelConfig, num_actions: int, rng: np.random.Generator):
        self.groups = config.groups
        self.classes = config.classes
        self.num_actions = num_actions
        self.img_in = Linear(config.groups * config.classes + num_actions, config.hidden, rng)
        self.cell = GRUCell(config.hidden, config.deter, rng)
        self.prior_head = MLP([config.deter, config.hidden, config.groups * config.classes], rng)
        self.p_initial = G.parameter(np.zeros(config.deter))

    def distribution(self, logits: G.Tensor) -> CategoricalDistribution:
        return CategoricalDistribution(
            logits.reshape(logits.shape[0], self.groups, self.classes)
        )

    def prior(self, h: G.Tensor) -> CategoricalDistribution:
        return self.distribution(self.prior_head(h))

    def initial(self, batch_size: int) -> LatentState:
        h = G.add(np.zeros((batch_size, self.p_initial.shape[0])), G.tanh(self.p_initial))
        return LatentState(h=h, z=self.prior(h).mode())

    def step(self, previous: LatentState, action: G.Tensor) -> G.Tensor:
        """Advance h on (z, a); the prior over the new z is ``prior(h)``."""
        flat = previous.z.reshape(previous.batch_size, self.groups * self.classes)
        x = G.elu(self.img_in(G.concat([flat, G.as_tensor(action)], axis=-1)))
        return self.cell(x, previous.h)


def _reset(previous: LatentState, initial: LatentState, first: np.ndarray) -> LatentState:
    keep = 1.0 - first
    return LatentState(
        h=previous.h * keep[:, None] + initial.h * first[:, None],
        z=previous.z * keep[:, None, None] + initial.z * first[:, None, None],
    )


class NaiveWorldModel(Module):
    """Observation encoder, dynamics, posterior, oracle posterior and decoder."""

    def __init__(
        self,
        obs_dim: int,
        priv_dim: int,
        num_actions: int,
        config: ModelConfig,
        wiring: Wiring,
        rng: np.random.Generator,
    ):
        self.obs_dim = obs_dim
        self.priv_dim = priv_dim
        self.wiring = wiring
        feat = config.deter + config.groups * config.classes
        latent = config.groups * config.classes
        self.feature_dim = feat
        self.encoder = Encoder(obs_dim, config, rng)
        self.dynamics = Dynamics(config, num_actions, rng)
        self.posterior_head = MLP([config.deter + config.embed, config.hidden, latent], rng)
        self.oracle_head = (
            MLP([config.deter + 2 * config.embed, config.hidden, latent], rng)
            if wiring.privileged
            else None
        )
        decoded = obs_dim + (priv_dim if wiring.naive_decodes_priv else 0)
        self.decoder = MLP([feat, config.hidden, decoded], rng)
        if wiring.naive_heads:
            self.reward_head = MLP([feat, config.hidden, 1], rng, output_scale=0.0)
            self.cost_head = MLP([feat, config.hidden, 1], rng, output_scale=0.0)
        else:
            self.reward_head = self.cost_head = None

    def encode(self, obs) -> G.Tensor:
        return self.encoder(G.as_tensor(obs))

    def posterior_step(self, h: G.Tensor, **embeddings: G.Tensor) -> CategoricalDistribution:
        """Naive posterior from (h, e-); oracle posterior from (h, e-, e+)."""
        keys = set(embeddings)
        if keys == {"minus"}:
            head, inputs = self.posterior_head, [h, embeddings["minus"]]
        elif keys == {"minus", "plus"} and self.oracle_head is not None:
            head, inputs = self.oracle_head, [h, embeddings["minus"], embeddings["plus"]]
        else:
            raise ConfigurationError(
                f"naive model takes embeddings (minus) or (minus, plus), got {sorted(keys)}"
            )
        return self.dynamics.distribution(head(G.concat(inputs, axis=-1)))


class PrivilegedWorldModel(Module):
    """Privileged encoder, dynamics, posterior, decoder and the reward/cost heads."""

    def __init__(
        self,
        priv_dim: int,
        num_actions: int,
        config: ModelConfig,
        rng: np.random.Generator,
    ):
        feat = config.deter + config.groups * config.classes
        latent = config.groups * config.classes
        self.priv_dim = priv_dim
        self.feature_dim = feat
        self.predictor_inputs = config.predictor_inputs
        self.forward_calls = 0
        self.encoder = Encoder(priv_dim, config, rng)
        self.dynamics = Dynamics(config, num_actions, rng)
        self.posterior_head = MLP([config.deter + config.embed, config.hidden, latent], rng)
        self.decoder = MLP([feat, config.hidden, priv_dim], rng)
        self.reward_head = MLP([2 * feat, config.hidden, 1], rng, output_scale=0.0)
        self.cost_head = MLP([2 * feat, config.hidden, 1], rng, output_scale=0.0)

    def encode(self, priv) -> G.Tensor:
        self.forward_calls += 1
        return self.encoder(G.as_tensor(priv))

    def step(self, previous: LatentState, action: G.Tensor) -> G.Tensor:
        self.forward_calls += 1
        return self.dynamics.step(previous, action)

    def posterior_step(self, h: G.Tensor, **embeddings: G.Tensor) -> CategoricalDistribution:
        if set(embeddings) != {"plus"}:
            raise ConfigurationError(
                f"privileged posterior takes embedding (plus), got {sorted(embeddings)}"
            )
        inputs = G.concat([h, embeddings["plus"]], axis=-1)
        return self.dynamics.distribution(self.posterior_head(inputs))

    def predictor_features(self, star: G.Tensor, minus: G.Tensor, plus: G.Tensor) -> G.Tensor:
        second = plus if self.predictor_inputs == "star_plus" else minus
        return G.concat([star, second], axis=-1)


@dataclass
class PosteriorRollout:
    """Time-major posterior trajectories, each entry batch-first."""

    minus: List[LatentState]
    plus: List[LatentState]
    star: List[LatentState]

    @property
    def length(self) -> int:
        return len(self.minus)

    @staticmethod
    def _flatten(states: List[LatentState]) -> Optional[LatentState]:
        if not states:
            return None
        return LatentState(
            h=G.concat([s.h for s in states], axis=0),
            z=G.concat([s.z for s in states], axis=0),
        )

    def starts(self):
        """Every (t, b) posterior state as one batch of imagination starts."""
        return self._flatten(self.minus), self._flatten(self.plus)


class PIGWorldModel:
    """Both models, their joint optimizer and the composite loss."""

    def __init__(
        self,
        obs_dim: int,
        priv_dim: int,
        num_actions: int,
        model_config: ModelConfig,
        loss_config: LossConfig,
        training: TrainingConfig,
        wiring: Wiring,
        rng: np.random.Generator,
    ):
        self.config = model_config
        self.loss_config = loss_config
        self.wiring = wiring
        self.num_actions = num_actions
        self.naive = NaiveWorldModel(obs_dim, priv_dim, num_actions, model_config, wiring, rng)
        self.privileged = (
            PrivilegedWorldModel(priv_dim, num_actions, model_config, rng)
            if wiring.privileged
            else None
        )
        self.optimizer = Adam(self.parameters(), training.world_optimizer, name="world")
        self.updates = 0
        self.skipped_updates = 0

    def modules(self) -> Dict[str, Module]:
        found = {"naive": self.naive}
        if self.privileged is not None:
            found["privileged"] = self.privileged
        return found

    def parameters(self) -> List[G.Tensor]:
        return [p for m in self.modules().values() for p in m.parameters()]

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {}
        for name, module in self.modules().items():
            for key, value in module.state_dict().items():
                state[f"{name}.{key}"] = value
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, module in self.modules().items():
            prefix = f"{name}."
            module.load_state_dict(
                {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)}
            )

    # --- unroll ----------------------------------------------------------------

    def _unroll(self, batch: SequenceBatch, rng: np.random.Generator):
        B, T = batch.batch_size, batch.length
        naive, priv = self.naive, self.privileged
        e_minus = naive.encode(_as_rows(batch.obs)).reshape(T, B, -1)
        e_plus = (
            priv.encode(_as_rows(batch.priv)).reshape(T, B, -1)
            if priv is not None
            else None
        )

        init_minus = naive.dynamics.initial(B)
        init_plus = priv.dynamics.initial(B) if priv is not None else None
        state_minus, state_plus = init_minus, init_plus
        out = {"h_minus": [], "post_minus": [], "minus": [], "h_plus": [], "post_plus": [], "plus": []}
        for t in range(T):
            # Window starts are treated as resets: the earlier context is not replayed.
            first = np.ones(B) if t == 0 else batch.is_first[:, t]
            action = batch.action[:, t]
            state_minus = _reset(state_minus, init_minus, first)
            h = naive.dynamics.step(state_minus, action)
            post = naive.posterior_step(h, minus=e_minus[t])
            state_minus = LatentState(h, post.sample(rng))
            out["h_minus"].append(h)
            out["post_minus"].append(post.logits)
            out["minus"].append(state_minus)

            if priv is not None:
                state_plus = _reset(state_plus, init_plus, first)
                h_p = priv.step(state_plus, action)
                post_p = priv.posterior_step(h_p, plus=e_plus[t])
                state_plus = LatentState(h_p, post_p.sample(rng))
                out["h_plus"].append(h_p)
                out["post_plus"].append(post_p.logits)
                out["plus"].append(state_plus)
        out["e_minus"] = e_minus.reshape(T * B, -1)
        out["e_plus"] = None if e_plus is None else e_plus.reshape(T * B, -1)
        return out

    def _stack(self, states: List[LatentState]) -> G.Tensor:
        return PosteriorRollout._flatten(states).features()

    def compute_losses(self, batch: SequenceBatch, rng: np.random.Generator):
        """Composite loss tensors; returns (total, parts) with parts as floats."""
        cfg, wiring = self.loss_config, self.wiring
        naive, priv = self.naive, self.privileged
        out = self._unroll(batch, rng)

        h_minus = G.concat(out["h_minus"], axis=0)
        post_minus = CategoricalDistribution(G.concat(out["post_minus"], axis=0))
        prior_minus = naive.dynamics.prior(h_minus)
        feat_minus = self._stack(out["minus"])

        def dyn_term(post, prior):
            q, p = (prior, post) if cfg.dyn_order == "prior_first" else (post, prior)
            return rep_loss(q, p, cfg.alpha, cfg.beta, cfg.free_bits)

        loss_dyn = dyn_term(post_minus, prior_minus)
        loss_align = G.Tensor(0.0)
        kl_align = 0.0
        obs_target = _as_rows(batch.obs)
        priv_target = _as_rows(batch.priv)
        reward_target = _as_rows(batch.reward)
        cost_target = _as_rows(batch.cost)

        if priv is not None:
            h_plus = G.concat(out["h_plus"], axis=0)
            post_plus = CategoricalDistribution(G.concat(out["post_plus"], axis=0))
            loss_dyn = loss_dyn + dyn_term(post_plus, priv.dynamics.prior(h_plus))
            feat_plus = self._stack(out["plus"])

            e_plus = out["e_plus"]
            if self.config.detach_zplus_in_oracle:
                e_plus = G.stop_gradient(e_plus)
            star_dist = naive.posterior_step(h_minus, minus=out["e_minus"], plus=e_plus)
            star = LatentState(h_minus, star_dist.sample(rng))
            feat_star = star.features()
            kl_align = float(kl_categorical(star_dist, post_minus).data.mean())
            if wiring.align:
                loss_align = rep_loss(star_dist, post_minus, cfg.alpha, cfg.beta)

            decoded = naive.decoder(feat_star if wiring.decode_from_star else feat_minus)
            priv_decoded = priv.decoder(feat_plus)
            pred_in = priv.predictor_features(feat_star, feat_minus, feat_plus)
            reward_pred = priv.reward_head(pred_in)
            cost_pred = priv.cost_head(pred_in)
            loss_dec_priv = gaussian_nll(priv_decoded, priv_target).mean()
        else:
            decoded = naive.decoder(feat_minus)
            reward_pred = naive.reward_head(feat_minus)
            cost_pred = naive.cost_head(feat_minus)
            loss_dec_priv = G.Tensor(0.0)

        obs_logits = decoded[:, : naive.obs_dim]
        loss_dec = bernoulli_nll(obs_logits, obs_target).mean()
        if wiring.naive_decodes_priv:
            priv_mean = decoded[:, naive.obs_dim :]
            loss_dec = loss_dec + gaussian_nll(priv_mean, priv_target).mean()
        loss_dec = cfg.beta_obs * (loss_dec + loss_dec_priv)

        loss_pred = cfg.beta_reward * gaussian_nll(reward_pred, reward_target[:, None]).mean()
        loss_pred = loss_pred + cfg.beta_cost * gaussian_nll(
            cost_pred, cost_target[:, None]
        ).mean()

        total = loss_dyn + loss_align + loss_dec + loss_pred
        parts = {
            "dyn": loss_dyn.item(),
            "align": loss_align.item(),
            "dec": loss_dec.item(),
            "pred": loss_pred.item(),
            "kl_align": kl_align,
        }
        return total, parts

    def world_train_step(self, batch: SequenceBatch, rng: np.random.Generator) -> WorldLosses:
        """One joint update of both models on a replayed batch."""
        self.optimizer.zero_grad()
        total, parts = self.compute_losses(batch, rng)
        value = total.item()
        if not np.isfinite(value):
            self.skipped_updates += 1
            logger.warning(f"World loss is {value}; update skipped")
            return WorldLosses(
                dyn=0.0, align=0.0, dec=0.0, pred=0.0, total=value, skipped=True
            )
        G.backward(total)
        applied = self.optimizer.step()
        if applied:
            self.updates += 1
        else:
            self.skipped_updates += 1
        return WorldLosses(total=value, skipped=not applied, **parts)

    def rollout_posterior(self, batch: SequenceBatch, rng: np.random.Generator) -> PosteriorRollout:
        """Posterior trajectories (s-, s+, s*) without touching parameters."""
        with G.no_grad():
            out = self._unroll(batch, rng)
            star: List[LatentState] = []
            if self.privileged is not None:
                B = batch.batch_size
                for t, h in enumerate(out["h_minus"]):
                    rows = slice(t * B, (t + 1) * B)
                    dist = self.naive.posterior_step(
                        h, minus=out["e_minus"][rows], plus=out["e_plus"][rows]
                    )
                    star.append(LatentState(h, dist.sample(rng)))
        return PosteriorRollout(minus=out["minus"], plus=out["plus"], star=star)

    # --- deployment ----------------------------------------------------------

    def filter_step(
        self,
        state: Optional[LatentState],
        action: Optional[int],
        obs: np.ndarray,
        rng: np.random.Generator,
    ) -> LatentState:
        """Naive-only posterior update for acting; never touches the privileged model."""
        with G.no_grad():
            if state is None:
                state = self.naive.dynamics.initial(1)
                one_hot = np.zeros((1, self.num_actions))
            else:
                one_hot = np.zeros((1, self.num_actions))
                one_hot[0, action] = 1.0
            h = self.naive.dynamics.step(state, one_hot)
            embed = self.naive.encode(np.asarray(obs, dtype=np.float64)[None, :])
            post = self.naive.posterior_step(h, minus=embed)
            return LatentState(h, post.sample(rng))
