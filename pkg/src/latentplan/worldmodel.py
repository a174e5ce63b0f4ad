"""VAE observation model and mixture-density LSTM dynamics model.

The forward functions (``vae_forward``, ``lstm_step``, ``mdrnn_heads`` ...)
are written against :mod:`latentplan.autodiff` so that they build a graph
when handed :class:`~latentplan.autodiff.Tensor` parameters and run eagerly on
plain arrays otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from latentplan import autodiff as ad
from latentplan.autodiff import DomainError, ShapeError, Tensor
from latentplan.env import ACTION_DIM, OBS_DIM
from latentplan.planner import ForwardModel

LOG_SIGMA_MIN = -5.0
LOG_SIGMA_MAX = 2.0
BCE_EPS = 1e-7
LOG_2PI = float(np.log(2 * np.pi))


@dataclass(frozen=True)
class ModelDims:
    obs_dim: int = OBS_DIM
    latent_dim: int = 8
    hidden_dim: int = 64
    mixtures: int = 3
    action_dim: int = ACTION_DIM
    enc_hidden: tuple[int, int] = (256, 128)


@dataclass
class LatentGaussian:
    mu: np.ndarray
    sigma: np.ndarray


@dataclass
class GmmParams:
    """Mixture over latents. ``pi`` is ``(..., K)``, ``mu``/``sigma`` are ``(..., K, L)``."""

    pi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray


@dataclass
class StepPrediction:
    gmm: GmmParams
    reward_mean: np.ndarray
    terminal_p: np.ndarray


@dataclass
class WorldModelState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int, lanes: int | None = None, dtype=np.float32) -> WorldModelState:
        shape = (hidden_dim,) if lanes is None else (lanes, hidden_dim)
        return cls(np.zeros(shape, dtype), np.zeros(shape, dtype))

    def copy(self) -> WorldModelState:
        return WorldModelState(self.h.copy(), self.c.copy())

    def take(self, idx) -> WorldModelState:
        return WorldModelState(self.h[idx], self.c[idx])

    def put(self, idx, sub: WorldModelState) -> WorldModelState:
        h, c = self.h.copy(), self.c.copy()
        h[idx], c[idx] = sub.h, sub.c
        return WorldModelState(h, c)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def _init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float32):
    s = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-s, s, size=(fan_in, fan_out)).astype(dtype)
    b = rng.uniform(-s, s, size=(fan_out,)).astype(dtype)
    return w, b


def init_vae_params(dims: ModelDims, rng: np.random.Generator) -> dict[str, np.ndarray]:
    h1, h2 = dims.enc_hidden
    layers = [
        ("enc1", dims.obs_dim, h1),
        ("enc2", h1, h2),
        ("mu", h2, dims.latent_dim),
        ("logsigma", h2, dims.latent_dim),
        ("dec1", dims.latent_dim, h2),
        ("dec2", h2, h1),
        ("out", h1, dims.obs_dim),
    ]
    params = {}
    for name, fan_in, fan_out in layers:
        params[f"{name}.w"], params[f"{name}.b"] = _init_linear(rng, fan_in, fan_out)
    return params


def init_mdrnn_params(dims: ModelDims, rng: np.random.Generator) -> dict[str, np.ndarray]:
    H, K, L = dims.hidden_dim, dims.mixtures, dims.latent_dim
    n_in = L + dims.action_dim
    s = 1.0 / np.sqrt(n_in + H)
    params = {
        "lstm.wx": rng.uniform(-s, s, size=(n_in, 4 * H)).astype(np.float32),
        "lstm.wh": rng.uniform(-s, s, size=(H, 4 * H)).astype(np.float32),
        "lstm.b": rng.uniform(-s, s, size=(4 * H,)).astype(np.float32),
    }
    for name, width in [("pi", K), ("mu", K * L), ("logsigma", K * L), ("reward", 1), ("terminal", 1)]:
        params[f"{name}.w"], params[f"{name}.b"] = _init_linear(rng, H, width)
    return params


def _linear(p, name: str, x):
    return ad.add(ad.matmul(x, p[f"{name}.w"]), p[f"{name}.b"])


# ---------------------------------------------------------------------------
# VAE
# ---------------------------------------------------------------------------


def vae_encode_fn(p, obs):
    h = ad.relu(_linear(p, "enc1", obs))
    h = ad.relu(_linear(p, "enc2", h))
    mu = _linear(p, "mu", h)
    log_sigma = ad.clip(_linear(p, "logsigma", h), LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    return mu, log_sigma


def vae_decode_fn(p, z):
    h = ad.relu(_linear(p, "dec1", z))
    h = ad.relu(_linear(p, "dec2", h))
    return ad.sigmoid(_linear(p, "out", h))


def vae_loss_fn(obs, recon, mu, log_sigma, beta: float = 1.0):
    """Per-sample loss ``(B,)``: summed squared error plus ``beta`` times KL to N(0, I)."""
    rec = ad.sum(ad.square(ad.sub(obs, recon)), axis=-1)
    kl_terms = ad.sub(
        ad.mul(ad.add(ad.square(mu), ad.exp(ad.mul(log_sigma, 2.0))), 0.5),
        ad.add(log_sigma, 0.5),
    )
    kl = ad.sum(kl_terms, axis=-1)
    return ad.add(rec, ad.mul(kl, beta))


def vae_forward_loss(p, obs, eps, beta: float = 1.0):
    """Mean VAE loss over a batch with reparameterised noise ``eps``."""
    mu, log_sigma = vae_encode_fn(p, obs)
    z = ad.add(mu, ad.mul(ad.exp(log_sigma), eps))
    recon = vae_decode_fn(p, z)
    return ad.mean(vae_loss_fn(obs, recon, mu, log_sigma, beta))


@dataclass
class VAE:
    dims: ModelDims
    params: dict[str, np.ndarray]

    @classmethod
    def initialize(cls, dims: ModelDims, rng: np.random.Generator) -> VAE:
        return cls(dims, init_vae_params(dims, rng))

    def encode_batch(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        obs = np.asarray(obs, dtype=np.float32)
        if obs.ndim != 2 or obs.shape[1] != self.dims.obs_dim:
            raise ShapeError(f"observations must be (B, {self.dims.obs_dim}), got {obs.shape}")
        return vae_encode_fn(self.params, obs)

    def decode_batch(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float32)
        if z.ndim != 2 or z.shape[1] != self.dims.latent_dim:
            raise ShapeError(f"latents must be (B, {self.dims.latent_dim}), got {z.shape}")
        return vae_decode_fn(self.params, z)


def vae_encode(vae: VAE, obs) -> LatentGaussian:
    obs = np.asarray(obs, dtype=np.float32)
    if obs.shape != (vae.dims.obs_dim,):
        raise ShapeError(f"observation must have length {vae.dims.obs_dim}, got shape {obs.shape}")
    mu, log_sigma = vae.encode_batch(obs[None])
    return LatentGaussian(mu[0], np.exp(log_sigma[0]))


def vae_sample(g: LatentGaussian, rng: np.random.Generator) -> np.ndarray:
    eps = rng.standard_normal(np.shape(g.mu))
    return g.mu + g.sigma * eps


def vae_decode(vae: VAE, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float32)
    if z.shape != (vae.dims.latent_dim,):
        raise ShapeError(f"latent must have length {vae.dims.latent_dim}, got shape {z.shape}")
    return vae.decode_batch(z[None])[0]


def vae_loss(obs, recon, g: LatentGaussian, beta: float = 1.0) -> float:
    log_sigma = np.log(np.asarray(g.sigma, dtype=np.float64))
    mu = np.asarray(g.mu, dtype=np.float64)
    out = vae_loss_fn(np.asarray(obs, np.float64), np.asarray(recon, np.float64), mu, log_sigma, beta)
    return float(out)


# ---------------------------------------------------------------------------
# MDN-LSTM
# ---------------------------------------------------------------------------


def lstm_step(p, x, h, c):
    """One LSTM cell update; gate order in the fused weights is (i, f, g, o)."""
    gates = ad.add(ad.add(ad.matmul(x, p["lstm.wx"]), ad.matmul(h, p["lstm.wh"])), p["lstm.b"])
    H = ad._value(h).shape[-1]
    i = ad.sigmoid(gates[:, :H])
    f = ad.sigmoid(gates[:, H : 2 * H])
    g = ad.tanh(gates[:, 2 * H : 3 * H])
    o = ad.sigmoid(gates[:, 3 * H :])
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def mdrnn_heads(p, h, mixtures: int, latent_dim: int):
    """Linear heads on the hidden state.

    Returns ``(log_pi (B,K), mu (B,K,L), log_sigma (B,K,L), reward (B,), terminal_logit (B,))``.
    """
    B = ad._value(h).shape[0]
    log_pi = ad.log_softmax(_linear(p, "pi", h), axis=-1)
    mu = ad.reshape(_linear(p, "mu", h), (B, mixtures, latent_dim))
    log_sigma = ad.clip(
        ad.reshape(_linear(p, "logsigma", h), (B, mixtures, latent_dim)), LOG_SIGMA_MIN, LOG_SIGMA_MAX
    )
    reward = ad.reshape(_linear(p, "reward", h), (B,))
    terminal_logit = ad.reshape(_linear(p, "terminal", h), (B,))
    return log_pi, mu, log_sigma, reward, terminal_logit


def gmm_log_prob(log_pi, mu, log_sigma, z):
    """Log density ``(B,)`` of ``z (B, L)`` under diagonal Gaussian mixtures."""
    zb = ad.reshape(z, (ad._value(z).shape[0], 1, ad._value(z).shape[-1]))
    scaled = ad.mul(ad.sub(zb, mu), ad.exp(ad.mul(log_sigma, -1.0)))
    comp = ad.sub(
        ad.mul(ad.sum(ad.square(scaled), axis=-1), -0.5),
        ad.add(ad.sum(log_sigma, axis=-1), 0.5 * ad._value(z).shape[-1] * LOG_2PI),
    )
    return ad.logsumexp(ad.add(log_pi, comp), axis=-1)


def bce(p, tau):
    p = ad.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return ad.mul(
        ad.add(ad.mul(ad.log(p), tau), ad.mul(ad.log(ad.sub(1.0, p)), ad.sub(1.0, tau))), -1.0
    )


def mdrnn_loss_terms(heads, z_next, reward, terminal):
    """Per-sample ``(gmm_nll, mse, bce)`` from head outputs, each ``(B,)``."""
    log_pi, mu, log_sigma, reward_mean, terminal_logit = heads
    nll = ad.mul(gmm_log_prob(log_pi, mu, log_sigma, z_next), -1.0)
    mse = ad.square(ad.sub(reward, reward_mean))
    ce = bce(ad.sigmoid(terminal_logit), terminal)
    return nll, mse, ce


@dataclass
class MDRNN:
    dims: ModelDims
    params: dict[str, np.ndarray]

    @classmethod
    def initialize(cls, dims: ModelDims, rng: np.random.Generator) -> MDRNN:
        return cls(dims, init_mdrnn_params(dims, rng))

    def step_batch(self, z: np.ndarray, a: np.ndarray, state: WorldModelState):
        """Batched step: returns ``(log_pi, mu, log_sigma, reward, terminal_p), next_state``."""
        L, A = self.dims.latent_dim, self.dims.action_dim
        z = np.asarray(z, dtype=np.float32)
        a = np.asarray(a, dtype=np.float32)
        if z.ndim != 2 or z.shape[1] != L or a.shape != (z.shape[0], A):
            raise ShapeError(f"expected z (B, {L}) and a (B, {A}), got {z.shape} and {a.shape}")
        x = np.concatenate([z, a], axis=1)
        h, c = lstm_step(self.params, x, state.h, state.c)
        log_pi, mu, log_sigma, reward, term = mdrnn_heads(self.params, h, self.dims.mixtures, L)
        return (log_pi, mu, log_sigma, reward, ad.sigmoid(term)), WorldModelState(h, c)


def mdrnn_step(mdrnn: MDRNN, z, a, state: WorldModelState) -> tuple[StepPrediction, WorldModelState]:
    """Single-lane step; inputs are not modified."""
    z = np.asarray(z, dtype=np.float32)
    a = np.asarray(a, dtype=np.float32)
    if z.shape != (mdrnn.dims.latent_dim,) or a.shape != (mdrnn.dims.action_dim,):
        raise ShapeError(f"bad step input shapes z={z.shape} a={a.shape}")
    if state.h.shape != (mdrnn.dims.hidden_dim,):
        raise ShapeError(f"state must have length {mdrnn.dims.hidden_dim}, got {state.h.shape}")
    lane_state = WorldModelState(state.h[None], state.c[None])
    (log_pi, mu, log_sigma, reward, tp), nxt = mdrnn.step_batch(z[None], a[None], lane_state)
    gmm = GmmParams(np.exp(log_pi[0]), mu[0], np.exp(log_sigma[0]))
    pred = StepPrediction(gmm, float(reward[0]), float(tp[0]))
    return pred, WorldModelState(nxt.h[0], nxt.c[0])


def gmm_nll(g: GmmParams, z_next):
    """Negative log-likelihood of ``z_next`` under ``g``.

    Accepts arrays (returns a float) or autodiff tensors (returns a scalar node).
    """
    if np.any(ad._value(g.sigma) <= 0):
        raise DomainError("gmm_nll: sigma must be strictly positive")
    if isinstance(g.pi, Tensor):
        log_pi = ad.log(g.pi)
    else:
        with np.errstate(divide="ignore"):
            log_pi = np.log(np.asarray(g.pi, dtype=np.float64))
    log_sigma = ad.log(g.sigma) if isinstance(g.sigma, Tensor) else np.log(np.asarray(g.sigma, np.float64))
    mu = g.mu if isinstance(g.mu, Tensor) else np.asarray(g.mu, np.float64)
    z = z_next if isinstance(z_next, Tensor) else np.asarray(z_next, np.float64)
    K, L = ad._value(mu).shape
    out = gmm_log_prob(
        ad.reshape(log_pi, (1, K)),
        ad.reshape(mu, (1, K, L)),
        ad.reshape(log_sigma, (1, K, L)),
        ad.reshape(z, (1, L)),
    )
    nll = ad.mul(ad.reshape(out, ()), -1.0)
    return nll if isinstance(nll, Tensor) else float(nll)


def mdrnn_loss(pred: StepPrediction, z_next, r: float, tau: int) -> float:
    """Unweighted sum of reward MSE, terminal BCE and GMM NLL for one step."""
    mse = (float(r) - float(pred.reward_mean)) ** 2
    p = float(np.clip(pred.terminal_p, BCE_EPS, 1.0 - BCE_EPS))
    ce = -(tau * np.log(p) + (1 - tau) * np.log(1.0 - p))
    return mse + ce + gmm_nll(pred.gmm, z_next)


def sample_next_latent(g: GmmParams, rng: np.random.Generator) -> np.ndarray:
    pi = np.asarray(g.pi, dtype=np.float64)
    k = rng.choice(len(pi), p=pi / pi.sum())
    return g.mu[k] + g.sigma[k] * rng.standard_normal(g.mu.shape[-1])


def expected_next_latent(g: GmmParams) -> np.ndarray:
    """Mean of the most probable component (lowest index on ties)."""
    return np.asarray(g.mu)[int(np.argmax(g.pi))]


# ---------------------------------------------------------------------------
# the combined world model used for planning
# ---------------------------------------------------------------------------


@dataclass
class WorldModel(ForwardModel):
    """VAE + MDN-LSTM exposed through the planner's forward-model protocol.

    Latents are propagated through the mean of the most probable mixture
    component unless ``sample_latents`` is set, in which case they are drawn
    from the mixture with ``rng``.
    """

    vae: VAE
    mdrnn: MDRNN
    sample_latents: bool = False
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    @property
    def dims(self) -> ModelDims:
        return self.vae.dims

    def encode(self, obs):
        return self.vae.encode_batch(np.asarray(obs, dtype=np.float32))[0]

    def initial_state(self, lanes: int) -> WorldModelState:
        return WorldModelState.zeros(self.mdrnn.dims.hidden_dim, lanes)

    def advance(self, z, actions, state: WorldModelState) -> WorldModelState:
        return self.mdrnn.step_batch(z, actions, state)[1]

    def lane(self, z, state: WorldModelState):
        return np.asarray(z)[None], WorldModelState(state.h[None], state.c[None])

    def take(self, state: WorldModelState, idx):
        return state.take(idx)

    def put(self, state: WorldModelState, idx, sub: WorldModelState):
        return state.put(idx, sub)

    def _next_latent(self, log_pi, mu, log_sigma):
        lanes = np.arange(mu.shape[0])
        if not self.sample_latents:
            return mu[lanes, np.argmax(log_pi, axis=1)]
        pi = np.exp(log_pi.astype(np.float64))
        u = self.rng.random(len(lanes))[:, None]
        k = np.minimum((np.cumsum(pi, axis=1) < u).sum(axis=1), pi.shape[1] - 1)
        eps = self.rng.standard_normal((mu.shape[0], mu.shape[2])).astype(mu.dtype)
        return mu[lanes, k] + np.exp(log_sigma[lanes, k]) * eps

    def imagine(self, z, state: WorldModelState, plans: np.ndarray, return_latents: bool = False):
        lanes, horizon, _ = plans.shape
        rewards = np.zeros((lanes, horizon))
        terminal_p = np.zeros((lanes, horizon))
        latents = np.zeros((lanes, horizon + 1, self.dims.latent_dim), dtype=np.float32)
        latents[:, 0] = z
        for t in range(horizon):
            (log_pi, mu, log_sigma, reward, tp), state = self.mdrnn.step_batch(z, plans[:, t], state)
            rewards[:, t] = reward
            terminal_p[:, t] = tp
            z = self._next_latent(log_pi, mu, log_sigma)
            latents[:, t + 1] = z
        if return_latents:
            return rewards, terminal_p, latents
        return rewards, terminal_p

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {f"vae.{k}": v for k, v in self.vae.params.items()}
        out.update({f"mdrnn.{k}": v for k, v in self.mdrnn.params.items()})
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], **kwargs) -> WorldModel:
        vae_params = {k[4:]: v for k, v in tensors.items() if k.startswith("vae.")}
        mdrnn_params = {k[6:]: v for k, v in tensors.items() if k.startswith("mdrnn.")}
        if not vae_params or not mdrnn_params:
            raise ValueError("checkpoint must contain both vae.* and mdrnn.* tensors")
        dims = dims_from_params(vae_params, mdrnn_params)
        return cls(VAE(dims, vae_params), MDRNN(dims, mdrnn_params), **kwargs)


def dims_from_params(vae_params=None, mdrnn_params=None) -> ModelDims:
    kw = {}
    if vae_params:
        kw["obs_dim"], h1 = vae_params["enc1.w"].shape
        h2 = vae_params["enc2.w"].shape[1]
        kw["enc_hidden"] = (h1, h2)
        kw["latent_dim"] = vae_params["mu.w"].shape[1]
    if mdrnn_params:
        H = mdrnn_params["lstm.wh"].shape[0]
        K = mdrnn_params["pi.w"].shape[1]
        kw["hidden_dim"], kw["mixtures"] = H, K
        kw["latent_dim"] = mdrnn_params["mu.w"].shape[1] // K
        kw["action_dim"] = mdrnn_params["lstm.wx"].shape[0] - kw["latent_dim"]
    return ModelDims(**kw)
