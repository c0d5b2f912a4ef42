"""Encoder/decoder pairs with a reparameterized diagonal-Gaussian latent.

Two architectures:

* ``conv64`` -- for 1x64x64 inputs: four 4x4 stride-2 convolutions
  (64, 64, 32, 32 channels, each followed by batch norm and ReLU), then
  FC 200 -> FC 25 -> FC 2k. The decoder mirrors it: FC 25 -> FC 200,
  reshape to 50x2x2, then five 4x4 stride-2 transposed convolutions
  (32, 32, 64, 64 channels, batch norm + ReLU) ending in a 1-channel
  logits map.
* ``mlp`` -- a flat fallback for arbitrary input sizes:
  d -> 400 -> 200 -> 2k encoder and k -> 200 -> 400 -> d decoder, ReLU
  activations throughout, linear heads.

Weights use Kaiming-uniform fan-in initialisation, biases start at zero.
Decoders emit logits; pixels are modelled as Bernoulli.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, DomainError, ShapeError
from .tensor import BatchNorm2dState, Tensor

ARCH_CONV64 = "conv64"
ARCH_MLP = "mlp"
ARCHITECTURES = (ARCH_CONV64, ARCH_MLP)

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

_CONV64_ENC_CHANNELS = (64, 64, 32, 32)
_CONV64_DEC_CHANNELS = (32, 32, 64, 64)
_RUNNING_SUFFIXES = (".running_mean", ".running_var")


@dataclass
class ModelParams:
    """Named parameter tensors for one encoder/decoder pair.

    ``tensors`` keeps insertion order (the checkpoint record order). Batch
    norm running statistics live alongside the trainable weights but are
    excluded from :meth:`trainable`.
    """

    arch: str
    latent_dim: int
    image_shape: tuple  # (C, H, W)
    tensors: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        c, h, w = self.image_shape
        return c * h * w

    @property
    def encoder_weights(self):
        return {k: v for k, v in self.tensors.items() if k.startswith("enc.")}

    @property
    def decoder_weights(self):
        return {k: v for k, v in self.tensors.items() if k.startswith("dec.")}

    def trainable(self):
        return {k: v for k, v in self.tensors.items()
                if not k.endswith(_RUNNING_SUFFIXES)}

    def bn_state(self, prefix: str) -> BatchNorm2dState:
        return BatchNorm2dState(self.tensors[prefix + ".running_mean"],
                                self.tensors[prefix + ".running_var"])


def _kaiming_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape))


def build_model(arch: str, latent_dim: int, image_shape=(1, 64, 64), seed=0) -> ModelParams:
    """Initialise parameters for one architecture; deterministic in ``seed``."""
    if arch not in ARCHITECTURES:
        raise ContractError(f"unknown architecture {arch!r}, expected one of {ARCHITECTURES}")
    c, h, w = (int(v) for v in image_shape)
    d = c * h * w
    if not 1 <= latent_dim < d:
        raise ContractError(
            f"latent_dim must satisfy 1 <= k < input dim, got k={latent_dim}, d={d}")
    if arch == ARCH_CONV64 and (c, h, w) != (1, 64, 64):
        raise ShapeError(f"conv64 expects 1x64x64 images, got {c}x{h}x{w}")
    rng = np.random.default_rng(seed)
    params = ModelParams(arch=arch, latent_dim=latent_dim, image_shape=(c, h, w))
    t = params.tensors

    def fc(name, n_in, n_out):
        t[name + ".w"] = _kaiming_uniform(rng, (n_in, n_out), n_in)
        t[name + ".b"] = Tensor(np.zeros(n_out))

    def bn(name, channels):
        t[name + ".gamma"] = Tensor(np.ones(channels))
        t[name + ".beta"] = Tensor(np.zeros(channels))
        t[name + ".running_mean"] = Tensor(np.zeros(channels))
        t[name + ".running_var"] = Tensor(np.ones(channels))

    k = latent_dim
    if arch == ARCH_MLP:
        fc("enc.fc1", d, 400)
        fc("enc.fc2", 400, 200)
        fc("enc.fc3", 200, 2 * k)
        fc("dec.fc1", k, 200)
        fc("dec.fc2", 200, 400)
        fc("dec.fc3", 400, d)
        return params

    c_in = 1
    for i, c_out in enumerate(_CONV64_ENC_CHANNELS, start=1):
        t[f"enc.conv{i}.w"] = _kaiming_uniform(rng, (c_out, c_in, 4, 4), c_in * 16)
        t[f"enc.conv{i}.b"] = Tensor(np.zeros(c_out))
        bn(f"enc.bn{i}", c_out)
        c_in = c_out
    fc("enc.fc1", 32 * 4 * 4, 200)
    fc("enc.fc2", 200, 25)
    fc("enc.fc3", 25, 2 * k)

    fc("dec.fc1", k, 25)
    fc("dec.fc2", 25, 200)
    c_in = 50  # 200 units reshaped to 50 channels at 2x2
    for i, c_out in enumerate(_CONV64_DEC_CHANNELS, start=1):
        t[f"dec.upconv{i}.w"] = _kaiming_uniform(rng, (c_in, c_out, 4, 4), c_in * 16)
        t[f"dec.upconv{i}.b"] = Tensor(np.zeros(c_out))
        bn(f"dec.bn{i}", c_out)
        c_in = c_out
    t["dec.upconv5.w"] = _kaiming_uniform(rng, (c_in, 1, 4, 4), c_in * 16)
    t["dec.upconv5.b"] = Tensor(np.zeros(1))
    return params


def _affine(x, params, name):
    return T.add(T.matmul(x, params.tensors[name + ".w"]), params.tensors[name + ".b"])


def _split_head(h, k):
    # Final FC emits 2k units; route the halves through constant selectors.
    eye = np.eye(2 * k)
    mu = T.matmul(h, Tensor(eye[:, :k]))
    log_var = T.matmul(h, Tensor(eye[:, k:]))
    return mu, log_var


def encode(x: Tensor, params: ModelParams, training: bool = False):
    """Map an image batch to per-sample Gaussian posterior parameters.

    Returns ``(mu, log_var)``, each of shape (batch, k).
    """
    if params.arch == ARCH_MLP:
        if len(x.shape) == 4:
            x = T.reshape(x, (x.shape[0], params.input_dim))
        if len(x.shape) != 2 or x.shape[1] != params.input_dim:
            raise ShapeError(f"mlp encoder expects (batch, {params.input_dim}), got {x.shape}")
        h = T.relu(_affine(x, params, "enc.fc1"))
        h = T.relu(_affine(h, params, "enc.fc2"))
        h = _affine(h, params, "enc.fc3")
        return _split_head(h, params.latent_dim)

    if len(x.shape) != 4 or x.shape[1:] != params.image_shape:
        raise ShapeError(f"conv64 encoder expects (batch, 1, 64, 64), got {x.shape}")
    h = x
    for i in range(1, 5):
        h = T.conv2d(h, params.tensors[f"enc.conv{i}.w"], stride=2, pad=1)
        h = T.add(h, params.tensors[f"enc.conv{i}.b"])
        h = T.batchnorm2d(h, params.tensors[f"enc.bn{i}.gamma"],
                          params.tensors[f"enc.bn{i}.beta"],
                          state=params.bn_state(f"enc.bn{i}"),
                          training=training, eps=BN_EPS, momentum=BN_MOMENTUM)
        h = T.relu(h)
    h = T.reshape(h, (x.shape[0], 32 * 4 * 4))
    h = T.relu(_affine(h, params, "enc.fc1"))
    h = T.relu(_affine(h, params, "enc.fc2"))
    h = _affine(h, params, "enc.fc3")
    return _split_head(h, params.latent_dim)


def decode(z: Tensor, params: ModelParams, training: bool = False) -> Tensor:
    """Map latent codes to pixel logits of shape (batch,) + image_shape."""
    if len(z.shape) != 2 or z.shape[1] != params.latent_dim:
        raise ShapeError(f"decoder expects (batch, {params.latent_dim}), got {z.shape}")
    n = z.shape[0]
    if params.arch == ARCH_MLP:
        h = T.relu(_affine(z, params, "dec.fc1"))
        h = T.relu(_affine(h, params, "dec.fc2"))
        h = _affine(h, params, "dec.fc3")
        return T.reshape(h, (n,) + params.image_shape)

    h = T.relu(_affine(z, params, "dec.fc1"))
    h = T.relu(_affine(h, params, "dec.fc2"))
    h = T.reshape(h, (n, 50, 2, 2))
    for i in range(1, 5):
        h = T.conv_transpose2d(h, params.tensors[f"dec.upconv{i}.w"], stride=2, pad=1)
        h = T.add(h, params.tensors[f"dec.upconv{i}.b"])
        h = T.batchnorm2d(h, params.tensors[f"dec.bn{i}.gamma"],
                          params.tensors[f"dec.bn{i}.beta"],
                          state=params.bn_state(f"dec.bn{i}"),
                          training=training, eps=BN_EPS, momentum=BN_MOMENTUM)
        h = T.relu(h)
    h = T.conv_transpose2d(h, params.tensors["dec.upconv5.w"], stride=2, pad=1)
    return T.add(h, params.tensors["dec.upconv5.b"])


@dataclass
class LatentBatch:
    """One sampled latent batch: posterior parameters plus the draw."""

    mu: Tensor
    log_var: Tensor
    z: Tensor
    eps_seed: int


def reparameterize(mu: Tensor, log_var: Tensor, eps_seed: int, eps=None) -> Tensor:
    """Sample z = mu + exp(0.5 * log_var) * eps with eps ~ N(0, I).

    ``eps`` may be supplied explicitly (e.g. zeros for the deterministic
    mean path); otherwise it is drawn from a generator seeded with
    ``eps_seed``, so the draw is exactly reproducible.
    """
    if mu.shape != log_var.shape:
        raise ShapeError(f"mu and log_var shapes differ: {mu.shape} vs {log_var.shape}")
    if eps is None:
        eps = np.random.default_rng(eps_seed).standard_normal(mu.shape)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != mu.data.shape:
        raise ShapeError(f"eps shape {eps.shape} does not match mu shape {mu.shape}")
    std = T.exp(T.scalar_mul(log_var, 0.5))
    return T.add(mu, T.mul(std, Tensor(eps)))


def sample_latent(mu: Tensor, log_var: Tensor, eps_seed: int) -> LatentBatch:
    return LatentBatch(mu=mu, log_var=log_var,
                       z=reparameterize(mu, log_var, eps_seed), eps_seed=eps_seed)


def reconstruction_nll(x: Tensor, logits: Tensor) -> Tensor:
    """Bernoulli negative log-likelihood from logits.

    Returns the batch mean of the per-image pixel sum, computed with the
    numerically stable softplus form
    ``softplus(l) - x*l = max(l,0) + log(1 + exp(-|l|)) - x*l``.
    Logs usually report this value divided by the pixel count; see
    :func:`per_pixel`.
    """
    if x.shape != logits.shape:
        raise ShapeError(f"targets {x.shape} and logits {logits.shape} differ")
    if len(x.shape) < 2:
        raise ShapeError(f"expected a batched input, got shape {x.shape}")
    if np.any(x.data < 0.0) or np.any(x.data > 1.0):
        raise DomainError("Bernoulli targets must lie in [0, 1]")
    n = x.shape[0]
    relu_l = T.relu(logits)
    neg_abs = T.scalar_mul(T.add(relu_l, T.relu(T.scalar_mul(logits, -1.0))), -1.0)
    softplus = T.add(relu_l, T.log(T.add(T.exp(neg_abs), Tensor(np.ones(x.data.shape)))))
    nll = T.sub(softplus, T.mul(Tensor(x.data), logits))
    return T.scalar_mul(T.reduce_sum(nll), 1.0 / n)


def per_pixel(nll_value: float, image_shape) -> float:
    """Convert a per-image NLL into the per-pixel mean used in logs."""
    return float(nll_value) / float(np.prod(image_shape))


def kl_gaussian_standard(mu: Tensor, log_var: Tensor) -> Tensor:
    """KL(q || N(0, I)) for a diagonal Gaussian, averaged over the batch.

    Closed form: 0.5 * sum_j (mu_j^2 + sigma_j^2 - 1 - log sigma_j^2).
    """
    if mu.shape != log_var.shape:
        raise ShapeError(f"mu and log_var shapes differ: {mu.shape} vs {log_var.shape}")
    if len(mu.shape) != 2:
        raise ShapeError(f"expected (batch, k) posterior parameters, got {mu.shape}")
    n = mu.shape[0]
    ones = Tensor(np.ones(mu.data.shape))
    terms = T.sub(T.sub(T.add(T.square(mu), T.exp(log_var)), ones), log_var)
    return T.scalar_mul(T.reduce_sum(terms), 0.5 / n)


# ---------------------------------------------------------------------------
# checkpoint integration
# ---------------------------------------------------------------------------


def save_params(path, params: ModelParams):
    T.save_checkpoint(path, params.tensors)


def params_from_arrays(arrays) -> ModelParams:
    """Rebuild a ModelParams from named arrays (e.g. a loaded checkpoint).

    Architecture and latent size are inferred from the parameter names and
    shapes, so checkpoints are self-describing.
    """
    if "enc.conv1.w" in arrays:
        arch = ARCH_CONV64
        image_shape = (1, 64, 64)
        latent_dim = arrays["enc.fc3.w"].shape[1] // 2
    elif "enc.fc1.w" in arrays:
        arch = ARCH_MLP
        d = int(arrays["enc.fc1.w"].shape[0])
        latent_dim = int(arrays["enc.fc3.w"].shape[1]) // 2
        side = math.isqrt(d)
        image_shape = (1, side, side) if side * side == d else (1, 1, d)
    else:
        raise ContractError("parameter set matches no known architecture")
    params = ModelParams(arch=arch, latent_dim=latent_dim, image_shape=image_shape)
    params.tensors = {name: Tensor(arr) for name, arr in arrays.items()}
    return params


def load_params(path) -> ModelParams:
    return params_from_arrays(T.load_checkpoint(path))
