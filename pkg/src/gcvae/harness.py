"""Training, evaluation, latent traversal and run aggregation.

One ``train`` call owns a run directory and writes:

* ``train_log.csv``    -- step,total,recon,kl,corr,alpha,beta,gamma,wall_ms
  (``recon`` is the per-pixel value; ``total`` is the composed objective)
* ``controllers.csv``  -- step,controller,actual,error,integral,weight
  (one row per PI-controlled weight per step)
* ``mutual_info.csv``  -- epoch,i_p,i_q (epoch means of the surrogate pair)
* ``config.json``      -- the flat run configuration
* ``model.gcvt``       -- final parameter checkpoint
* ``metrics.txt`` / ``metrics.csv`` -- disentanglement scores, when the
  dataset carries ground-truth factors

Everything is deterministic in the run seed: parameter init uses
``[seed, 0]``, batch order uses ``seed``, the reparameterisation noise for
step t uses ``seed * 1_000_003 + t`` and prior draws use ``[seed, 2, t]``.
"""

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import divergences as D
from . import model as M
from . import tensor as T
from .control import ControllerState, WeightTriple, clamp_weights, pid_step, stopping_check
from .data import Dataset, batches, load_dsprites_npz, load_mnist_idx, subsample, synth_sprites
from .errors import ContractError, NonFiniteLossError
from .metrics import DEFAULT_BINS, CodeTable, jemmig, mig, modularity
from .objective import compose_loss, mutual_info_report, variant_reduction

DATASETS = ("synth", "mnist", "dsprites")
CANONICAL_ORDER = ("elbo", "beta_vae", "control_vae", "info_vae", "gcvae1", "gcvae2", "gcvae3")

TRAIN_LOG_COLUMNS = ("step", "total", "recon", "kl", "corr", "alpha", "beta", "gamma", "wall_ms")
CONTROLLER_COLUMNS = ("step", "controller", "actual", "error", "integral", "weight")
MUTUAL_INFO_COLUMNS = ("epoch", "i_p", "i_q")
METRIC_COLUMNS = ("variant", "mig", "jemmig", "modularity", "recon", "kl")

_FLUSH_EVERY = 100


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StoppingConfig:
    """Early stop once both controlled weights settle.

    After ``warmup`` steps, training stops at the first step where
    |alpha_t - alpha_{t-1}| < eps_a and |beta_t - beta_{t-1}| < eps_b
    (post-clamp values). Only variants with a PI-controlled alpha or beta
    are eligible; fixed-weight variants always run to ``max_steps``.
    """

    enabled: bool = True
    eps_a: float = 1e-4
    eps_b: float = 1e-3
    warmup: int = 50

    def __post_init__(self):
        if self.eps_a <= 0 or self.eps_b <= 0:
            raise ContractError(
                f"stopping thresholds must be > 0, got eps_a={self.eps_a}, eps_b={self.eps_b}")
        if self.warmup < 1:
            raise ContractError(f"warmup must be >= 1, got {self.warmup}")


@dataclass
class RunConfig:
    """Everything one training run needs; round-trips through flat JSON."""

    variant: str
    dataset: str = "synth"
    data_dir: str | None = None
    subsample_n: int | None = None
    data_seed: int = 0
    arch: str = "mlp"
    latent_dim: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    max_steps: int = 1000
    seed: int = 0
    target_recon: float | None = None  # None: use the variant's default set point
    target_kl: float | None = None
    target_corr: float | None = None
    kp: float = 0.01
    ki: float = 1e-4
    sigma_k: float | str | None = None  # None: sqrt(k); "median": per-batch heuristic
    eps_reg: float = 1e-6
    out_dir: str = "runs/run"
    stopping: StoppingConfig = field(default_factory=StoppingConfig)

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ContractError(f"unknown dataset {self.dataset!r}; expected one of {DATASETS}")
        if self.max_steps < 1:
            raise ContractError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.latent_dim < 1:
            raise ContractError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.lr <= 0:
            raise ContractError(f"lr must be > 0, got {self.lr}")
        if isinstance(self.sigma_k, str) and self.sigma_k != "median":
            raise ContractError(f'sigma_k must be a number, None or "median", got {self.sigma_k!r}')

    def to_flat(self) -> dict:
        d = asdict(self)
        stop = d.pop("stopping")
        for k, v in stop.items():
            d[f"stopping_{k}"] = v
        return d

    @classmethod
    def from_flat(cls, d: dict) -> "RunConfig":
        d = dict(d)
        stop_kwargs = {}
        for k in list(d):
            if k.startswith("stopping_"):
                stop_kwargs[k[len("stopping_"):]] = d.pop(k)
        known = set(cls.__dataclass_fields__) - {"stopping"}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        return cls(stopping=StoppingConfig(**stop_kwargs), **d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_flat(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_flat(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# data resolution
# ---------------------------------------------------------------------------


def _resolve_dataset(config: RunConfig) -> Dataset:
    if config.dataset == "synth":
        n = config.subsample_n if config.subsample_n is not None else 5000
        return synth_sprites(n, seed=config.data_seed)
    if config.data_dir is None:
        raise ContractError(
            f"dataset {config.dataset!r} needs data_dir (or the GCVAE_DATA_DIR environment "
            f"variable via the command line)")
    root = Path(config.data_dir)
    if config.dataset == "mnist":
        ds = load_mnist_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte")
    else:
        path = root / "dsprites.npz"
        if not path.exists():
            candidates = sorted(root.glob("*.npz"))
            if len(candidates) != 1:
                raise ContractError(
                    f"could not pick a sprites archive in {root}: found {len(candidates)} .npz files")
            path = candidates[0]
        ds = load_dsprites_npz(path)
    if config.subsample_n is not None:
        ds = subsample(ds, config.subsample_n, seed=config.data_seed)
    return ds


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    """First/second moment buffers keyed by parameter name."""

    m: dict
    v: dict
    t: int = 0

    @classmethod
    def init(cls, named_tensors) -> "AdamState":
        return cls(m={k: np.zeros_like(p.data) for k, p in named_tensors.items()},
                   v={k: np.zeros_like(p.data) for k, p in named_tensors.items()})


def adam_step(state: AdamState, named_tensors, grads, lr,
              beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS) -> AdamState:
    """One Adam update. Parameter buffers are rebound, never written in place,
    so arrays captured by an earlier tape stay valid."""
    state.t += 1
    t = state.t
    bias1 = 1.0 - beta1 ** t
    bias2 = 1.0 - beta2 ** t
    for name, p in named_tensors.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ContractError(f"{name}: gradient shape {g.shape} != param shape {p.data.shape}")
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        p.data = p.data - lr * (m / bias1) / (np.sqrt(v / bias2) + eps)
    return state


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return repr(float(value))


class _CsvLog:
    def __init__(self, path, columns):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(columns)
        self._columns = columns

    def write(self, row: dict):
        self._writer.writerow([_fmt(row[c]) for c in self._columns])

    def flush(self):
        self._fh.flush()

    def close(self):
        self._fh.close()


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class RunLog:
    """In-memory record of one training run."""

    config: RunConfig
    steps_run: int
    stopped_at: int | None
    history: list
    epoch_rows: list
    final_weights: WeightTriple
    checkpoint_path: str
    metrics: dict | None


def _controller(config: RunConfig, mode, override) -> ControllerState:
    set_point = override if override is not None else mode.value
    return ControllerState(kp=config.kp, ki=config.ki, min_value=0.0, set_point=set_point)


def _step_weights(vc, controllers, actuals):
    """Advance every PI controller one step and return the weight triple.

    ``actuals`` maps controller name -> current value of the controlled
    quantity. GCVAE triples are clamped onto the simplex constraint; the
    fixed-weight reductions keep their exact encodings (which may lie
    outside [0, 1], e.g. alpha = -beta for the plain evidence bound).
    """
    rows = []

    def advance(name, mode):
        if mode.kind == "fixed":
            return mode.value
        state = controllers[name]
        new_state, weight = pid_step(state, actuals[name])
        controllers[name] = new_state
        rows.append({"controller": name, "actual": actuals[name],
                     "error": new_state.set_point - actuals[name],
                     "integral": new_state.integral, "weight": weight})
        return weight

    if vc.recon_unit:
        beta = advance("beta", vc.beta)
        gamma = advance("gamma", vc.gamma)
        weights = WeightTriple(alpha=-beta + 0.0, beta=beta, gamma=gamma)  # +0.0 avoids -0.0 in logs
    else:
        alpha = advance("alpha", vc.alpha)
        beta = advance("beta", vc.beta)
        gamma = advance("gamma", vc.gamma)
        weights = clamp_weights(WeightTriple(alpha=alpha, beta=beta, gamma=gamma))
    return weights, rows


def _batch_sigma(config: RunConfig, latent_dim, zq, zp) -> float:
    if config.sigma_k == "median":
        return D.median_bandwidth(np.vstack([zq.data, zp.data]))
    if config.sigma_k is None:
        return D.default_bandwidth(latent_dim)
    return float(config.sigma_k)


def _divergence_term(vc, config, zq, zp):
    if vc.divergence is None:
        return None
    if vc.divergence == "mmd":
        return D.mmd_squared(zq, zp, _batch_sigma(config, config.latent_dim, zq, zp))
    pooled = D.vstack_pair(zq, zp)
    cov = D.diag_covariance(pooled, eps_reg=config.eps_reg)
    if vc.divergence == "mahalanobis":
        return D.mahalanobis_squared(zq, zp, cov)
    if vc.divergence == "scaled_mmd":
        return D.scaled_mmd(zq, zp, _batch_sigma(config, config.latent_dim, zq, zp), cov)
    raise ContractError(f"unknown divergence {vc.divergence!r}")


def train(config: RunConfig) -> RunLog:
    """Run one training job to completion (or early stop) and write artifacts."""
    vc = variant_reduction(config.variant)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save(out_dir / "config.json")

    ds = _resolve_dataset(config)
    params = M.build_model(config.arch, config.latent_dim, ds.image_shape,
                           seed=[config.seed, 0])
    trainable = params.trainable()
    adam = AdamState.init(trainable)
    stream = batches(ds, config.batch_size, seed=config.seed)
    pixels = float(np.prod(ds.image_shape))

    controllers = {}
    if vc.alpha is not None and vc.alpha.kind == "pid":
        controllers["alpha"] = _controller(config, vc.alpha, config.target_recon)
    if vc.beta.kind == "pid":
        controllers["beta"] = _controller(config, vc.beta, config.target_kl)
    if vc.gamma.kind == "pid":
        controllers["gamma"] = _controller(config, vc.gamma, config.target_corr)
    stop_eligible = (config.stopping.enabled
                     and ((vc.alpha is not None and vc.alpha.kind == "pid")
                          or vc.beta.kind == "pid"))

    train_log = _CsvLog(out_dir / "train_log.csv", TRAIN_LOG_COLUMNS)
    ctrl_log = _CsvLog(out_dir / "controllers.csv", CONTROLLER_COLUMNS)
    mi_log = _CsvLog(out_dir / "mutual_info.csv", MUTUAL_INFO_COLUMNS)

    history = []
    epoch_rows = []
    epoch_ip, epoch_iq = [], []
    current_epoch = 0
    prev_weights = None
    stopped_at = None
    steps_run = 0

    def flush_epoch(epoch):
        if epoch_ip:
            row = {"epoch": epoch,
                   "i_p": float(np.mean(epoch_ip)),
                   "i_q": float(np.mean(epoch_iq))}
            epoch_rows.append(row)
            mi_log.write(row)
            epoch_ip.clear()
            epoch_iq.clear()

    try:
        for step in range(1, config.max_steps + 1):
            t0 = time.perf_counter()
            idx = next(stream)
            x = T.Tensor(ds.images[idx])
            eps_seed = config.seed * 1_000_003 + step
            with T.Tape() as tape:
                for p in trainable.values():
                    tape.watch(p)
                mu, log_var = M.encode(x, params, training=True)
                z = M.reparameterize(mu, log_var, eps_seed)
                logits = M.decode(z, params, training=True)
                recon = M.reconstruction_nll(x, logits)
                kl = M.kl_gaussian_standard(mu, log_var)
                corr = None
                if vc.divergence is not None:
                    prior_rng = np.random.default_rng([config.seed, 2, step])
                    zp = T.Tensor(prior_rng.standard_normal((config.batch_size,
                                                             config.latent_dim)))
                    corr = _divergence_term(vc, config, z, zp)
                recon_pp = recon.item() / pixels
                actuals = {"alpha": recon_pp, "beta": kl.item(),
                           "gamma": corr.item() if corr is not None else 0.0}
                weights, ctrl_rows = _step_weights(vc, controllers, actuals)
                breakdown = compose_loss(recon, kl, corr, weights)
                T.backward(tape, breakdown.total)
            grads = {name: p.grad for name, p in trainable.items()}
            adam_step(adam, trainable, grads, config.lr)
            steps_run = step

            wall_ms = (time.perf_counter() - t0) * 1000.0
            row = {"step": step, "total": breakdown.total.item(), "recon": recon_pp,
                   "kl": kl.item(), "corr": actuals["gamma"], "alpha": weights.alpha,
                   "beta": weights.beta, "gamma": weights.gamma, "wall_ms": wall_ms}
            history.append(row)
            train_log.write(row)
            for crow in ctrl_rows:
                crow["step"] = step
                ctrl_log.write(crow)
            i_p, i_q = mutual_info_report(recon.item(), kl.item(), actuals["gamma"])
            epoch_ip.append(i_p)
            epoch_iq.append(i_q)
            if stream.epoch != current_epoch:
                flush_epoch(current_epoch)
                current_epoch = stream.epoch

            if step % _FLUSH_EVERY == 0:
                train_log.flush()
                ctrl_log.flush()
                mi_log.flush()

            if (stop_eligible and prev_weights is not None
                    and step > config.stopping.warmup
                    and stopping_check(weights.alpha, prev_weights.alpha,
                                       weights.beta, prev_weights.beta,
                                       config.stopping.eps_a, config.stopping.eps_b)):
                stopped_at = step
                prev_weights = weights
                break
            prev_weights = weights
    except NonFiniteLossError as exc:
        tail = history[-10:]
        lines = "\n".join(
            f"  step {r['step']}: total={r['total']:.6g} recon={r['recon']:.6g} "
            f"kl={r['kl']:.6g} corr={r['corr']:.6g} "
            f"weights=({r['alpha']:.6g}, {r['beta']:.6g}, {r['gamma']:.6g})"
            for r in tail)
        raise NonFiniteLossError(
            f"{exc} [variant={config.variant}, seed={config.seed}, "
            f"last {len(tail)} logged steps:\n{lines}]",
            breakdown=exc.breakdown) from exc
    finally:
        flush_epoch(current_epoch)
        train_log.close()
        ctrl_log.close()
        mi_log.close()

    checkpoint_path = out_dir / "model.gcvt"
    M.save_params(checkpoint_path, params)

    metrics = None
    if ds.factors is not None:
        metrics = eval_metrics(params, ds, seed=config.seed)
        metrics["variant"] = config.variant
        write_metrics(out_dir, metrics)

    return RunLog(config=config, steps_run=steps_run, stopped_at=stopped_at,
                  history=history, epoch_rows=epoch_rows,
                  final_weights=prev_weights if prev_weights is not None
                  else WeightTriple(0.0, 0.0, 0.0),
                  checkpoint_path=str(checkpoint_path), metrics=metrics)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def encode_dataset(params: M.ModelParams, ds: Dataset, batch_size: int = 256):
    """Posterior means and per-item statistics over a whole dataset.

    Runs in evaluation mode along the deterministic mean path (z = mu).
    Returns (codes, recon_per_pixel_mean, kl_mean).
    """
    n = ds.n
    codes = np.empty((n, params.latent_dim))
    recon_sum = 0.0
    kl_sum = 0.0
    pixels = float(np.prod(ds.image_shape))
    for start in range(0, n, batch_size):
        xb = T.Tensor(ds.images[start : start + batch_size])
        m = xb.shape[0]
        mu, log_var = M.encode(xb, params, training=False)
        logits = M.decode(mu, params, training=False)
        recon = M.reconstruction_nll(xb, logits)
        kl = M.kl_gaussian_standard(mu, log_var)
        codes[start : start + batch_size] = mu.data
        recon_sum += recon.item() * m
        kl_sum += kl.item() * m
    return codes, recon_sum / n / pixels, kl_sum / n


def eval_metrics(params: M.ModelParams, ds: Dataset, bins: int = DEFAULT_BINS,
                 batch_size: int = 256, max_n: int = 10000, seed: int = 0) -> dict:
    """Disentanglement scores plus reconstruction statistics on a dataset.

    Datasets larger than ``max_n`` are subsampled (seeded) before encoding.
    Codes are the posterior means, discretised into ``bins`` equal-width bins.
    """
    if ds.factors is None:
        raise ContractError("metrics need a dataset with ground-truth factors")
    if ds.n > max_n:
        ds = subsample(ds, max_n, seed=seed)
    codes, recon_pp, kl = encode_dataset(params, ds, batch_size=batch_size)
    table = CodeTable(codes, bins=bins)
    return {
        "n_eval": ds.n,
        "mig": mig(table, ds.factors).mean,
        "jemmig": jemmig(table, ds.factors).mean,
        "modularity": modularity(table, ds.factors).mean,
        "recon": recon_pp,
        "kl": kl,
    }


def write_metrics(out_dir, metrics: dict):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        writer.writerow([_fmt(metrics[c]) for c in METRIC_COLUMNS])
    lines = [f"{key}: {_fmt(metrics[key])}" for key in
             ("variant", "n_eval", "mig", "jemmig", "modularity", "recon", "kl")
             if key in metrics]
    (out_dir / "metrics.txt").write_text("\n".join(lines) + "\n")


def read_metrics(run_dir) -> dict:
    path = Path(run_dir) / "metrics.csv"
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != 1:
        raise ContractError(f"{path}: expected exactly one metrics row, got {len(rows)}")
    row = rows[0]
    out = {"variant": row["variant"]}
    for key in METRIC_COLUMNS[1:]:
        out[key] = float(row[key])
    return out


# ---------------------------------------------------------------------------
# latent traversal
# ---------------------------------------------------------------------------


def traverse(params: M.ModelParams, dim: int, out_path, steps: int = 8, rows: int = 8,
             span: float = 3.0, seed: int = 0) -> np.ndarray:
    """Render a latent traversal grid and write it as a binary PGM.

    Each of ``rows`` base latent vectors (standard normal draws; a single
    row uses the all-zero vector) is decoded ``steps`` times with coordinate
    ``dim`` swept over linspace(-span, +span); ``steps=1`` decodes the
    midpoint 0 (the mean image). The output image is the row-major grid of
    reconstructions, one row per base vector.
    """
    k = params.latent_dim
    if not 0 <= dim < k:
        raise ContractError(f"dim must lie in [0, {k}), got {dim}")
    if steps < 1 or rows < 1:
        raise ContractError(f"need steps >= 1 and rows >= 1, got steps={steps}, rows={rows}")
    c, h, w = params.image_shape
    if c != 1:
        raise ContractError(f"traversal rendering expects single-channel images, got C={c}")
    if rows == 1:
        base = np.zeros((1, k))
    else:
        base = np.random.default_rng([seed, 4]).standard_normal((rows, k))
    sweep = np.linspace(-span, span, steps) if steps > 1 else np.zeros(1)
    z = np.repeat(base, steps, axis=0)
    z[:, dim] = np.tile(sweep, rows)
    logits = M.decode(T.Tensor(z), params, training=False)
    pix = T.sigmoid(logits).data.reshape(rows, steps, h, w)
    grid = pix.transpose(0, 2, 1, 3).reshape(rows * h, steps * w)
    img = np.rint(grid * 255.0).astype(np.uint8)
    write_pgm(out_path, img)
    return img


def write_pgm(path, img: np.ndarray):
    """Write a 2-D uint8 array as a binary (P5) PGM file."""
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ContractError(f"PGM writer needs a 2-D uint8 array, got {img.dtype} {img.shape}")
    height, width = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (width, height))
        fh.write(img.tobytes())


# ---------------------------------------------------------------------------
# cross-run report
# ---------------------------------------------------------------------------


def report(run_dirs) -> tuple:
    """Aggregate metrics rows from run directories into one comparison.

    Rows follow the canonical variant order, then input order for anything
    else. Returns (table_text, csv_text, missing): an aligned plain-text
    table, the same rows as merged CSV, and the directories that had no
    readable metrics file.
    """
    entries = []
    missing = []
    for i, run_dir in enumerate(run_dirs):
        path = Path(run_dir) / "metrics.csv"
        if not path.exists():
            missing.append(str(run_dir))
            continue
        row = read_metrics(run_dir)
        rank = (CANONICAL_ORDER.index(row["variant"])
                if row["variant"] in CANONICAL_ORDER else len(CANONICAL_ORDER))
        entries.append((rank, i, row))
    entries.sort(key=lambda e: (e[0], e[1]))

    header = list(METRIC_COLUMNS)
    table = [header]
    csv_lines = [",".join(header)]
    for _, _, row in entries:
        table.append([row["variant"]] + [f"{row[c]:.6f}" for c in METRIC_COLUMNS[1:]])
        csv_lines.append(",".join([row["variant"]] + [_fmt(row[c]) for c in METRIC_COLUMNS[1:]]))
    widths = [max(len(r[j]) for r in table) for j in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[j]) for j, cell in enumerate(r)).rstrip()
             for r in table]
    return "\n".join(lines), "\n".join(csv_lines) + "\n", missing
