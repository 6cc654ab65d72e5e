"""Meta-training of the optimizer networks with antithetic evolution strategies.

The estimator used is the unbiased antithetic form

    grad ~= 1/N * sum_i eps_i / sigma * (L(phi + sigma eps_i) - L(phi - sigma eps_i))

over N/2 pairs. Perturbation noise is regenerated from (seed, step, pair) so
memory stays bounded for large N. Both members of a pair, and in fact all
perturbations of one meta-step, see the same instances and rollout seeds.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselines import HELD_KARP_MAX_N, MIS_EXACT_MAX_N, held_karp_exact, mis_exact
from .errors import ConfigError, TrainingError
from .gnn import D_HIDDEN, MetaParams, load_params, save_params
from .graph import Kind, ProblemInstance, generate_er_graph, generate_uniform_tsp, sparsify_knn
from .kernel import reported_value
from .search import run_lanes

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
WARMUP_STEPS = 50


# ---- configuration ------------------------------------------------------


@dataclass
class Stage:
    K: int
    b: int
    n_perturbations: int
    meta_steps: int


@dataclass
class InstanceDistribution:
    """Random instance family: uniform TSP on the unit square or ER graphs."""

    kind: str = "tsp"
    n_min: int = 100
    n_max: int = 100
    p: float = 0.15
    k_nn: int | None = 20

    def sample(self, seed) -> ProblemInstance:
        seed = int(np.random.SeedSequence(seed).generate_state(1)[0])
        if Kind(self.kind) is Kind.TSP:
            n = self.n_min if self.n_min == self.n_max else int(
                np.random.default_rng(seed).integers(self.n_min, self.n_max + 1))
            inst = generate_uniform_tsp(n, seed)
            return sparsify_knn(inst, self.k_nn) if self.k_nn else inst
        return generate_er_graph(self.n_min, self.n_max, self.p, seed)


TSP_STAGES = [Stage(50, 32, 128, 500), Stage(200, 32, 64, 500), Stage(500, 32, 64, 500), Stage(500, 128, 64, 250)]
MIS_STAGES = [Stage(50, 32, 64, 500), Stage(200, 32, 64, 500)]


@dataclass
class EsConfig:
    distribution: InstanceDistribution = field(default_factory=InstanceDistribution)
    stages: list = field(default_factory=lambda: list(TSP_STAGES))
    sigma: float = 0.01
    meta_lr: float = 0.001
    lr_schedule: str = "cosine"
    warmup_steps: int = WARMUP_STEPS
    loss_transform: str = "identity"
    pair_clip: float | None = None
    meta_batch: int = 8
    # draw training instances from a fixed pool of this size (0 = fresh every step)
    fixed_pool: int = 0
    validation_size: int = 16
    validate_every: int = 25
    d_hidden: int = D_HIDDEN
    max_nonfinite_streak: int = 5
    seed: int = 0

    def validate(self):
        if not self.stages:
            raise ConfigError("stages: at least one stage required")
        for i, st in enumerate(self.stages):
            if st.n_perturbations < 2 or st.n_perturbations % 2:
                raise ConfigError(f"stages[{i}].n_perturbations must be even and >= 2")
            if st.K < 1 or st.b < 2 or st.meta_steps < 0:
                raise ConfigError(f"stages[{i}]: need K >= 1, b >= 2, meta_steps >= 0")
        for a, b in zip(self.stages, self.stages[1:]):
            if b.K < a.K or b.b < a.b:
                raise ConfigError("stages must grow the budget K first and then the batch size b")
        if self.sigma <= 0:
            raise ConfigError("sigma must be > 0")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError("lr_schedule must be 'cosine' or 'constant'")
        if self.loss_transform not in ("identity", "log"):
            raise ConfigError("loss_transform must be 'identity' or 'log'")
        if self.loss_transform == "log" and Kind(self.distribution.kind) is Kind.MIS:
            raise ConfigError("log loss transform needs positive objectives (TSP only)")
        if self.meta_batch < 1:
            raise ConfigError("meta_batch must be >= 1")
        return self

    @property
    def total_steps(self) -> int:
        return sum(s.meta_steps for s in self.stages)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> EsConfig:
        d = dict(d)
        if "distribution" in d:
            d["distribution"] = InstanceDistribution(**d["distribution"])
        if "stages" in d:
            d["stages"] = [s if isinstance(s, Stage) else Stage(**s) for s in d["stages"]]
        return cls(**d)


# ---- meta loss ----------------------------------------------------------


def transform_losses(values: np.ndarray, transform: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if transform == "log":
        if np.any(values <= 0):
            raise ConfigError("log loss transform needs positive objectives")
        return np.log(values)
    return values


def instance_start(instance, seed) -> int:
    if instance.kind is Kind.TSP:
        return int(np.random.default_rng([*np.atleast_1d(seed), 11]).integers(instance.n_nodes))
    return 0


class MetaLossEvaluator:
    """Mean final best objective of each parameter lane over a fixed meta-batch.

    Every lane of a call sees identical instances, start nodes and rollout
    seeds (common random numbers); ``audit`` records them per call.
    """

    def __init__(self, instances, K, b, seeds, kind, d_hidden=D_HIDDEN, transform="identity", chunk=64):
        self.instances = list(instances)
        self.K, self.b = K, b
        self.seeds = [tuple(np.atleast_1d(s).tolist()) for s in seeds]
        self.kind = Kind(kind)
        self.d_hidden = d_hidden
        self.transform = transform
        self.chunk = chunk
        self.audit = []

    def __call__(self, flat_params: np.ndarray) -> np.ndarray:
        flat_params = np.atleast_2d(flat_params)
        S = flat_params.shape[0]
        total = np.zeros(S)
        for lo in range(0, S, self.chunk):
            rows = slice(lo, min(lo + self.chunk, S))
            meta = MetaParams.unflatten(self.kind, flat_params[rows], self.d_hidden)
            n_rows = rows.stop - rows.start
            for inst, seed in zip(self.instances, self.seeds):
                start = instance_start(inst, seed)
                state = run_lanes(inst, meta, self.K, self.b, [seed] * n_rows, [start] * n_rows)
                loss = transform_losses(state.best_objectives(), self.transform)
                if state.diverged is not None:
                    loss[state.diverged] = np.nan
                total[rows] += loss
                self.audit.append((rows.start, rows.stop, seed, start))
        return total / len(self.instances)


def meta_loss(phi: MetaParams, instances, K: int, b: int, seeds, transform: str = "identity") -> float:
    """Mean over instances of the search's final best objective (log-transformed if asked)."""
    if not instances:
        raise ConfigError("meta_loss needs at least one instance")
    ev = MetaLossEvaluator(instances, K, b, seeds, phi.kind, phi.init.d_hidden, transform)
    return float(ev(phi.flatten())[0])


# ---- estimator and optimizer --------------------------------------------


def perturbation(seed, i: int, dim: int) -> np.ndarray:
    return np.random.default_rng([*np.atleast_1d(seed), i]).standard_normal(dim)


@dataclass
class EsEstimate:
    gradient: np.ndarray
    pair_deltas: np.ndarray
    losses: np.ndarray
    n_dropped: int


def es_gradient(phi, fitness, n_perturbations: int, sigma: float, seed, pair_clip: float | None = None,
                chunk_pairs: int = 32, negate: bool = False) -> EsEstimate:
    """Antithetic ES estimate of the gradient of the Gaussian-smoothed fitness.

    ``fitness`` maps a (S, D) array of parameter vectors to S losses.
    ``negate`` flips every perturbation (used to test antithetic symmetry).
    """
    if n_perturbations < 2 or n_perturbations % 2:
        raise ConfigError("number of perturbations must be even and >= 2")
    phi = np.asarray(phi, dtype=np.float64)
    half = n_perturbations // 2
    grad = np.zeros_like(phi)
    deltas = np.full(half, np.nan)
    losses = np.full(n_perturbations, np.nan)
    kept = 0
    for lo in range(0, half, chunk_pairs):
        idx = range(lo, min(lo + chunk_pairs, half))
        eps = np.stack([perturbation(seed, i, phi.size) for i in idx])
        if negate:
            eps = -eps
        vals = np.asarray(fitness(np.concatenate([phi + sigma * eps, phi - sigma * eps])), dtype=np.float64)
        c = len(idx)
        plus, minus = vals[:c], vals[c:]
        losses[2 * lo:2 * lo + c] = plus
        losses[2 * lo + c:2 * lo + 2 * c] = minus
        with np.errstate(invalid="ignore"):
            d = plus - minus
        if pair_clip is not None:
            d = np.clip(d, -pair_clip, pair_clip)
        deltas[lo:lo + c] = d
        ok = np.isfinite(d)
        kept += int(ok.sum())
        grad += (np.where(ok, d, 0.0) / sigma) @ eps
    n_dropped = half - kept
    if kept == 0:
        raise TrainingError("every antithetic pair produced a non-finite loss")
    if n_dropped:
        log.warning("dropped %d of %d antithetic pairs with non-finite loss", n_dropped, half)
    return EsEstimate(grad / (2 * kept), deltas, losses, n_dropped)


@dataclass
class MetaOptState:
    phi: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    stage: int = 0

    @classmethod
    def fresh(cls, phi) -> MetaOptState:
        phi = np.asarray(phi, dtype=np.float64)
        return cls(phi.copy(), np.zeros_like(phi), np.zeros_like(phi))


def adam_step(state: MetaOptState, grad, lr: float) -> MetaOptState:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.phi.shape:
        raise ConfigError("gradient shape does not match parameters")
    t = state.step + 1
    m = ADAM_BETA1 * state.m + (1 - ADAM_BETA1) * grad
    v = ADAM_BETA2 * state.v + (1 - ADAM_BETA2) * grad ** 2
    m_hat = m / (1 - ADAM_BETA1 ** t)
    v_hat = v / (1 - ADAM_BETA2 ** t)
    phi = state.phi - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return MetaOptState(phi, m, v, t, state.stage)


def lr_at(step: int, total_steps: int, schedule: str = "cosine", max_lr: float = 0.001,
          warmup: int = WARMUP_STEPS) -> float:
    """Learning rate: linear warm-up then one cosine cycle to zero, or constant."""
    if schedule == "constant":
        return max_lr
    if step >= total_steps:
        return 0.0
    warmup = min(warmup, total_steps)
    if step < warmup:
        return max_lr * step / warmup
    frac = (step - warmup) / max(total_steps - warmup, 1)
    return 0.5 * max_lr * (1.0 + math.cos(math.pi * frac))


# ---- training loop ------------------------------------------------------

LOG_FIELDS = ("step", "stage", "K", "b", "n_perturbations", "lr", "loss_mean", "loss_std", "dropped_pairs",
              "val_objective", "val_gap", "wall_s")


@dataclass
class TrainResult:
    params: MetaParams
    checkpoints: list
    log_rows: list
    validation: list
    opt_state: MetaOptState


def _reference(instance):
    if instance.kind is Kind.TSP and instance.n_nodes <= HELD_KARP_MAX_N:
        return held_karp_exact(instance).objective
    if instance.kind is Kind.MIS and instance.n_nodes <= MIS_EXACT_MAX_N:
        return reported_value(Kind.MIS, mis_exact(instance).objective)
    return None


def validation_set(config: EsConfig):
    return [config.distribution.sample([config.seed, 999_983, i]) for i in range(config.validation_size)]


def evaluate(meta: MetaParams, instances, K: int, b: int, seed=0, refs=None):
    """Mean reported objective and mean gap (None without references) of one parameter set."""
    vals = []
    for j, inst in enumerate(instances):
        s = (seed, 424_242, j)
        state = run_lanes(inst, meta, K, b, [s], [instance_start(inst, s)])
        vals.append(reported_value(inst.kind, state.best_objectives()[0]))
    vals = np.array(vals)
    gap = None
    if refs is not None and all(r is not None for r in refs):
        r = np.array(refs)
        kind = instances[0].kind
        gap = float(np.mean(100 * (vals - r) / r if kind is Kind.TSP else 100 * (r - vals) / r))
    return float(vals.mean()), gap


def _stage_of(config: EsConfig, step: int):
    acc = 0
    for i, st in enumerate(config.stages):
        if step < acc + st.meta_steps:
            return i, st
        acc += st.meta_steps
    return len(config.stages) - 1, config.stages[-1]


def _checkpoint_meta(config, stage_idx, stage, step):
    return {"stage": stage_idx, "stages_done": [asdict(s) for s in config.stages[:stage_idx + 1]],
            "train_K": stage.K, "train_b": stage.b, "step": step, "seed": config.seed,
            "config": config.to_dict()}


def train(config: EsConfig, out_dir=None, init: MetaParams | None = None, opt_state: MetaOptState | None = None,
          callback=None) -> TrainResult:
    """Run the stage schedule; returns final parameters, per-stage checkpoints and the log."""
    config.validate()
    kind = Kind(config.distribution.kind)
    if init is None:
        init = MetaParams.initialize(config.seed, kind, d_hidden=config.d_hidden)
    state = opt_state or MetaOptState.fresh(init.flatten())
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    val = validation_set(config)
    refs = [_reference(v) for v in val]
    pool = ([config.distribution.sample([config.seed, 7_777, i]) for i in range(config.fixed_pool)]
            if config.fixed_pool else None)
    total = config.total_steps
    rows, checkpoints, validation = [], [], []
    streak = 0

    def snapshot(stage_idx, stage, step):
        meta = MetaParams.unflatten(kind, state.phi, config.d_hidden,
                                    metadata=_checkpoint_meta(config, stage_idx, stage, step))
        checkpoints.append(meta)
        if out_dir:
            save_params(meta, out_dir / f"stage{stage_idx}.ckpt")
            np.savez(out_dir / f"stage{stage_idx}.opt.npz", phi=state.phi, m=state.m, v=state.v, step=state.step)
        return meta

    if total == 0 or state.step >= total:
        snapshot(len(config.stages) - 1, config.stages[-1], state.step)
    while state.step < total:
        t0 = time.perf_counter()
        step = state.step
        stage_idx, stage = _stage_of(config, step)
        state.stage = stage_idx
        seeds = [(config.seed, step, j) for j in range(config.meta_batch)]
        if pool is not None:
            pick = np.random.default_rng([config.seed, step, 3]).choice(len(pool), config.meta_batch, replace=False)
            instances = [pool[i] for i in pick]
        else:
            instances = [config.distribution.sample(s) for s in seeds]
        fitness = MetaLossEvaluator(instances, stage.K, stage.b, seeds, kind, config.d_hidden, config.loss_transform)
        try:
            est = es_gradient(state.phi, fitness, stage.n_perturbations, config.sigma, (config.seed, step, 1),
                              config.pair_clip)
            streak = 0
        except TrainingError:
            streak += 1
            if streak >= config.max_nonfinite_streak:
                raise TrainingError(f"non-finite meta-loss for {streak} consecutive steps at step {step}; "
                                    f"phi finite={bool(np.isfinite(state.phi).all())}, "
                                    f"|phi|max={np.nanmax(np.abs(state.phi)):.3g}") from None
            state.step += 1
            continue
        lr = lr_at(step, total, config.lr_schedule, config.meta_lr, config.warmup_steps)
        state = adam_step(state, est.gradient, lr)
        state.stage = stage_idx
        finite = est.losses[np.isfinite(est.losses)]
        row = {"step": step, "stage": stage_idx, "K": stage.K, "b": stage.b,
               "n_perturbations": stage.n_perturbations, "lr": lr, "loss_mean": float(finite.mean()),
               "loss_std": float(finite.std()), "dropped_pairs": est.n_dropped, "val_objective": "",
               "val_gap": ""}
        stage_end = _stage_of(config, state.step)[0] != stage_idx or state.step == total
        if config.validate_every and (state.step % config.validate_every == 0 or stage_end):
            meta = MetaParams.unflatten(kind, state.phi, config.d_hidden)
            obj, gap = evaluate(meta, val, stage.K, stage.b, config.seed, refs)
            row["val_objective"], row["val_gap"] = obj, "" if gap is None else gap
            validation.append((state.step, obj, gap))
        row["wall_s"] = time.perf_counter() - t0
        rows.append(row)
        if callback:
            callback(row)
        if stage_end:
            snapshot(stage_idx, stage, state.step)
    if out_dir:
        write_log(out_dir / "train_log.csv", rows)
    params = checkpoints[-1]
    return TrainResult(params, checkpoints, rows, validation, state)


def write_log(path, rows, header_lines=()):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def load_training_state(ckpt_path) -> tuple[MetaParams, MetaOptState]:
    """Parameters plus optimizer state saved next to a stage checkpoint."""
    meta = load_params(ckpt_path)
    opt_path = Path(str(ckpt_path).replace(".ckpt", ".opt.npz"))
    phi = meta.flatten().astype(np.float64)
    state = MetaOptState.fresh(phi)
    if opt_path.exists():
        z = np.load(opt_path)
        # the sidecar keeps the float64 parameters so that resuming is exact
        phi = z["phi"] if "phi" in z else phi
        state = MetaOptState(phi, z["m"], z["v"], int(z["step"]), int(meta.metadata.get("stage", 0)))
    else:
        state.step = int(meta.metadata.get("step", 0))
    return meta, state


def config_json(config: EsConfig) -> str:
    return json.dumps(config.to_dict(), sort_keys=True)
