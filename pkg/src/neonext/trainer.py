"""Optimizers, LR schedule, the training loop, and the init-method ablation.

The desk-scale ablation protocol is pinned here: micro model, SGD with
classical momentum 0.9, one warmup epoch ramping linearly to the peak rate
followed by cosine annealing, batch size 64, basic augmentation, label
smoothing 0.1, no weight decay, no gradient clipping.  Both init arms
("neoinit" vs "random-normal") run under identical settings; a run whose
loss turns non-finite is recorded as diverged rather than crashing.

Run config files are flat key = value text with the versioned header line
``neonext-run-config v1``; see ``parse_config``.  Per-epoch CSV schema:
epoch,train_loss,val_loss,val_acc,lr,wall_time_s — everything except the
trailing wall_time_s is a pure function of the config.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import Grads, Param, Tape, Val, backward
from .data import Batch, BatchPlan, Dataset, augment, batches, load_cifar10, split_dataset, synth_task
from .errors import ConfigError, NumericError
from .model import (
    ForwardCtx,
    Model,
    build_model,
    named_spec,
    one_hot,
    save_checkpoint,
    smooth_targets,
    softmax_cross_entropy,
)
from .rng import Rng
from .tensor import Tensor4

REFERENCE_ACC_NEOINIT = 88.45
REFERENCE_ACC_RANDOM = 84.65
REFERENCE_GAP_PP = 3.8

_NO_DECAY_KINDS = {"bn_gamma", "bn_beta", "bias", "neocell_bias"}


@dataclass(frozen=True)
class OptimSpec:
    kind: str = "sgd-momentum"
    lr: float = 0.1
    momentum: float = 0.9
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0
    grad_clip: float | None = None

    def __post_init__(self):
        if self.kind not in ("sgd-momentum", "adamw"):
            raise ConfigError(f"optimizer kind must be sgd-momentum or adamw, got {self.kind!r}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError(f"betas must be in [0, 1), got {self.betas}")


@dataclass(frozen=True)
class ScheduleSpec:
    warmup_epochs: int
    total_epochs: int
    peak_lr: float
    floor_lr: float = 0.0

    def __post_init__(self):
        if self.warmup_epochs > self.total_epochs:
            raise ConfigError(
                f"warmup {self.warmup_epochs} exceeds total epochs {self.total_epochs}"
            )


@dataclass(frozen=True)
class RunConfig:
    model: str = "neonext-micro"
    data: str = "synthetic"
    data_dir: str = ""
    classes: int = 10
    synth_train: int = 1920
    synth_val: int = 512
    optimizer: OptimSpec = field(default_factory=OptimSpec)
    epochs: int = 3
    warmup_epochs: int = 1
    floor_lr: float = 0.0
    batch_size: int = 64
    seeds: tuple[int, ...] = (1,)
    init: str = "neoinit"
    augment: str = "basic"
    label_smoothing: float = 0.1
    mixup_alpha: float = 0.8
    drop_path: float = 0.05
    out_dir: str = "runs/out"

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.init not in ("neoinit", "random-normal"):
            raise ConfigError(f"init must be neoinit or random-normal, got {self.init!r}")
        if self.data not in ("synthetic", "cifar10"):
            raise ConfigError(f"data must be synthetic or cifar10, got {self.data!r}")

    def schedule(self) -> ScheduleSpec:
        # warmup clamps to the run length so short runs stay valid
        return ScheduleSpec(min(self.warmup_epochs, self.epochs), self.epochs, self.optimizer.lr, self.floor_lr)


# --------------------------------------------------------------- optimizers

def _check_finite(params: list[Param], grads: Grads) -> None:
    for p in params:
        if not np.all(np.isfinite(grads[p.name])):
            raise NumericError(f"non-finite gradient for parameter {p.name}")


def sgd_step(params: list[Param], grads: Grads, state: dict, spec: OptimSpec, lr: float | None = None) -> None:
    """Classical momentum: v <- mu*v + g; p <- p - lr*v (updates in place)."""
    _check_finite(params, grads)
    lr = spec.lr if lr is None else lr
    for p in params:
        v = state.setdefault(p.name, np.zeros_like(p.array))
        v *= spec.momentum
        v += grads[p.name]
        p.array -= lr * v


def adamw_step(params: list[Param], grads: Grads, state: dict, spec: OptimSpec, lr: float | None = None) -> None:
    """Decoupled weight decay with bias correction.

    Decay is skipped for normalization parameters and biases.
    """
    _check_finite(params, grads)
    lr = spec.lr if lr is None else lr
    b1, b2 = spec.betas
    eps = 1e-8
    t = state.get("t", 0) + 1
    state["t"] = t
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p in params:
        g = grads[p.name]
        m = state.setdefault(p.name + ".m", np.zeros_like(p.array))
        v = state.setdefault(p.name + ".v", np.zeros_like(p.array))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        if spec.weight_decay and p.kind not in _NO_DECAY_KINDS:
            update = update + spec.weight_decay * p.array
        p.array -= lr * update


def clip_gradients(params: list[Param], grads: Grads, max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most ``max_norm``."""
    total = 0.0
    for p in params:
        g = grads[p.name]
        total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params:
            grads[p.name] = grads[p.name] * scale
    return norm


def lr_at(schedule: ScheduleSpec, step: int, steps_per_epoch: int) -> float:
    """Linear 0 -> peak over the warmup steps, then cosine to the floor.

    Degenerate zero-length schedules return the floor.
    """
    warmup = schedule.warmup_epochs * steps_per_epoch
    total = schedule.total_epochs * steps_per_epoch
    if total == 0:
        return schedule.floor_lr
    if warmup > 0 and step < warmup:
        return schedule.peak_lr * step / warmup
    span = max(total - warmup, 1)
    t = min(max((step - warmup) / span, 0.0), 1.0)
    return schedule.floor_lr + (schedule.peak_lr - schedule.floor_lr) * 0.5 * (1.0 + math.cos(math.pi * t))


# ----------------------------------------------------------------- running

@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    lr: float
    wall_time_s: float


@dataclass
class RunReport:
    seed: int
    init: str
    status: str                       # completed | diverged
    rows: list[EpochRow]
    divergence_step: int | None = None
    csv_path: str = ""
    checkpoint_path: str = ""

    @property
    def final_val_acc(self) -> float:
        return self.rows[-1].val_acc

    @property
    def final_val_loss(self) -> float:
        return self.rows[-1].val_loss


def _load_data(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    # the dataset is a pure function of the config, shared by all seeds/arms
    if cfg.data == "cifar10":
        if not cfg.data_dir:
            raise ConfigError("cifar10 runs need data_dir")
        return load_cifar10(cfg.data_dir)
    full = synth_task(Rng(20240901), cfg.synth_train + cfg.synth_val, cfg.classes)
    return split_dataset(full, cfg.synth_val)


def evaluate(model: Model, ds: Dataset, batch_size: int = 256) -> tuple[float, float]:
    """Eval-mode mean cross-entropy (unsmoothed) and top-1 accuracy.

    Runs with numeric warnings suppressed: a diverged model evaluates to
    non-finite loss, which the caller reports rather than crashes on.
    """
    total_loss = 0.0
    correct = 0
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for base in range(0, ds.size, batch_size):
            imgs = Tensor4(ds.images.array[base : base + batch_size])
            labels = ds.labels[base : base + batch_size]
            logits = model.forward(imgs, ForwardCtx(mode="eval")).array
            targets = one_hot(labels, ds.num_classes)
            loss = softmax_cross_entropy(None, Val(logits), targets)
            total_loss += float(loss.array) * labels.size
            correct += int((logits.argmax(axis=1) == labels).sum())
    return total_loss / ds.size, correct / ds.size


def _write_csv(path: Path, rows: list[EpochRow]) -> None:
    lines = ["epoch,train_loss,val_loss,val_acc,lr,wall_time_s"]
    for r in rows:
        lines.append(
            f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.val_acc!r},{r.lr!r},{r.wall_time_s:.3f}"
        )
    path.write_text("\n".join(lines) + "\n")


def train_run(cfg: RunConfig, seed: int | None = None) -> RunReport:
    """One training run; divergence is a reported outcome, not a crash."""
    seed = cfg.seeds[0] if seed is None else seed
    t0 = time.perf_counter()
    train_ds, val_ds = _load_data(cfg)
    root = Rng(seed)
    init_rng = root.derive(1)
    aug_rng = root.derive(2)
    dp_rng = root.derive(3)
    spec = named_spec(cfg.model, classes=train_ds.num_classes, drop_path_rate=cfg.drop_path)
    model = build_model(spec, train_ds.images.dims[2], init_rng, init=cfg.init)
    params = model.params()
    schedule = cfg.schedule()
    steps_per_epoch = train_ds.size // cfg.batch_size
    opt_state: dict = {}
    step = 0
    status = "completed"
    divergence_step = None

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    val_loss, val_acc = evaluate(model, val_ds)
    rows = [EpochRow(0, float("nan"), val_loss, val_acc, lr_at(schedule, 0, max(steps_per_epoch, 1)), time.perf_counter() - t0)]

    for epoch in range(1, cfg.epochs + 1):
        plan = BatchPlan(seed=root.derive(100).seed, batch_size=cfg.batch_size, epoch=epoch)
        losses = []
        stop = False
        for batch in batches(train_ds, plan):
            batch = augment(batch, aug_rng, cfg.augment, classes=train_ds.num_classes, mixup_alpha=cfg.mixup_alpha)
            targets = batch.targets if batch.targets is not None else one_hot(batch.labels, train_ds.num_classes)
            targets = smooth_targets(targets, cfg.label_smoothing)
            tape = Tape()
            # non-finite values are a reported outcome here, not an error
            with np.errstate(over="ignore", invalid="ignore", under="ignore"):
                logits = model.forward(batch.images, ForwardCtx("train", dp_rng, update_stats=True), tape)
                loss = softmax_cross_entropy(tape, logits, targets)
                loss_val = float(loss.array)
                if not math.isfinite(loss_val):
                    status = "diverged"
                    divergence_step = step
                    stop = True
                    break
                losses.append(loss_val)
                grads = backward(tape)
            lr = lr_at(schedule, step, steps_per_epoch)
            if cfg.optimizer.grad_clip is not None:
                clip_gradients(params, grads, cfg.optimizer.grad_clip)
            try:
                if cfg.optimizer.kind == "sgd-momentum":
                    sgd_step(params, grads, opt_state, cfg.optimizer, lr)
                else:
                    adamw_step(params, grads, opt_state, cfg.optimizer, lr)
            except NumericError:
                status = "diverged"
                divergence_step = step
                stop = True
                break
            step += 1
        val_loss, val_acc = evaluate(model, val_ds)
        train_loss = float(np.mean(losses)) if losses else float("nan")
        rows.append(
            EpochRow(epoch, train_loss, val_loss, val_acc, lr_at(schedule, step, steps_per_epoch), time.perf_counter() - t0)
        )
        if stop:
            break

    csv_path = out_dir / "run.csv"
    _write_csv(csv_path, rows)
    ckpt = out_dir / "checkpoint"
    save_checkpoint(model, ckpt)
    (out_dir / "status.txt").write_text(
        f"status {status}\nseed {seed}\ninit {cfg.init}\n"
        + (f"divergence_step {divergence_step}\n" if divergence_step is not None else "")
    )
    return RunReport(seed, cfg.init, status, rows, divergence_step, str(csv_path), str(ckpt))


@dataclass
class ArmSummary:
    init: str
    mean_acc: float
    std_acc: float
    mean_loss: float
    std_loss: float
    diverged: int
    runs: list[RunReport]


@dataclass
class AblationReport:
    arms: dict[str, ArmSummary]
    accuracy_gap: float                # neoinit mean acc - random mean acc
    report_path: str = ""

    def summary_text(self) -> str:
        lines = [
            "init-method ablation",
            f"reference (full-scale, 25 epochs): neoinit {REFERENCE_ACC_NEOINIT}% "
            f"vs random-normal {REFERENCE_ACC_RANDOM}% (gap +{REFERENCE_GAP_PP}pp); "
            "this harness reproduces the direction at desk scale, not the magnitude",
        ]
        for name, arm in self.arms.items():
            lines.append(
                f"{name}: mean val acc {arm.mean_acc:.4f} (std {arm.std_acc:.4f}), "
                f"mean val loss {arm.mean_loss:.4f} (std {arm.std_loss:.4f}), "
                f"diverged {arm.diverged}/{len(arm.runs)}"
            )
        lines.append(f"accuracy gap (neoinit - random-normal): {self.accuracy_gap:+.4f}")
        return "\n".join(lines) + "\n"


def run_ablation(base_cfg: RunConfig, seeds: list[int] | None = None) -> AblationReport:
    """Both init arms over all seeds, under identical settings."""
    seeds = list(base_cfg.seeds) if seeds is None else list(seeds)
    if len(seeds) < 2:
        raise ConfigError(f"ablation needs >= 2 seeds, got {seeds}")
    out_root = Path(base_cfg.out_dir)
    arms: dict[str, ArmSummary] = {}
    for init in ("neoinit", "random-normal"):
        runs = []
        for seed in seeds:
            cfg = replace(
                base_cfg,
                init=init,
                seeds=(seed,),
                out_dir=str(out_root / f"{init}_seed{seed}"),
            )
            runs.append(train_run(cfg, seed))
        accs = [r.final_val_acc for r in runs]
        losses = [r.final_val_loss for r in runs]
        arms[init] = ArmSummary(
            init,
            float(np.mean(accs)),
            float(np.std(accs)),
            float(np.mean(losses)),
            float(np.std(losses)),
            sum(r.status == "diverged" for r in runs),
            runs,
        )
    gap = arms["neoinit"].mean_acc - arms["random-normal"].mean_acc
    report = AblationReport(arms, gap)
    out_root.mkdir(parents=True, exist_ok=True)
    path = out_root / "ablation_report.txt"
    rows = ["init,seed,status,final_val_loss,final_val_acc"]
    for arm in arms.values():
        for r in arm.runs:
            rows.append(f"{r.init},{r.seed},{r.status},{r.final_val_loss!r},{r.final_val_acc!r}")
    path.write_text(report.summary_text() + "\n" + "\n".join(rows) + "\n")
    report.report_path = str(path)
    return report


# ------------------------------------------------------------- config files

CONFIG_HEADER = "neonext-run-config v1"

_CONFIG_KEYS = {
    "model", "data", "data_dir", "classes", "synth_train", "synth_val",
    "optimizer", "lr", "momentum", "beta1", "beta2", "weight_decay",
    "grad_clip", "epochs", "warmup_epochs", "floor_lr", "batch_size",
    "seeds", "init", "augment", "label_smoothing", "mixup_alpha",
    "drop_path", "out_dir",
}


def parse_config(text_or_path) -> RunConfig:
    p = Path(str(text_or_path))
    if p.is_file():
        text = p.read_text()
    else:
        text = str(text_or_path)
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != CONFIG_HEADER:
        raise ConfigError(f"config must start with the header line {CONFIG_HEADER!r}")
    kv = {}
    for ln in lines[1:]:
        if "=" not in ln:
            raise ConfigError(f"malformed config line: {ln!r}")
        key, _, value = ln.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        kv[key] = value

    def get(key, default):
        return kv.get(key, default)

    clip_raw = get("grad_clip", "none").lower()
    clip = None if clip_raw in ("", "none") else float(clip_raw)
    opt = OptimSpec(
        kind=get("optimizer", "sgd-momentum"),
        lr=float(get("lr", "0.1")),
        momentum=float(get("momentum", "0.9")),
        betas=(float(get("beta1", "0.9")), float(get("beta2", "0.999"))),
        weight_decay=float(get("weight_decay", "0.0")),
        grad_clip=clip,
    )
    seeds = tuple(int(s) for s in get("seeds", "1").split(",") if s.strip())
    return RunConfig(
        model=get("model", "neonext-micro"),
        data=get("data", "synthetic"),
        data_dir=get("data_dir", ""),
        classes=int(get("classes", "10")),
        synth_train=int(get("synth_train", "1920")),
        synth_val=int(get("synth_val", "512")),
        optimizer=opt,
        epochs=int(get("epochs", "3")),
        warmup_epochs=int(get("warmup_epochs", "1")),
        floor_lr=float(get("floor_lr", "0.0")),
        batch_size=int(get("batch_size", "64")),
        seeds=seeds,
        init=get("init", "neoinit"),
        augment=get("augment", "basic"),
        label_smoothing=float(get("label_smoothing", "0.1")),
        mixup_alpha=float(get("mixup_alpha", "0.8")),
        drop_path=float(get("drop_path", "0.05")),
        out_dir=get("out_dir", "runs/out"),
    )


def write_config(cfg: RunConfig, path) -> None:
    opt = cfg.optimizer
    clip = "none" if opt.grad_clip is None else repr(opt.grad_clip)
    text = "\n".join(
        [
            CONFIG_HEADER,
            f"model = {cfg.model}",
            f"data = {cfg.data}",
            f"data_dir = {cfg.data_dir}",
            f"classes = {cfg.classes}",
            f"synth_train = {cfg.synth_train}",
            f"synth_val = {cfg.synth_val}",
            f"optimizer = {opt.kind}",
            f"lr = {opt.lr!r}",
            f"momentum = {opt.momentum!r}",
            f"beta1 = {opt.betas[0]!r}",
            f"beta2 = {opt.betas[1]!r}",
            f"weight_decay = {opt.weight_decay!r}",
            f"grad_clip = {clip}",
            f"epochs = {cfg.epochs}",
            f"warmup_epochs = {cfg.warmup_epochs}",
            f"floor_lr = {cfg.floor_lr!r}",
            f"batch_size = {cfg.batch_size}",
            f"seeds = {','.join(map(str, cfg.seeds))}",
            f"init = {cfg.init}",
            f"augment = {cfg.augment}",
            f"label_smoothing = {cfg.label_smoothing!r}",
            f"mixup_alpha = {cfg.mixup_alpha!r}",
            f"drop_path = {cfg.drop_path!r}",
            f"out_dir = {cfg.out_dir}",
        ]
    )
    Path(path).write_text(text + "\n")
