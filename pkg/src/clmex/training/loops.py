"""Pre-training, downstream (probe then fine-tune) and the supervised baseline."""

from __future__ import annotations

import contextlib
import functools
import logging
import math
import time
from pathlib import Path
from typing import Optional

import numpy as np

from ..data.augment import AugmentConfig
from ..data.dataset import MultiViewDataset
from ..data.sampler import batches_per_epoch, check_sampler, epoch_batches, labeled_batches
from ..losses import clmex_loss, cross_entropy, simclr_loss, supcon_loss
from ..models import Network, predict
from ..tensor import Adam, ConstantSchedule, CosineSchedule, PlateauSchedule, Tensor, load_checkpoint, no_grad, save_checkpoint
from .config import RunConfig
from .diagnostic import view_invariance_diagnostic
from .report import TrainReport

log = logging.getLogger(__name__)

STREAM_PRETRAIN = 1
STREAM_DOWNSTREAM = 2
STREAM_BASELINE = 3
STREAM_SPLIT = 4


class TrainingError(RuntimeError):
    pass


class DivergenceError(TrainingError):
    def __init__(self, msg: str, last_good: Optional[Path] = None):
        super().__init__(msg)
        self.last_good = last_good


# -- checkpoints -------------------------------------------------------------------


def save_training_checkpoint(path, net: Network, optimizer: Optional[Adam] = None,
                             rng: Optional[np.random.Generator] = None, **meta) -> Path:
    tensors = {f"model/{k}": v for k, v in net.state_dict().items()}
    meta = dict(meta, architecture=net.architecture())
    if optimizer is not None:
        by_id = {id(p): n for n, p in net.named_parameters().items()}
        opt_names = [by_id[id(p)] for p in optimizer.params]
        for name, m, v in zip(opt_names, optimizer.state.first_moment, optimizer.state.second_moment):
            tensors[f"optim/m/{name}"] = m
            tensors[f"optim/v/{name}"] = v
        s = optimizer.state
        meta["optimizer"] = {
            "params": opt_names, "step_count": s.step_count, "beta1": s.beta1, "beta2": s.beta2,
            "epsilon": s.epsilon, "weight_decay": s.weight_decay, "lr": optimizer.lr,
        }
    if rng is not None:
        meta["rng_state"] = rng.bit_generator.state
    return save_checkpoint(path, tensors, meta)


def load_network(path) -> tuple[Network, dict]:
    tensors, meta = load_checkpoint(path)
    net = Network.from_architecture(meta["architecture"])
    net.load_state_dict({k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")})
    return net, meta


def _restore_optimizer(path, net: Network, optimizer: Adam) -> dict:
    tensors, meta = load_checkpoint(path)
    info = meta["optimizer"]
    by_name = net.named_parameters()
    optimizer.params = [by_name[n] for n in info["params"]]
    optimizer.state.first_moment = [tensors[f"optim/m/{n}"] for n in info["params"]]
    optimizer.state.second_moment = [tensors[f"optim/v/{n}"] for n in info["params"]]
    optimizer.state.step_count = info["step_count"]
    return meta


def _single_threaded_if_deterministic(fn):
    """Pin BLAS to one thread while ``fn`` runs when ``config.deterministic`` is set."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        config = kwargs.get("config") or next(a for a in args if isinstance(a, RunConfig))
        ctx = deterministic_threads() if config.deterministic else contextlib.nullcontext()
        with ctx:
            return fn(*args, **kwargs)

    return wrapper


def deterministic_threads():
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1)


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def _dtype(config: RunConfig):
    return np.dtype(config.model.dtype)


# -- pre-training ---------------------------------------------------------------------


def _contrastive(config: RunConfig, Z: Tensor, batch) -> Tensor:
    p = config.pretrain
    if p.loss == "clmex":
        return clmex_loss(Z, batch.view_ids, p.temperature, positive_count=p.positive_count, reduction=p.reduction)
    if p.loss == "simclr":
        return simclr_loss(Z, batch.source_indices, p.temperature, reduction=p.reduction)
    return supcon_loss(Z, batch.labels, p.temperature, positive_count=p.positive_count, reduction=p.reduction)


@_single_threaded_if_deterministic
def pretrain(
    config: RunConfig,
    dataset: MultiViewDataset,
    out_dir=None,
    diagnostic_dataset: Optional[MultiViewDataset] = None,
    resume_from=None,
) -> tuple[Network, TrainReport]:
    """Contrastive pre-training of encoder + projection head.

    For ``clmex`` and ``simclr`` the labels are stripped from the dataset
    before any batch is drawn; ``supcon`` is the supervised comparator and
    reads them.
    """
    config.validate()
    p = config.pretrain
    if p.loss == "supcon":
        data = dataset
    else:
        data = dataset.without_labels()
    sampler = p.sampler()
    check_sampler(data, sampler)
    diag_data = (diagnostic_dataset or dataset).without_labels()

    net = Network(config.model.encoder, config.model.projection, seed=config.seed, dtype=_dtype(config))
    opt = Adam(net.parameters(), lr=p.lr, weight_decay=p.weight_decay)
    rng = _rng(config.seed, STREAM_PRETRAIN)
    per_epoch = batches_per_epoch(data, sampler)
    total = p.epochs * per_epoch
    schedule = CosineSchedule(p.lr, total) if p.schedule == "cosine" else ConstantSchedule(p.lr)
    report = TrainReport("pretrain", config.seed, config.to_dict())
    out = Path(out_dir) if out_dir is not None else None

    start_epoch = 1
    step = 0
    initial = view_invariance_diagnostic(net.encoder, diag_data)
    best_loss = math.inf
    if resume_from is not None:
        meta = _restore_optimizer(resume_from, net, opt)
        net.load_state_dict({k: v for k, v in _model_tensors(resume_from).items()})
        rng.bit_generator.state = meta["rng_state"]
        report.records = list(meta["records"])
        initial = meta["initial_view_invariance"]
        best_loss = meta.get("best_loss", math.inf)
        start_epoch = meta["epoch"] + 1
        step = meta["step"]

    aug = p.augment
    for epoch in range(start_epoch, p.epochs + 1):
        t0 = time.perf_counter()
        losses = []
        lr = schedule.lr_at(step)
        for batch in epoch_batches(data, sampler, rng, aug) if p.loss != "supcon" else _labeled_pair_batches(data, sampler, rng, aug):
            lr = schedule.lr_at(step)
            Z = net.project(net.encode(batch.images))
            loss = _contrastive(config, Z, batch)
            value = float(loss.data)
            if not math.isfinite(value):
                last = out / "last.ckpt" if out is not None and (out / "last.ckpt").exists() else None
                raise DivergenceError(f"non-finite pre-training loss at epoch {epoch}, step {step}", last)
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            step += 1
            losses.append(value)
        diag = view_invariance_diagnostic(net.encoder, diag_data)
        mean_loss = float(np.mean(losses))
        report.add(epoch=epoch, stage="pretrain", loss=mean_loss, lr=lr, steps=len(losses),
                   view_invariance=diag, wall_time=time.perf_counter() - t0)
        log.info("pretrain epoch %d/%d loss %.4f invariance %.3f", epoch, p.epochs, mean_loss, diag)
        if out is not None:
            meta = dict(stage="pretrain", epoch=epoch, step=step, records=report.deterministic_view()["records"],
                        initial_view_invariance=initial, best_loss=min(best_loss, mean_loss))
            save_training_checkpoint(out / "last.ckpt", net, opt, rng, **meta)
            if mean_loss < best_loss:
                save_training_checkpoint(out / "best.ckpt", net, opt, rng, **meta)
        best_loss = min(best_loss, mean_loss)

    if step != total:
        raise TrainingError(f"step accounting: ran {step} steps, expected {total}")
    report.final_metrics = {
        "loss": report.records[-1]["loss"],
        "initial_view_invariance": initial,
        "final_view_invariance": report.records[-1]["view_invariance"],
        "total_steps": step,
        "batches_per_epoch": per_epoch,
    }
    if out is not None:
        report.checkpoint_path = str(out / "last.ckpt")
        report.write(out)
    return net, report


def _model_tensors(path) -> dict:
    tensors, _ = load_checkpoint(path)
    return {k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")}


def _labeled_pair_batches(data, sampler, rng, aug):
    from ..data.sampler import augment_pairs

    for batch in epoch_batches(data, sampler, rng, aug):
        yield augment_pairs(data, batch.source_indices[0::2], rng, aug, with_labels=True)


# -- supervised stages -----------------------------------------------------------------


class LabelSubsetError(ValueError):
    pass


def stratified_label_subset(labels: np.ndarray, fraction: float, seed: int, num_classes: Optional[int] = None) -> np.ndarray:
    """Seeded per-class subset; smaller fractions give prefixes of larger ones.

    Each class keeps round(fraction * count) of its images. Classes left
    with none raise `LabelSubsetError`.
    """
    if not 0.0 < fraction <= 1.0:
        raise LabelSubsetError(f"fraction must lie in (0, 1], got {fraction}")
    labels = np.asarray(labels)
    classes = range(num_classes) if num_classes is not None else np.unique(labels)
    rng = np.random.default_rng([seed, 99])
    keep, uncovered = [], []
    for c in classes:
        idx = np.flatnonzero(labels == c)
        perm = rng.permutation(idx)
        k = int(math.floor(fraction * len(idx) + 0.5))
        if k == 0:
            uncovered.append(int(c))
            continue
        keep.append(perm[:k])
    if uncovered:
        raise LabelSubsetError(f"label fraction {fraction} leaves classes {uncovered} without labeled examples")
    return np.sort(np.concatenate(keep))


def _train_val_split(n: int, val_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n_val = int(round(val_fraction * n)) if n >= 2 else 0
    if val_fraction > 0 and n >= 2:
        n_val = max(n_val, 1)
    perm = rng.permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _eval_loss(net: Network, data: MultiViewDataset, batch_size: int = 128) -> float:
    total, n = 0.0, 0
    with no_grad():
        for start in range(0, len(data), batch_size):
            idx = np.arange(start, min(start + batch_size, len(data)))
            logits = net.classify(data.chw_images(idx))
            total += float(cross_entropy(logits, data.labels[idx]).data) * len(idx)
            n += len(idx)
    return total / n


def predict_dataset(net: Network, data: MultiViewDataset, batch_size: int = 128) -> np.ndarray:
    out = []
    with no_grad():
        for start in range(0, len(data), batch_size):
            idx = np.arange(start, min(start + batch_size, len(data)))
            out.append(predict(net.classify(data.chw_images(idx))))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def prepare_labeled(config: RunConfig, dataset: MultiViewDataset) -> tuple[MultiViewDataset, Optional[MultiViewDataset]]:
    """Label-fraction subset of the training data, split into train and plateau-monitor parts."""
    d = config.downstream
    subset = stratified_label_subset(dataset.labels, d.label_fraction, config.seed, dataset.num_classes)
    tr, va = _train_val_split(len(subset), d.val_fraction, _rng(config.seed, STREAM_SPLIT))
    train = dataset.subset(subset[tr])
    val = dataset.subset(subset[va]) if len(va) else None
    return train, val


def _supervised_phase(
    net: Network,
    train: MultiViewDataset,
    val: Optional[MultiViewDataset],
    epochs: int,
    stage: str,
    config: RunConfig,
    optimizer: Adam,
    schedule: PlateauSchedule,
    rng: np.random.Generator,
    report: TrainReport,
    freeze_encoder: bool,
    aug: Optional[AugmentConfig],
    epoch_offset: int,
) -> int:
    d = config.downstream
    steps = 0
    for e in range(1, epochs + 1):
        t0 = time.perf_counter()
        losses = []
        lr = schedule.lr
        for images, labels in labeled_batches(train, d.batch_size, rng, aug):
            if freeze_encoder:
                with no_grad():
                    r = net.encode(images)
                logits = net.classifier(Tensor(r.data))
            else:
                logits = net.classify(images)
            loss = cross_entropy(logits, labels)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite {stage} loss at epoch {e}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step(lr)
            steps += 1
            losses.append(value)
        train_loss = float(np.mean(losses))
        monitored = _eval_loss(net, val) if val is not None else train_loss
        schedule.observe(monitored)
        report.add(epoch=epoch_offset + e, stage=stage, loss=train_loss, val_loss=monitored, lr=lr,
                   steps=len(losses), wall_time=time.perf_counter() - t0)
        log.info("%s epoch %d/%d loss %.4f val %.4f lr %.2e", stage, e, epochs, train_loss, monitored, lr)
    return steps


@_single_threaded_if_deterministic
def downstream_train(
    net: Network,
    dataset: MultiViewDataset,
    config: RunConfig,
    out_dir=None,
) -> tuple[Network, TrainReport]:
    """Drop the projection head, train a linear classifier on the frozen encoder, then fine-tune everything."""
    config.validate()
    d = config.downstream
    if net.classifier is not None and net.classifier.num_classes != dataset.num_classes:
        raise TrainingError(f"classifier has {net.classifier.num_classes} classes, dataset has {dataset.num_classes}")
    train, val = prepare_labeled(config, dataset)
    net.drop_projection()
    if net.classifier is None:
        net.attach_classifier(dataset.num_classes, seed=config.seed + 1)
    rng = _rng(config.seed, STREAM_DOWNSTREAM)
    aug = config.pretrain.augment if d.augment else None
    schedule = PlateauSchedule(d.lr, d.plateau_factor, d.plateau_patience)
    report = TrainReport("downstream", config.seed, config.to_dict())

    probe_opt = Adam(net.classifier.parameters(), lr=d.lr, weight_decay=d.weight_decay)
    probe_steps = _supervised_phase(net, train, val, d.probe_epochs, "probe", config, probe_opt, schedule, rng,
                                    report, True, aug, 0)
    ft_opt = Adam(net.parameters(), lr=d.lr, weight_decay=d.weight_decay)
    ft_steps = _supervised_phase(net, train, val, d.finetune_epochs, "finetune", config, ft_opt, schedule, rng,
                                 report, False, aug, d.probe_epochs)
    report.final_metrics = {
        "probe_steps": probe_steps,
        "finetune_steps": ft_steps,
        "total_steps": probe_steps + ft_steps,
        "labeled_train": len(train),
        "labeled_val": 0 if val is None else len(val),
        "final_lr": schedule.lr,
    }
    if out_dir is not None:
        out = Path(out_dir)
        path = save_training_checkpoint(out / "classifier.ckpt", net, ft_opt, rng, stage="downstream")
        report.checkpoint_path = str(path)
        report.write(out)
    return net, report


@_single_threaded_if_deterministic
def supervised_baseline(
    dataset: MultiViewDataset,
    config: RunConfig,
    out_dir=None,
) -> tuple[Network, TrainReport]:
    """Same encoder + linear head, trained from random init on labels only."""
    config.validate()
    d = config.downstream
    train, val = prepare_labeled(config, dataset)
    net = Network(config.model.encoder, None, dataset.num_classes, seed=config.seed, dtype=_dtype(config))
    rng = _rng(config.seed, STREAM_BASELINE)
    aug = config.pretrain.augment if d.augment else None
    schedule = PlateauSchedule(d.lr, d.plateau_factor, d.plateau_patience)
    opt = Adam(net.parameters(), lr=d.lr, weight_decay=d.weight_decay)
    report = TrainReport("baseline", config.seed, config.to_dict())
    steps = _supervised_phase(net, train, val, config.baseline_epochs(), "baseline", config, opt, schedule, rng,
                              report, False, aug, 0)
    report.final_metrics = {"total_steps": steps, "labeled_train": len(train),
                            "labeled_val": 0 if val is None else len(val), "final_lr": schedule.lr}
    if out_dir is not None:
        out = Path(out_dir)
        path = save_training_checkpoint(out / "baseline.ckpt", net, opt, rng, stage="baseline")
        report.checkpoint_path = str(path)
        report.write(out)
    return net, report


# -- data wiring -------------------------------------------------------------------------


def build_datasets(config: RunConfig) -> tuple[MultiViewDataset, MultiViewDataset, MultiViewDataset]:
    """(full, train, test) for a config: the manifest if given, else the synthetic set, split by subject."""
    from ..data.dataset import split_by_subject
    from ..data.manifest import load_dataset, load_manifest
    from ..data.synthetic import generate_synthetic_dataset

    if config.data.manifest is not None:
        full = load_dataset(load_manifest(config.data.manifest))
    else:
        _, full = generate_synthetic_dataset(config.data.synthetic)
    train, test = split_by_subject(full, config.data.test_fraction, np.random.default_rng([config.data.split_seed, STREAM_SPLIT]))
    return full, train, test
