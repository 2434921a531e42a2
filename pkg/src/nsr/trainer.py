"""Training loop: CTC or frame-level CE, elementwise gradient clipping, plain SGD.

``worker_count == 1`` runs a deterministic loop. With more workers, each thread
owns a disjoint shard, reads whatever parameters are current (possibly stale
by the number of in-flight steps) and applies its clipped update tensor by
tensor under a per-tensor lock, so no reader ever sees a half-written tensor.
"""

import csv
import logging
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import ctc
from .errors import ConfigError, InvalidLabel, NoAlignment, TrainingDiverged
from .network import BlstmStack, backward, forward_batch, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    decay: float = 0.5
    decay_every: int = 0  # 0 keeps the rate constant
    worker_count: int = 1
    batch_size: int = 8
    max_steps: int = 1000
    seed: int = 0
    loss: str = "ctc"
    clip_grad: float = 1.0
    init_range: float = 0.04
    log_every: int = 0

    def validate(self):
        if self.learning_rate <= 0 or self.decay <= 0:
            raise ConfigError("learning rate and decay must be positive")
        if self.worker_count < 1:
            raise ConfigError("worker_count must be >= 1")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ConfigError("batch_size must be >= 1 and max_steps >= 0")
        if self.loss not in ("ctc", "ce"):
            raise ConfigError("loss must be 'ctc' or 'ce', got %r" % self.loss)
        if self.clip_grad <= 0:
            raise ConfigError("clip_grad must be positive")

    def rate(self, step):
        if self.decay_every:
            return self.learning_rate * self.decay ** (step // self.decay_every)
        return self.learning_rate


@dataclass
class Checkpoint:
    stack: BlstmStack
    step: int = 0
    vocab_checksum: str = ""
    history: list = field(default_factory=list)  # (step, loss, wall_time, max_update)
    skipped: int = 0

    def save(self, path):
        save_checkpoint(path, self.stack, self.step, self.vocab_checksum)

    @classmethod
    def load(cls, path):
        stack, step, checksum = load_checkpoint(path)
        return cls(stack, step, checksum)

    def write_metrics(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "loss", "wall_time"])
            for step, loss, wall, _ in self.history:
                w.writerow([step, "%.10g" % loss, "%.6f" % wall])


def init_stack(input_dim, hidden, depths, num_outputs, seed=0, init_range=0.04, forget_bias=1.0):
    """Fresh stack with every parameter drawn from ``U(-init_range, init_range)``.

    The forget-gate biases are then set to ``forget_bias`` (``None`` leaves them
    random), so that fresh cells start out remembering.
    """
    rng = np.random.default_rng(seed)
    stack = BlstmStack(input_dim, hidden, depths, num_outputs)
    params = {}
    for name, shape in stack.param_shapes().items():
        params[name] = rng.uniform(-init_range, init_range, size=shape)
    if forget_bias is not None:
        H = hidden
        for name in params:
            if name.endswith(".b") and not name.startswith("out"):
                params[name][H:2 * H] = forget_bias
    return stack.with_params(params)


def warm_start(stack, donor):
    """Copy every LSTM layer from ``donor``; the output layer keeps its own init."""
    if (donor.input_dim, donor.hidden, donor.depths) != (stack.input_dim, stack.hidden, stack.depths):
        raise ConfigError("donor %r does not match %r below the output layer" % (donor, stack))
    params = {k: (donor.params[k].copy() if not k.startswith("out.") else v.copy())
              for k, v in stack.params.items()}
    return stack.with_params(params)


def ce_loss_grad(grid, frame_targets, log_probs=None):
    """Mean frame cross-entropy and its gradient with respect to the logits."""
    if log_probs is None:
        with np.errstate(divide="ignore"):
            log_probs = np.log(np.asarray(grid, dtype=np.float64))
    log_probs = np.asarray(log_probs, dtype=np.float64)
    targets = np.asarray(frame_targets, dtype=np.int64)
    T, V1 = log_probs.shape
    if targets.shape != (T,):
        raise InvalidLabel("need one target per frame: %d targets for %d frames" % (targets.size, T))
    if targets.size and (targets.min() < 0 or targets.max() >= V1):
        raise InvalidLabel("frame target outside [0, %d)" % V1)
    loss = -float(log_probs[np.arange(T), targets].sum()) / T
    grad = np.exp(log_probs)
    grad[np.arange(T), targets] -= 1.0
    return loss, grad / T


def frame_targets(stack, dataset, batch_size=32):
    """Forced-alignment frame labels (word id or blank) from a CTC model."""
    out = []
    for lo in range(0, len(dataset), batch_size):
        chunk = dataset[lo:lo + batch_size]
        log_probs, _ = forward_batch(stack, [x for x, _ in chunk])
        for lp, (_, labels) in zip(log_probs, chunk):
            ali = ctc.forced_align(None, ctc.build_ctc_lattice(labels), log_probs=lp)
            out.append(np.array(ali.frame_labels))
    return out


def _utterance_losses(stack, batch, loss_kind):
    """Summed loss and per-utterance logit gradients for a list of ``(x, target)`` pairs."""
    log_probs, cache = forward_batch(stack, [x for x, _ in batch])
    if any(np.isnan(lp).any() for lp in log_probs):
        raise TrainingDiverged("network produced NaN posteriors")
    grads = []
    total = 0.0
    for lp, (_, target) in zip(log_probs, batch):
        if loss_kind == "ctc":
            if not isinstance(target, ctc.CtcLattice):
                target = ctc.build_ctc_lattice(target)
            res = ctc.ctc_loss_grad(None, target, log_probs=lp)
            total += res.loss
            grads.append(res.grad)
        else:
            # frame-summed CE so its scale per utterance matches CTC's
            loss, g = ce_loss_grad(None, target, log_probs=lp)
            total += loss * lp.shape[0]
            grads.append(g * lp.shape[0])
    return total, grads, cache


def batch_loss_grad(stack, batch, loss_kind="ctc"):
    """Mean loss and mean parameter gradients over ``batch``."""
    total, grads, cache = _utterance_losses(stack, batch, loss_kind)
    pgrads = backward(stack, cache, grads)
    n = len(batch)
    return total / n, {k: v / n for k, v in pgrads.items()}


def evaluate_loss(stack, dataset, loss_kind="ctc", batch_size=32):
    """Mean per-utterance loss over ``dataset`` (labels, or frame targets for CE)."""
    data = _prepare(dataset, loss_kind)[0]
    total = 0.0
    for lo in range(0, len(data), batch_size):
        t, _, _ = _utterance_losses(stack, data[lo:lo + batch_size], loss_kind)
        total += t
    return total / max(1, len(data))


def _prepare(dataset, loss_kind):
    kept, skipped = [], 0
    for x, target in dataset:
        frames = getattr(x, "frames", x)
        T = np.shape(frames)[0]
        if loss_kind == "ctc":
            lat = target if isinstance(target, ctc.CtcLattice) else ctc.build_ctc_lattice(target)
            if ctc.min_frames(lat.labels) > T:
                skipped += 1
                continue
            kept.append((frames, lat))
        else:
            kept.append((frames, np.asarray(target)))
    return kept, skipped


def _sgd_step(params, grads, rate, clip):
    new = {}
    max_update = 0.0
    for name, g in grads.items():
        update = rate * np.clip(g, -clip, clip)
        max_update = max(max_update, float(np.abs(update).max()))
        new[name] = params[name] - update
    return new, max_update


def _check_finite(loss, step):
    if not np.isfinite(loss):
        raise TrainingDiverged("loss became %r at step %d" % (loss, step))


def train(cfg, dataset, init, vocab_checksum="", progress=None):
    """Train ``init`` on ``(features, labels)`` pairs and return a :class:`Checkpoint`.

    For ``cfg.loss == "ce"`` the second element of each pair is a per-frame
    target vector (see :func:`frame_targets`).
    """
    cfg.validate()
    data, skipped = _prepare(dataset, cfg.loss)
    if skipped:
        log.warning("skipped %d utterances too short for their transcripts", skipped)
    if not data:
        raise NoAlignment("no trainable utterances")
    if cfg.worker_count == 1:
        ckpt = _train_sync(cfg, data, init, progress)
    else:
        ckpt = _train_async(cfg, data, init, progress)
    ckpt.vocab_checksum = vocab_checksum
    ckpt.skipped = skipped
    return ckpt


def _batches(order, batch_size):
    for lo in range(0, len(order), batch_size):
        yield order[lo:lo + batch_size]


def _train_sync(cfg, data, init, progress):
    rng = np.random.default_rng(cfg.seed)
    params = {k: v.copy() for k, v in init.params.items()}
    stack = init.with_params(params)
    history = []
    t0 = time.perf_counter()
    step = 0
    while step < cfg.max_steps:
        for idx in _batches(rng.permutation(len(data)), cfg.batch_size):
            if step >= cfg.max_steps:
                break
            loss, grads = batch_loss_grad(stack, [data[i] for i in idx], cfg.loss)
            _check_finite(loss, step)
            params, max_update = _sgd_step(params, grads, cfg.rate(step), cfg.clip_grad)
            stack = stack.with_params(params)
            step += 1
            history.append((step, loss, time.perf_counter() - t0, max_update))
            if progress is not None:
                progress(step, loss)
            if cfg.log_every and step % cfg.log_every == 0:
                log.info("step %d loss %.4f", step, loss)
    return Checkpoint(stack, step, history=history)


class ParameterStore:
    """Shared parameters; each tensor is replaced atomically, never edited in place."""

    def __init__(self, params):
        self._params = {k: v.copy() for k, v in params.items()}
        self._locks = {k: threading.Lock() for k in params}
        self.version = 0

    def snapshot(self):
        return dict(self._params)

    def apply(self, grads, rate, clip):
        max_update = 0.0
        for name, g in grads.items():
            update = rate * np.clip(g, -clip, clip)
            max_update = max(max_update, float(np.abs(update).max()))
            with self._locks[name]:
                self._params[name] = self._params[name] - update
        self.version += 1
        return max_update


def _train_async(cfg, data, init, progress):
    store = ParameterStore(init.params)
    shuffled = np.random.default_rng(cfg.seed).permutation(len(data))
    shards = [shuffled[w::cfg.worker_count] for w in range(cfg.worker_count)]
    counter = {"next": 0}
    counter_lock = threading.Lock()
    history = []
    errors = []
    t0 = time.perf_counter()

    def claim():
        with counter_lock:
            if counter["next"] >= cfg.max_steps:
                return None
            counter["next"] += 1
            return counter["next"]

    def worker(w):
        rng = np.random.default_rng([cfg.seed, w + 1])
        shard = shards[w]
        try:
            while True:
                for idx in _batches(shard[rng.permutation(len(shard))], cfg.batch_size):
                    step = claim()
                    if step is None:
                        return
                    stack = init.with_params(store.snapshot())
                    loss, grads = batch_loss_grad(stack, [data[i] for i in idx], cfg.loss)
                    _check_finite(loss, step)
                    max_update = store.apply(grads, cfg.rate(step - 1), cfg.clip_grad)
                    history.append((step, loss, time.perf_counter() - t0, max_update))
                    if progress is not None:
                        progress(step, loss)
        except Exception as exc:
            errors.append(exc)
            with counter_lock:
                counter["next"] = cfg.max_steps

    threads = [threading.Thread(target=worker, args=(w,), daemon=True)
               for w in range(cfg.worker_count) if len(shards[w])]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if errors:
        raise errors[0]
    history.sort()
    return Checkpoint(init.with_params(store.snapshot()), min(counter["next"], cfg.max_steps),
                      history=history)
