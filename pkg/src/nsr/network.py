"""Deep bidirectional LSTM stack with a softmax over words plus blank.

Each depth holds a forward-in-time and a backward-in-time LSTM layer. Both read
the concatenated ``[forward, backward]`` outputs of the depth below (or the
acoustic features at depth 0). Gate layout inside every ``4H`` block is
``input, forget, cell candidate, output``. No peepholes, no projection.

All arrays are float64. Batched routines are time-major, ``(T, B, ...)``, and
pad shorter utterances at the end; the backward layer reverses each utterance
within its own length so padding never leaks into real frames.
"""

import hashlib
import json
import queue
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyInput, FormatError, ShapeError

CELL_CLIP = 50.0
CHECKPOINT_MAGIC = b"NSRC"
CHECKPOINT_VERSION = 1
DIRECTIONS = ("fw", "bw")


class BlstmStack:
    """Parameter container. ``params`` maps names such as ``"d1.bw.R"`` to arrays."""

    def __init__(self, input_dim, hidden, depths, num_outputs, params=None, cell_clip=CELL_CLIP):
        if depths < 1 or hidden < 1 or input_dim < 1:
            raise ConfigError("depths, hidden and input_dim must all be >= 1")
        if num_outputs < 2:
            raise ConfigError("need at least one word plus blank, got %d outputs" % num_outputs)
        self.input_dim = int(input_dim)
        self.hidden = int(hidden)
        self.depths = int(depths)
        self.num_outputs = int(num_outputs)
        self.cell_clip = float(cell_clip)
        if params is None:
            params = {name: np.zeros(shape) for name, shape in self.param_shapes().items()}
        self.params = params
        self._check_shapes()

    @classmethod
    def zeros(cls, input_dim, hidden, depths, num_outputs):
        return cls(input_dim, hidden, depths, num_outputs)

    def layer_input_dim(self, depth):
        return self.input_dim if depth == 0 else 2 * self.hidden

    def param_shapes(self):
        """Ordered ``name -> shape``; this order is the checkpoint layout."""
        H = self.hidden
        shapes = {}
        for d in range(self.depths):
            for direction in DIRECTIONS:
                shapes["d%d.%s.W" % (d, direction)] = (self.layer_input_dim(d), 4 * H)
                shapes["d%d.%s.R" % (d, direction)] = (H, 4 * H)
                shapes["d%d.%s.b" % (d, direction)] = (4 * H,)
        shapes["out.W"] = (2 * H, self.num_outputs)
        shapes["out.b"] = (self.num_outputs,)
        return shapes

    def param_names(self):
        return list(self.param_shapes())

    def _check_shapes(self):
        for name, shape in self.param_shapes().items():
            if name not in self.params:
                raise ShapeError("missing parameter %s" % name)
            if self.params[name].shape != shape:
                raise ShapeError("%s has shape %s, expected %s" % (name, self.params[name].shape, shape))

    def with_params(self, params):
        return BlstmStack(self.input_dim, self.hidden, self.depths, self.num_outputs,
                          params, self.cell_clip)

    def copy(self):
        return self.with_params({k: v.copy() for k, v in self.params.items()})

    def num_parameters(self):
        return sum(v.size for v in self.params.values())

    def flat(self):
        return np.concatenate([self.params[n].ravel() for n in self.param_names()])

    def arch(self):
        return {"input_dim": self.input_dim, "hidden": self.hidden,
                "depths": self.depths, "num_outputs": self.num_outputs}

    def __eq__(self, other):
        if not isinstance(other, BlstmStack) or self.arch() != other.arch():
            return NotImplemented
        return all(np.array_equal(self.params[n], other.params[n]) for n in self.param_names())

    def __repr__(self):
        return "BlstmStack(%dx%d, in=%d, out=%d)" % (self.depths, self.hidden, self.input_dim,
                                                      self.num_outputs)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LayerCache:
    x: np.ndarray  # T x B x Din
    gates: np.ndarray  # T x B x 4H, post-nonlinearity
    cell: np.ndarray  # T x B x H, after clipping
    tanh_cell: np.ndarray
    inside: np.ndarray  # T x B x H, True where the raw cell was within the clip range
    h: np.ndarray


@dataclass
class ForwardCache:
    lengths: np.ndarray
    layers: list  # per depth: {"fw": LayerCache, "bw": LayerCache}
    top: np.ndarray  # T x B x 2H
    logits: np.ndarray  # T x B x (V + 1)
    log_probs: np.ndarray
    extra: dict = field(default_factory=dict)


def lstm_layer_forward(W, R, b, x, clip=CELL_CLIP):
    T, B, _ = x.shape
    H = R.shape[0]
    xw = x @ W + b
    gates = np.empty((T, B, 4 * H))
    cell = np.empty((T, B, H))
    tanh_cell = np.empty((T, B, H))
    inside = np.empty((T, B, H), dtype=bool)
    h = np.empty((T, B, H))
    h_prev = np.zeros((B, H))
    c_prev = np.zeros((B, H))
    for t in range(T):
        z = xw[t] + h_prev @ R
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_raw = f * c_prev + i * g
        inside[t] = np.abs(c_raw) <= clip
        c = np.clip(c_raw, -clip, clip)
        tc = np.tanh(c)
        h_prev = o * tc
        c_prev = c
        gates[t, :, :H] = i
        gates[t, :, H:2 * H] = f
        gates[t, :, 2 * H:3 * H] = g
        gates[t, :, 3 * H:] = o
        cell[t] = c
        tanh_cell[t] = tc
        h[t] = h_prev
    return h, LayerCache(x, gates, cell, tanh_cell, inside, h)


def lstm_layer_backward(W, R, cache, dh_in):
    """Backprop through one layer. Returns ``(dx, dW, dR, db)``.

    Cells that were clipped pass no gradient back to their pre-clip value.
    """
    T, B, H = dh_in.shape
    gates = cache.gates
    dz_all = np.empty((T, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    zero = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i = gates[t, :, :H]
        f = gates[t, :, H:2 * H]
        g = gates[t, :, 2 * H:3 * H]
        o = gates[t, :, 3 * H:]
        tc = cache.tanh_cell[t]
        c_prev = cache.cell[t - 1] if t > 0 else zero
        dh = dh_in[t] + dh_next
        do = dh * tc
        dc = (dh * o * (1.0 - tc * tc) + dc_next) * cache.inside[t]
        dz = dz_all[t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H:] = do * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ R.T
    h_prev = np.concatenate([np.zeros((1, B, H)), cache.h[:-1]], axis=0)
    flat_dz = dz_all.reshape(T * B, 4 * H)
    dW = cache.x.reshape(T * B, -1).T @ flat_dz
    dR = h_prev.reshape(T * B, H).T @ flat_dz
    db = flat_dz.sum(axis=0)
    dx = dz_all @ W.T
    return dx, dW, dR, db


def reverse_padded(x, lengths):
    """Reverse each column of a time-major batch within its own length."""
    T, B = x.shape[:2]
    if B == 1 and lengths[0] == T:
        return x[::-1]
    t = np.arange(T)[:, None]
    L = np.asarray(lengths)[None, :]
    idx = np.where(t < L, L - 1 - t, t)
    return x[idx, np.arange(B)[None, :]]


def _as_frames(x):
    frames = getattr(x, "frames", x)
    return np.asarray(frames, dtype=np.float64)


def pad_batch(xs, input_dim):
    frames = [_as_frames(x) for x in xs]
    if not frames:
        raise EmptyInput("empty batch")
    for fr in frames:
        if fr.ndim != 2 or fr.shape[1] != input_dim:
            raise ShapeError("features of shape %s do not match input width %d" % (fr.shape, input_dim))
        if fr.shape[0] == 0:
            raise EmptyInput("utterance with zero frames")
    lengths = np.array([fr.shape[0] for fr in frames])
    X = np.zeros((lengths.max(), len(frames), input_dim))
    for b, fr in enumerate(frames):
        X[: fr.shape[0], b] = fr
    return X, lengths


def depth_forward(stack, depth, inp, lengths):
    p = stack.params
    hf, cf = lstm_layer_forward(p["d%d.fw.W" % depth], p["d%d.fw.R" % depth], p["d%d.fw.b" % depth],
                                inp, stack.cell_clip)
    hb_rev, cb = lstm_layer_forward(p["d%d.bw.W" % depth], p["d%d.bw.R" % depth], p["d%d.bw.b" % depth],
                                    reverse_padded(inp, lengths), stack.cell_clip)
    out = np.concatenate([hf, reverse_padded(hb_rev, lengths)], axis=-1)
    return out, {"fw": cf, "bw": cb}


def log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def output_forward(stack, top):
    logits = top @ stack.params["out.W"] + stack.params["out.b"]
    return logits, log_softmax(logits)


def forward_batch(stack, xs):
    """Run a list of utterances together. Returns ``(log_probs list, cache)``."""
    X, lengths = pad_batch(xs, stack.input_dim)
    inp = X
    layers = []
    for d in range(stack.depths):
        inp, lc = depth_forward(stack, d, inp, lengths)
        layers.append(lc)
    logits, log_probs = output_forward(stack, inp)
    cache = ForwardCache(lengths, layers, inp, logits, log_probs)
    return [log_probs[:L, b] for b, L in enumerate(lengths)], cache


def forward(stack, x):
    """Posterior grid ``T x (V + 1)`` for one utterance, plus the cache for :func:`backward`."""
    log_probs, cache = forward_batch(stack, [x])
    return np.exp(log_probs[0]), cache


def backward(stack, cache, dlogits):
    """Gradients of the loss with respect to every parameter.

    ``dlogits`` is ``T x (V + 1)`` for a single-utterance cache, or a list of
    per-utterance grids (or a padded ``T x B x (V + 1)`` array) for a batch.
    """
    T, B, V1 = cache.logits.shape
    if isinstance(dlogits, (list, tuple)):
        if len(dlogits) != B:
            raise ShapeError("got %d gradient grids for a batch of %d" % (len(dlogits), B))
        G = np.zeros((T, B, V1))
        for b, (g, L) in enumerate(zip(dlogits, cache.lengths)):
            g = np.asarray(g, dtype=np.float64)
            if g.shape != (L, V1):
                raise ShapeError("gradient grid %d has shape %s, expected %s" % (b, g.shape, (L, V1)))
            G[:L, b] = g
    else:
        G = np.asarray(dlogits, dtype=np.float64)
        if G.ndim == 2 and B == 1:
            G = G[:, None, :]
        if G.shape != (T, B, V1):
            raise ShapeError("gradient grid has shape %s, expected %s" % (G.shape, (T, B, V1)))

    p = stack.params
    H = stack.hidden
    grads = {}
    flat_g = G.reshape(T * B, V1)
    grads["out.W"] = cache.top.reshape(T * B, 2 * H).T @ flat_g
    grads["out.b"] = flat_g.sum(axis=0)
    dinp = G @ p["out.W"].T
    lengths = cache.lengths
    for d in range(stack.depths - 1, -1, -1):
        lc = cache.layers[d]
        dx_f, grads["d%d.fw.W" % d], grads["d%d.fw.R" % d], grads["d%d.fw.b" % d] = lstm_layer_backward(
            p["d%d.fw.W" % d], p["d%d.fw.R" % d], lc["fw"], dinp[..., :H])
        dx_b, grads["d%d.bw.W" % d], grads["d%d.bw.R" % d], grads["d%d.bw.b" % d] = lstm_layer_backward(
            p["d%d.bw.W" % d], p["d%d.bw.R" % d], lc["bw"], reverse_padded(dinp[..., H:], lengths))
        dinp = dx_f + reverse_padded(dx_b, lengths)
    return {name: grads[name] for name in stack.param_names()}


def _stage_bounds(depths, worker_count):
    n = max(1, min(worker_count, depths))
    edges = np.linspace(0, depths, n + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def forward_pipelined(stack, xs, worker_count, trace=None):
    """Posterior grids for many utterances with depths run as pipeline stages.

    Depths are split into ``min(worker_count, depths)`` contiguous stages, each
    on its own thread, so stage ``k`` can work on utterance ``i`` while stage
    ``k + 1`` finishes utterance ``i - 1``. Every utterance goes through the
    same per-depth arithmetic as :func:`forward`, so results are bit-identical.
    If ``trace`` is a list, ``(stage, utterance, t_start, t_end)`` tuples are
    appended to it.
    """
    if worker_count < 1:
        raise ConfigError("worker_count must be >= 1")
    xs = list(xs)
    frames = [pad_batch([x], stack.input_dim) for x in xs]
    stages = _stage_bounds(stack.depths, worker_count)
    clock = time.perf_counter

    def run_stage(k, item):
        idx, inp, lengths = item
        t0 = clock()
        lo, hi = stages[k]
        for d in range(lo, hi):
            inp, _ = depth_forward(stack, d, inp, lengths)
        if k == len(stages) - 1:
            _, log_probs = output_forward(stack, inp)
            inp = np.exp(log_probs[:, 0])
        if trace is not None:
            trace.append((k, idx, t0, clock()))
        return idx, inp, lengths

    if len(stages) == 1:
        return [run_stage(0, (i, X, L))[1] for i, (X, L) in enumerate(frames)]

    queues = [queue.Queue() for _ in range(len(stages) + 1)]
    errors = []
    done = object()

    def worker(k):
        while True:
            item = queues[k].get()
            if item is done:
                queues[k + 1].put(done)
                return
            try:
                queues[k + 1].put(run_stage(k, item))
            except Exception as exc:  # surfaced after join
                errors.append(exc)
                queues[k + 1].put(done)
                return

    threads = [threading.Thread(target=worker, args=(k,), daemon=True) for k in range(len(stages))]
    for th in threads:
        th.start()
    for i, (X, L) in enumerate(frames):
        queues[0].put((i, X, L))
    queues[0].put(done)
    results = {}
    while True:
        item = queues[-1].get()
        if item is done:
            break
        results[item[0]] = item[1]
    for th in threads:
        th.join()
    if errors:
        raise errors[0]
    return [results[i] for i in range(len(xs))]


def vocab_checksum_of(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def save_checkpoint(path, stack, step=0, vocab_checksum="", write_manifest=True):
    """Write the binary checkpoint and, next to it, a ``.json`` manifest.

    Layout (little endian)::

        b"NSRC" | u32 version | u32 input_dim | u32 hidden | u32 depths |
        u32 num_outputs | u64 step | 64 bytes vocab checksum (ascii, NUL padded) |
        f64 parameters, each tensor C-order, in BlstmStack.param_names() order
    """
    checksum = vocab_checksum.encode("ascii")[:64].ljust(64, b"\0")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IIIIIQ", CHECKPOINT_VERSION, stack.input_dim, stack.hidden,
                            stack.depths, stack.num_outputs, int(step)))
        f.write(checksum)
        for name in stack.param_names():
            f.write(np.ascontiguousarray(stack.params[name], dtype="<f8").tobytes())
    if write_manifest:
        manifest = dict(stack.arch(), format="NSRC", version=CHECKPOINT_VERSION, step=int(step),
                        vocab_checksum=vocab_checksum,
                        param_order=[[n, list(s)] for n, s in stack.param_shapes().items()])
        with open(str(path) + ".json", "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")


def load_checkpoint(path):
    """Return ``(stack, step, vocab_checksum)``."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError("%s: not an NSRC checkpoint" % path)
    version, input_dim, hidden, depths, num_outputs, step = struct.unpack_from("<IIIIIQ", data, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError("%s: unsupported checkpoint version %d" % (path, version))
    offset = 4 + struct.calcsize("<IIIIIQ")
    checksum = data[offset:offset + 64].rstrip(b"\0").decode("ascii")
    offset += 64
    stack = BlstmStack(input_dim, hidden, depths, num_outputs)
    params = {}
    for name, shape in stack.param_shapes().items():
        n = int(np.prod(shape))
        if offset + 8 * n > len(data):
            raise FormatError("%s: truncated at %s" % (path, name))
        params[name] = np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(shape).copy()
        offset += 8 * n
    if offset != len(data):
        raise FormatError("%s: %d trailing bytes" % (path, len(data) - offset))
    return stack.with_params(params), int(step), checksum
