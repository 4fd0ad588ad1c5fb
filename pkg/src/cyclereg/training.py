"""Training strategies, optimizers and the epoch loop.

Four strategies over a forward model phi: X->Y and a backward model
psi: Y->X, each with a forward-task loss L_f and a backward-task loss
L_b per mini-batch:

  baseline    L_f = L(y - phi(x))            L_b = L(x - psi(y))
  ucm         L_f = L(y - phi(x))            L_b = L(y - phi(psi(y)))
  ucm_hybrid  L_f = L(y - phi(x))            L_b = (cycle + direct) / 2
  jcm         L_f = a_f L(x - psi(phi(x))) + b_f l(x - psi(phi(psi(phi(x)))))
              L_b = a_b L(y - phi(psi(y))) + b_b l(y - phi(psi(phi(psi(y)))))
              optimized through L_total = (L_f + L_b) / 2 on unpaired rows

Gradient routing is per strategy and per step. The pure cycle strategy
treats phi as frozen inside its reconstruction term (gradient flows
through the computation, only psi parameters move). The hybrid couples
both models when a single merged step carries its terms, but its
dedicated stepwise cycle refinement is a backward-model step: phi stays
frozen there. The unpaired strategy always trains both models. A model
runs its batchnorm in training mode only when the current step updates
that model; a frozen traversal keeps running statistics untouched.

Update modes: "simultaneous" performs one optimizer step per batch over
every trainable parameter of the strategy; "stepwise" splits each batch
into ordered steps (forward-model step then backward-model step; hybrid:
direct then cycle) with a fresh forward pass in between.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .autodiff import LOSS_KINDS, Tape, backward, loss_eval
from .models import model_forward

STRATEGIES = ("baseline", "ucm", "ucm_hybrid", "jcm")
OPTIMIZERS = ("sgd", "adam")
UPDATE_MODES = ("simultaneous", "stepwise")

_PHI, _PSI = "phi.", "psi."


class ConfigError(ValueError):
    """A plan or config value outside its allowed range."""


@dataclass
class TrainingPlan:
    strategy: str = "baseline"
    loss: str = "l2"
    cycle_loss: str | None = None       # mapping-consistency penalty; None -> loss
    optimizer: str = "adam"
    learning_rate: float | None = None  # None -> optimizer default
    weight_decay: float = 0.0
    clip_norm: float = 10.0
    epochs: int = 500
    batch_fraction: float = 0.1
    update_mode: str = "simultaneous"
    alpha_f: float = 1.0
    alpha_b: float = 1.0
    beta_f: float = 0.5
    beta_b: float = 0.5
    seed: int = 0

    def resolved_cycle_loss(self):
        return self.loss if self.cycle_loss is None else self.cycle_loss

    def resolved_lr(self):
        if self.learning_rate is not None:
            return self.learning_rate
        return 1e-3 if self.optimizer == "adam" else 1e-2


def validate_plan(plan):
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(plan.strategy in STRATEGIES,
         f"strategy {plan.strategy!r} not in {STRATEGIES}")
    need(plan.loss in LOSS_KINDS, f"loss {plan.loss!r} not in {LOSS_KINDS}")
    need(plan.cycle_loss is None or plan.cycle_loss in LOSS_KINDS,
         f"cycle_loss {plan.cycle_loss!r} not in {LOSS_KINDS}")
    need(plan.optimizer in OPTIMIZERS,
         f"optimizer {plan.optimizer!r} not in {OPTIMIZERS}")
    need(plan.update_mode in UPDATE_MODES,
         f"update_mode {plan.update_mode!r} not in {UPDATE_MODES}")
    need(plan.learning_rate is None or plan.learning_rate > 0,
         f"learning rate must be positive, got {plan.learning_rate}")
    need(plan.weight_decay >= 0, f"weight_decay must be >= 0, got {plan.weight_decay}")
    need(plan.clip_norm > 0, f"clip_norm must be positive, got {plan.clip_norm}")
    need(int(plan.epochs) == plan.epochs and plan.epochs >= 1,
         f"epochs must be a positive integer, got {plan.epochs}")
    need(0.02 <= plan.batch_fraction <= 0.50,
         f"batch_fraction must lie in [0.02, 0.50], got {plan.batch_fraction}")
    for name in ("alpha_f", "alpha_b"):
        v = getattr(plan, name)
        need(1.0 <= v <= 3.0, f"{name} must lie in [1, 3], got {v}")
    for name in ("beta_f", "beta_b"):
        v = getattr(plan, name)
        need(0.0 <= v <= 1.0, f"{name} must lie in [0, 1], got {v}")
    need(int(plan.seed) == plan.seed and plan.seed >= 0,
         f"seed must be a non-negative integer, got {plan.seed}")
    return plan


def batch_size(n_rows, fraction):
    return max(2, int(round(fraction * n_rows)))


# -- optimizers ------------------------------------------------------------

class Sgd:
    def __init__(self, lr=1e-2):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            K.sgd_step(params[k].ravel(), np.ascontiguousarray(g).ravel(), self.lr)


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = {}

    def step(self, params, grads):
        for k, g in grads.items():
            p = params[k]
            if k not in self.m:
                self.m[k] = np.zeros(p.size)
                self.v[k] = np.zeros(p.size)
                self.t[k] = 0
            # per-key step count: stepwise modes touch key subsets at
            # different cadences and bias correction must track that
            self.t[k] += 1
            t = self.t[k]
            K.adam_step(p.ravel(), np.ascontiguousarray(g).ravel(),
                        self.m[k], self.v[k], self.lr, self.beta1, self.beta2,
                        self.eps, 1.0 - self.beta1 ** t, 1.0 - self.beta2 ** t)


def make_optimizer(plan):
    lr = plan.resolved_lr()
    return Adam(lr=lr) if plan.optimizer == "adam" else Sgd(lr=lr)


def clip_gradients(grads, max_norm):
    """Global-norm clip, in place. Returns the pre-clip norm."""
    total = 0.0
    for g in grads.values():
        total += K.sumsq(np.ascontiguousarray(g).ravel())
    norm = float(np.sqrt(total))
    if norm > max_norm > 0.0:
        s = max_norm / norm
        for g in grads.values():
            K.scale_inplace(g.ravel(), s)
    return norm


def _apply_weight_decay(grads, params, wd):
    if wd <= 0.0:
        return
    for k, g in grads.items():
        if k.endswith(".w"):
            g += wd * params[k]


def _subset(grads, prefix):
    return {k: g for k, g in grads.items() if k.startswith(prefix)}


# -- strategy loss graphs ----------------------------------------------------

def _fwd(tape, model, x, training, prefix, rng):
    return model_forward(tape, model, x, training=training, prefix=prefix, rng=rng)


def _weighted_pair(tape, main_id, main_w, extra_id, extra_w):
    if extra_id is None:
        return tape.scale(main_id, main_w)
    return tape.add(tape.scale(main_id, main_w), tape.scale(extra_id, extra_w))


def strategy_losses(tape, pair, xb, yb, plan, phi_train, psi_train, rng=None):
    """Record the strategy's loss terms for one batch. Returns a dict of
    scalar node ids; keys depend on the strategy. phi_train/psi_train pick
    which side's terms the pass builds; batchnorm mode and gradient routing
    then follow each term's own update semantics."""
    kind = plan.loss
    cyc = plan.resolved_cycle_loss()
    x_id = tape.constant(xb)
    y_id = tape.constant(yb)
    s = plan.strategy

    if s == "baseline":
        out = {}
        if phi_train is not None:
            out["f"] = loss_eval(tape, kind,
                                 _fwd(tape, pair.phi, x_id, phi_train, _PHI, rng), y_id)
        if psi_train is not None:
            out["b"] = loss_eval(tape, kind,
                                 _fwd(tape, pair.psi, y_id, psi_train, _PSI, rng), x_id)
        return out

    if s == "ucm":
        out = {}
        if phi_train is not None:
            out["f"] = loss_eval(tape, kind,
                                 _fwd(tape, pair.phi, x_id, phi_train, _PHI, rng), y_id)
        if psi_train is not None:
            x_hat = _fwd(tape, pair.psi, y_id, psi_train, _PSI, rng)
            y_cycle = _fwd(tape, pair.phi, x_hat, False, _PHI, rng)
            out["b"] = loss_eval(tape, kind, y_cycle, y_id)
        return out

    if s == "ucm_hybrid":
        out = {}
        if phi_train is not None:
            out["f"] = loss_eval(tape, kind,
                                 _fwd(tape, pair.phi, x_id, phi_train, _PHI, rng), y_id)
        if psi_train is not None:
            want = psi_train if isinstance(psi_train, set) else {"direct", "cycle"}
            x_hat = _fwd(tape, pair.psi, y_id, True, _PSI, rng)
            if "direct" in want:
                out["b_direct"] = loss_eval(tape, kind, x_hat, x_id)
            if "cycle" in want:
                # when phi is a trainable participant of this pass (merged
                # simultaneous step) the cycle term couples into it; the
                # dedicated stepwise cycle refinement traverses it frozen
                y_cycle = _fwd(tape, pair.phi, x_hat, phi_train is not None,
                               _PHI, rng)
                out["b_cycle"] = loss_eval(tape, kind, y_cycle, y_id)
            if "direct" in want and "cycle" in want:
                out["b"] = tape.scale(tape.add(out["b_cycle"], out["b_direct"]), 0.5)
        return out

    # jcm: both directions are cycle losses on unpaired rows
    out = {}
    if phi_train is not None:
        y_mid = _fwd(tape, pair.phi, x_id, bool(phi_train), _PHI, rng)
        x_rec = _fwd(tape, pair.psi, y_mid, bool(psi_train), _PSI, rng)
        l_main = loss_eval(tape, kind, x_rec, x_id)
        l_map = None
        if plan.beta_f > 0.0:
            y_mid2 = _fwd(tape, pair.phi, x_rec, bool(phi_train), _PHI, rng)
            x_rec2 = _fwd(tape, pair.psi, y_mid2, bool(psi_train), _PSI, rng)
            l_map = loss_eval(tape, cyc, x_rec2, x_id)
        out["f"] = _weighted_pair(tape, l_main, plan.alpha_f, l_map, plan.beta_f)
    if psi_train is not None:
        x_mid = _fwd(tape, pair.psi, y_id, bool(psi_train), _PSI, rng)
        y_rec = _fwd(tape, pair.phi, x_mid, bool(phi_train), _PHI, rng)
        l_main = loss_eval(tape, kind, y_rec, y_id)
        l_map = None
        if plan.beta_b > 0.0:
            x_mid2 = _fwd(tape, pair.psi, y_rec, bool(psi_train), _PSI, rng)
            y_rec2 = _fwd(tape, pair.phi, x_mid2, bool(phi_train), _PHI, rng)
            l_map = loss_eval(tape, cyc, y_rec2, y_id)
        out["b"] = _weighted_pair(tape, l_main, plan.alpha_b, l_map, plan.beta_b)
    if "f" in out and "b" in out:
        out["total"] = tape.scale(tape.add(out["f"], out["b"]), 0.5)
    return out


# -- per-batch steps ---------------------------------------------------------

def _step_on(tape, loss_id, keep_prefixes, params, plan, opt):
    grads = backward(tape, loss_id)
    grads = {k: g for k, g in grads.items()
             if any(k.startswith(p) for p in keep_prefixes)}
    _apply_weight_decay(grads, params, plan.weight_decay)
    clip_gradients(grads, plan.clip_norm)
    opt.step(params, grads)


def _merge_routed(tape, parts, params, plan, opt):
    """One optimizer step from per-term backward passes with routing."""
    merged = {}
    for loss_id, prefix in parts:
        for k, g in backward(tape, loss_id).items():
            if k.startswith(prefix):
                merged[k] = merged[k] + g if k in merged else g
    _apply_weight_decay(merged, params, plan.weight_decay)
    clip_gradients(merged, plan.clip_norm)
    opt.step(params, merged)


def train_step(pair, params, xb, yb, plan, opt, rng):
    """One mini-batch update. Returns (loss_forward, loss_backward); on a
    non-finite loss the update is skipped so the caller sees the blow-up
    at the exact batch it happened."""
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _train_step(pair, params, xb, yb, plan, opt, rng)


def _train_step(pair, params, xb, yb, plan, opt, rng):
    s = plan.strategy
    if plan.update_mode == "simultaneous":
        tape = Tape()
        losses = strategy_losses(tape, pair, xb, yb, plan, True, True, rng)
        lf = float(tape.value(losses["f"]))
        lb = float(tape.value(losses["b"]))
        if not (np.isfinite(lf) and np.isfinite(lb)):
            return lf, lb
        if s == "jcm":
            _step_on(tape, losses["total"], (_PHI, _PSI), params, plan, opt)
        elif s == "ucm_hybrid":
            # coupled strategy: one combined step over both models
            _step_on(tape, tape.add(losses["f"], losses["b"]),
                     (_PHI, _PSI), params, plan, opt)
        else:
            _merge_routed(tape, [(losses["f"], _PHI), (losses["b"], _PSI)],
                          params, plan, opt)
        return lf, lb

    # stepwise: ordered steps with a fresh forward pass in between
    if s == "ucm_hybrid":
        t1 = Tape()
        l1 = strategy_losses(t1, pair, xb, yb, plan, True, {"direct"}, rng)
        lf = float(t1.value(l1["f"]))
        direct = float(t1.value(l1["b_direct"]))
        if not (np.isfinite(lf) and np.isfinite(direct)):
            return lf, direct
        _merge_routed(t1, [(l1["f"], _PHI), (l1["b_direct"], _PSI)],
                      params, plan, opt)
        t2 = Tape()
        l2 = strategy_losses(t2, pair, xb, yb, plan, None, {"cycle"}, rng)
        cycle = float(t2.value(l2["b_cycle"]))
        if np.isfinite(cycle):
            _step_on(t2, l2["b_cycle"], (_PSI,), params, plan, opt)
        return lf, 0.5 * (direct + cycle)

    # baseline/ucm/jcm stepwise: forward-model step, then backward-model step
    t1 = Tape()
    l1 = strategy_losses(t1, pair, xb, yb, plan, True, None, rng)
    lf = float(t1.value(l1["f"]))
    if not np.isfinite(lf):
        return lf, float("nan")
    _step_on(t1, l1["f"], (_PHI,), params, plan, opt)
    t2 = Tape()
    l2 = strategy_losses(t2, pair, xb, yb, plan, None, True, rng)
    lb = float(t2.value(l2["b"]))
    if np.isfinite(lb):
        _step_on(t2, l2["b"], (_PSI,), params, plan, opt)
    return lf, lb


# -- epoch / run --------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    loss_forward: float
    loss_backward: float
    loss_total: float
    wall_ms: float


@dataclass
class TrainResult:
    status: str                 # "ok" | "diverged"
    records: list
    diverged_at: tuple | None = None  # (epoch, batch)

    @property
    def final(self):
        return self.records[-1] if self.records else None


def pair_params(pair):
    out = {f"{_PHI}{k}": v for k, v in pair.phi.params.items()}
    out.update({f"{_PSI}{k}": v for k, v in pair.psi.params.items()})
    return out


def train_epoch(pair, params, x, y, plan, opt, rng, epoch):
    t0 = time.perf_counter()
    n = x.shape[0]
    size = batch_size(n, plan.batch_fraction)
    order = rng.permutation(n)
    sums = np.zeros(2)
    batches = 0
    for start in range(0, n, size):
        idx = order[start:start + size]
        if idx.size < 2:
            break  # batch statistics are undefined on a single row
        lf, lb = train_step(pair, params, x[idx], y[idx], plan, opt, rng)
        if not (np.isfinite(lf) and np.isfinite(lb)):
            return None, (epoch, batches)
        sums += (lf, lb)
        batches += 1
    if batches == 0:
        raise ConfigError(f"training split of {n} rows cannot fill one 2-row batch")
    lf, lb = (float(v) for v in sums / batches)
    return EpochRecord(epoch, lf, lb, 0.5 * (lf + lb),
                       (time.perf_counter() - t0) * 1e3), None


def train_run(pair, dataset, plan):
    """Full training loop; divergence is a structured outcome."""
    validate_plan(plan)
    opt = make_optimizer(plan)
    params = pair_params(pair)
    rng = np.random.default_rng(4 * plan.seed + 3)
    records = []
    for epoch in range(plan.epochs):
        rec, blown = train_epoch(pair, params, dataset.x_train, dataset.y_train,
                                 plan, opt, rng, epoch)
        if blown is not None:
            return TrainResult("diverged", records, blown)
        records.append(rec)
    return TrainResult("ok", records)


def write_metrics_csv(path, records):
    with open(path, "w") as fh:
        fh.write("epoch,loss_forward,loss_backward,loss_total,wall_ms\n")
        for r in records:
            fh.write(f"{r.epoch},{r.loss_forward!r},{r.loss_backward!r},"
                     f"{r.loss_total!r},{r.wall_ms:.3f}\n")
