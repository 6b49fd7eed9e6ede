"""Alternating adversarial training loop.

Phases: a warm-up that updates only the segmenter G on the supervised loss,
then per-iteration alternation between a discriminator step (on detached
features) and a joint G,H step with the discriminator frozen. One source and
one target image are drawn per iteration from independently seeded,
epoch-reshuffled samplers, so runs are bit-reproducible and modes that
ignore the target batch still consume identical source sequences.

Modes:
  source_only             L_s for the whole run (H and D never change)
  d_only                  L_s + lambda_d * L_d, no discriminator
  full                    L_s + lambda_d * L_d + lambda_adv * adv, D trained
  entropy_variant         adversarial term replaced by softmax entropy
  soft_histogram_variant  D aligns quadrant histograms of O directly (H bypassed)

The log.csv gen_adv column carries the entropy term in entropy_variant mode
(it occupies the same slot in the objective).
"""

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .losses import (EntropyConfig, LossWeights, disc_cluster_loss,
                     discriminator_loss, entropy_loss, generator_adv_loss,
                     seg_loss, soft_histogram, total_generator_loss)
from .metrics import evaluate_dataset
from .nets import (DConfig, GConfig, HConfig, d_forward, g_forward, h_forward,
                   h_logits, init_params, load_array_dict, save_array_dict)
from .optim import Adam, SGDMomentum, poly_decay_lr
from .patchmodes import PatchGrid, cluster_map, patch_validity
from .rng import CounterRng
from .tensor import Tensor

MODES = ("full", "source_only", "d_only", "entropy_variant", "soft_histogram_variant")

LOG_COLUMNS = ("iter", "l_s", "l_d", "gen_adv", "l_d_disc", "lr_g", "lr_d")
EVAL_COLUMNS = ("iter", "split", "class_id", "iou", "miou")


@dataclass
class TrainConfig:
    k: int = 50
    lambda_d: float = 0.01
    lambda_adv: float = 0.0005
    lambda_en: float = 0.0005
    tau: float = 1.0
    warmup_iters: int = 500
    max_iters: int = 5000
    lr_g: float = 2.5e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_d: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    poly_power: float = 0.9
    seed: int = 0
    mode: str = "full"
    eval_every: int = 1000
    checkpoint_every: int = 2500

    def validate(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.warmup_iters < 0 or self.warmup_iters > self.max_iters:
            raise ValueError(
                f"need 0 <= warmup_iters <= max_iters, got {self.warmup_iters} > {self.max_iters}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError(f"learning rates must be positive, got {self.lr_g}, {self.lr_d}")
        for name in ("lambda_d", "lambda_adv", "lambda_en"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0,1), got {self.momentum}")
        if self.eval_every < 1 or self.checkpoint_every < 1:
            raise ValueError("eval_every and checkpoint_every must be >= 1")
        return self


def _fmt(v):
    if v is None:
        return ""
    return f"{v:.9g}"


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    evals: list = field(default_factory=list)

    def add_row(self, **kw):
        row = {c: kw.get(c) for c in LOG_COLUMNS}
        for c in ("l_s", "l_d", "gen_adv", "l_d_disc"):
            if row[c] is not None and not np.isfinite(row[c]):
                raise ValueError(f"non-finite {c}={row[c]} at iteration {row['iter']}")
        if self.rows and row["iter"] <= self.rows[-1]["iter"]:
            raise ValueError(f"iterations must increase, got {row['iter']}")
        self.rows.append(row)

    def add_eval(self, iteration, split, iou, miou):
        for cid, value in enumerate(iou):
            self.evals.append({"iter": iteration, "split": split,
                               "class_id": cid, "iou": float(value), "miou": miou})

    def last_miou(self, split):
        for rec in reversed(self.evals):
            if rec["split"] == split:
                return rec["miou"]
        return None

    def write_log_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(",".join(LOG_COLUMNS) + "\n")
            for row in self.rows:
                f.write(",".join([str(row["iter"])] +
                                 [_fmt(row[c]) for c in LOG_COLUMNS[1:]]) + "\n")

    def write_eval_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(",".join(EVAL_COLUMNS) + "\n")
            for r in self.evals:
                f.write(f"{r['iter']},{r['split']},{r['class_id']},"
                        f"{_fmt(r['iou'])},{_fmt(r['miou'])}\n")


@dataclass
class RunResult:
    params: dict
    log: TrainLog
    warmup_source_acc: float
    g_cfg: GConfig
    h_cfg: HConfig
    d_cfg: DConfig
    grid: PatchGrid


class _Sampler:
    """Epoch-reshuffled index stream."""

    def __init__(self, n, rng):
        self.n = n
        self.rng = rng
        self.order = []
        self.pos = 0

    def next(self):
        if self.pos >= len(self.order):
            self.order = self.rng.shuffle(list(range(self.n)))
            self.pos = 0
        i = self.order[self.pos]
        self.pos += 1
        return i


class Trainer:
    def __init__(self, cfg, source, target_train, target_test, cluster_model,
                 patch_h, patch_w):
        cfg.validate()
        if source.labels is None:
            raise ValueError("source split must carry labels")
        if target_test.labels is None:
            raise ValueError("target test split must carry labels")
        if not (len(source) and len(target_train) and len(target_test)):
            raise ValueError("all three splits must be non-empty")
        c = source.num_classes
        if target_train.num_classes != c or target_test.num_classes != c:
            raise ValueError("datasets disagree on num_classes")
        shape = source.images[0].shape
        for ds in (source, target_train, target_test):
            if any(img.shape != shape for img in ds.images):
                raise ValueError(f"split {ds.split!r} has non-uniform image shapes")
        if cluster_model.K != cfg.k:
            raise ValueError(
                f"cluster model has K={cluster_model.K} but config expects k={cfg.k}")
        if cluster_model.centroids.shape[1] != 4 * c:
            raise ValueError(
                f"cluster model dim {cluster_model.centroids.shape[1]} != 4*C for C={c}")

        self.cfg = cfg
        self.source = source
        self.target_train = target_train
        self.target_test = target_test
        self.grid = PatchGrid.for_image(shape[1], shape[2], patch_h, patch_w)
        self.g_cfg = GConfig(in_channels=shape[0], num_classes=c)
        self.h_cfg = HConfig(in_channels=c, num_modes=cfg.k)
        d_in = 4 * c if cfg.mode == "soft_histogram_variant" else cfg.k
        self.d_cfg = DConfig(in_dim=d_in)
        self.gp = init_params(self.g_cfg, cfg.seed)
        self.hp = init_params(self.h_cfg, cfg.seed)
        self.dp = init_params(self.d_cfg, cfg.seed)
        self.g_names = list(self.gp)
        self.gh_opt = SGDMomentum({**self.gp, **self.hp}, cfg.lr_g,
                                  cfg.momentum, cfg.weight_decay)
        self.d_opt = Adam(self.dp, cfg.lr_d, (cfg.adam_beta1, cfg.adam_beta2))
        self.weights = LossWeights(cfg.lambda_d, cfg.lambda_adv).validate()
        self.entropy_cfg = EntropyConfig(cfg.tau).validate()
        # cluster membership depends only on ground truth: compute once
        self.gammas = [cluster_map(y, self.grid, cluster_model, c)
                       for y in source.labels]
        self.valids = [patch_validity(y, self.grid) for y in source.labels]
        self.s_sampler = _Sampler(len(source), CounterRng(cfg.seed, "sample", "source"))
        self.t_sampler = _Sampler(len(target_train), CounterRng(cfg.seed, "sample", "target"))

    # -- single steps ----------------------------------------------------

    def _gh_step(self, loss, lr, names=None):
        self.gh_opt.zero_grad()
        loss.backward()
        self.gh_opt.step(lr=lr, names=names)

    def warmup_step(self, batch_s, it):
        """One G-only SGD step on the supervised loss."""
        img_s, y_s = batch_s
        lr_g = poly_decay_lr(self.cfg.lr_g, it, self.cfg.max_iters, self.cfg.poly_power)
        l_s = seg_loss(g_forward(Tensor(img_s), self.gp, self.g_cfg), y_s)
        self._gh_step(l_s, lr_g, names=self.g_names)
        return {"iter": it, "l_s": l_s.item(), "lr_g": lr_g}

    def train_step(self, batch_s, batch_t, it):
        """One alternation step: D update (if the mode has one), then G,H."""
        img_s, y_s, gamma_s, valid_s = batch_s
        if gamma_s is None:
            raise ValueError("train_step requires a precomputed cluster map")
        cfg = self.cfg
        lr_g = poly_decay_lr(cfg.lr_g, it, cfg.max_iters, cfg.poly_power)
        row = {"iter": it, "lr_g": lr_g}

        o_s = g_forward(Tensor(img_s), self.gp, self.g_cfg)
        l_s = seg_loss(o_s, y_s)
        row["l_s"] = l_s.item()

        if cfg.mode == "d_only":
            f_s = h_forward(o_s, self.hp, self.h_cfg, self.grid)
            l_d = disc_cluster_loss(f_s, gamma_s, valid_s)
            row["l_d"] = l_d.item()
            self._gh_step(l_s + cfg.lambda_d * l_d, lr_g)
            return row

        if cfg.mode == "entropy_variant":
            f_s = h_forward(o_s, self.hp, self.h_cfg, self.grid)
            l_d = disc_cluster_loss(f_s, gamma_s, valid_s)
            o_t = g_forward(Tensor(batch_t), self.gp, self.g_cfg)
            l_en = entropy_loss(h_logits(o_t, self.hp, self.h_cfg, self.grid),
                                self.entropy_cfg)
            row["l_d"] = l_d.item()
            row["gen_adv"] = l_en.item()
            self._gh_step(l_s + cfg.lambda_d * l_d + cfg.lambda_en * l_en, lr_g)
            return row

        lr_d = poly_decay_lr(cfg.lr_d, it, cfg.max_iters, cfg.poly_power)
        row["lr_d"] = lr_d
        o_t = g_forward(Tensor(batch_t), self.gp, self.g_cfg)

        if cfg.mode == "soft_histogram_variant":
            feat_s = soft_histogram(o_s, self.grid)
            feat_t = soft_histogram(o_t, self.grid)
            gh_names = self.g_names  # H plays no part in this ablation
        else:  # full
            feat_s = h_forward(o_s, self.hp, self.h_cfg, self.grid)
            feat_t = h_forward(o_t, self.hp, self.h_cfg, self.grid)
            gh_names = None

        # step 1: discriminator on detached features (source 1, target 0)
        self.d_opt.zero_grad()
        l_d_disc = discriminator_loss(
            d_forward(feat_s.detach(), self.dp, self.d_cfg),
            d_forward(feat_t.detach(), self.dp, self.d_cfg))
        l_d_disc.backward()
        self.d_opt.step(lr=lr_d)
        row["l_d_disc"] = l_d_disc.item()

        # step 2: G,H against the frozen discriminator
        adv = generator_adv_loss(d_forward(feat_t, self.dp, self.d_cfg))
        row["gen_adv"] = adv.item()
        if cfg.mode == "full":
            l_d = disc_cluster_loss(feat_s, gamma_s, valid_s)
            row["l_d"] = l_d.item()
            total = total_generator_loss(l_s, l_d, adv, self.weights)
        else:
            total = l_s + cfg.lambda_adv * adv
        self._gh_step(total, lr_g, names=gh_names)
        return row

    # -- evaluation and checkpoints ---------------------------------------

    def evaluate(self, log, iteration):
        for ds, split in ((self.source, "source_train"),
                          (self.target_test, "target_test")):
            _, iou, miou, _ = evaluate_dataset(ds, self.gp, self.g_cfg)
            log.add_eval(iteration, split, iou, miou)

    def source_accuracy(self):
        _, _, _, acc = evaluate_dataset(self.source, self.gp, self.g_cfg)
        return acc

    def save_checkpoint(self, ckpt_dir, iteration):
        params = {**self.gp, **self.hp, **self.dp}
        files = save_array_dict(ckpt_dir, {n: p.data for n, p in params.items()})
        gh_state = self.gh_opt.state_arrays()
        d_state = self.d_opt.state_arrays()
        optim_files = save_array_dict(ckpt_dir, {**gh_state, **d_state})
        meta = {
            "iteration": iteration,
            "mode": self.cfg.mode,
            "k": self.cfg.k,
            "num_classes": self.g_cfg.num_classes,
            "patch_h": self.grid.patch_h,
            "patch_w": self.grid.patch_w,
            "grid": [self.grid.U, self.grid.V],
            "g": asdict(self.g_cfg),
            "h": asdict(self.h_cfg),
            "d": asdict(self.d_cfg),
            "params": {n: {"file": f, "shape": list(params[n].shape)}
                       for n, f in files.items()},
        }
        meta["optim"] = {
            "gh": {"kind": self.gh_opt.kind,
                   "files": {n: optim_files[n] for n in gh_state}},
            "d": {"kind": self.d_opt.kind, "step_count": self.d_opt.step_count,
                  "files": {n: optim_files[n] for n in d_state}},
        }
        with open(os.path.join(ckpt_dir, "checkpoint.json"), "w", encoding="utf-8") as f:
            json.dump(meta, f, indent=2)

    # -- the full loop -----------------------------------------------------

    def run(self, out_dir=None):
        cfg = self.cfg
        log = TrainLog()
        warmup_acc = None
        last_eval = last_ckpt = -1
        for it in range(cfg.max_iters):
            si = self.s_sampler.next()
            ti = self.t_sampler.next()
            if it == cfg.warmup_iters:
                warmup_acc = self.source_accuracy()
            if it < cfg.warmup_iters or cfg.mode == "source_only":
                row = self.warmup_step((self.source.images[si], self.source.labels[si]), it)
            else:
                batch_s = (self.source.images[si], self.source.labels[si],
                           self.gammas[si], self.valids[si])
                row = self.train_step(batch_s, self.target_train.images[ti], it)
            log.add_row(**row)
            done = it + 1
            if done % cfg.eval_every == 0 or done == cfg.max_iters:
                self.evaluate(log, done)
                last_eval = done
            if out_dir and (done % cfg.checkpoint_every == 0 or done == cfg.max_iters):
                if done != last_ckpt:
                    self.save_checkpoint(
                        os.path.join(out_dir, "checkpoints", f"iter_{done:06d}"), done)
                    last_ckpt = done
        if warmup_acc is None:  # warmup_iters == max_iters edge
            warmup_acc = self.source_accuracy()
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            log.write_log_csv(os.path.join(out_dir, "log.csv"))
            log.write_eval_csv(os.path.join(out_dir, "eval.csv"))
        params = {**self.gp, **self.hp, **self.dp}
        return RunResult(params, log, warmup_acc, self.g_cfg, self.h_cfg,
                         self.d_cfg, self.grid)


def run_training(cfg, source, target_train, target_test, cluster_model,
                 patch_h, patch_w, out_dir=None):
    """Build a Trainer and run it to completion."""
    trainer = Trainer(cfg, source, target_train, target_test, cluster_model,
                      patch_h, patch_w)
    return trainer.run(out_dir)


def load_checkpoint(ckpt_dir):
    """Parameters (as trainable tensors) plus the checkpoint metadata."""
    meta_path = os.path.join(ckpt_dir, "checkpoint.json")
    with open(meta_path, encoding="utf-8") as f:
        meta = json.load(f)
    files = {n: sp["file"] for n, sp in meta["params"].items()}
    arrays = load_array_dict(ckpt_dir, files)
    params = {}
    for name, arr in arrays.items():
        want = tuple(meta["params"][name]["shape"])
        if arr.shape != want:
            raise ValueError(f"{ckpt_dir}: parameter {name} has shape {arr.shape}, expected {want}")
        params[name] = Tensor(arr, requires_grad=True)
    return params, meta
