"""Experiment orchestration: config, training loop, evaluation, metrics.

A run is fully deterministic for a fixed config and seed: data order,
initialization, and optimizer state derive from the seed, and every
emitted artifact (metrics.csv, prompt.final.json, config.resolved.json)
is byte-stable. Wall-clock timing therefore lives in summary.json only;
the elapsed_ms metrics column is written as 0.

Per step: materialize the prompt once, run the frozen LM forward per
example, take the mean verbalizer cross-entropy, backprop, and step the
optimizer on the prompt's trainable tensors only. The frozen LM (and
LoPT-2's X0) are checksummed at every evaluation; any drift aborts.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass

import numpy as np

from . import backend, data as D, prompts, serialize, tensor as T
from .exceptions import ConfigError, NonFiniteLossError
from .model import TinyLM
from .optim import make_optimizer

METRICS_HEADER = "step,train_loss,train_acc,val_acc,elapsed_ms"


@dataclass
class ExperimentConfig:
    method: str = "full"
    n: int = 8
    r: int | None = None  # None -> floor(n/4)
    sigma: str = "elu"
    lr: float = 0.3
    optimizer: str = "adafactor"
    batch_size: int = 16
    steps: int = 2000
    eval_every: int = 100
    seed: int = 0
    lm_path: str = ""
    train_path: str | None = None
    val_path: str | None = None
    vocab_path: str | None = None
    task: dict | None = None  # generator spec, alternative to explicit paths
    out_dir: str = ""

    @classmethod
    def field_names(cls):
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_file(cls, path, overrides=None):
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict({**raw, **(overrides or {})})

    @classmethod
    def from_dict(cls, raw):
        unknown = set(raw) - set(cls.field_names())
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self):
        return dataclasses.asdict(self)


def resolve_config(cfg):
    """Fill defaults (r, LOPT_SEED override) and validate; returns a new config."""
    cfg = dataclasses.replace(cfg)
    env_seed = os.environ.get("LOPT_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"LOPT_SEED must be an integer, got {env_seed!r}") from None
    if cfg.method not in prompts.METHODS:
        raise ConfigError(f"unknown method {cfg.method!r}")
    if cfg.r is None:
        cfg.r = None if cfg.method == "full" else prompts.default_rank(cfg.n)
    if cfg.method != "full" and (cfg.r is None or cfg.r < 1):
        raise ConfigError(f"rank must be >= 1 (n={cfg.n} gives default {cfg.n // 4})")
    if cfg.n < 0:
        raise ConfigError(f"n must be >= 0, got {cfg.n}")
    if cfg.n == 0 and cfg.method != "full":
        raise ConfigError("n=0 is only meaningful for the unprompted baseline")
    if cfg.sigma not in ("relu", "elu", "gelu"):
        raise ConfigError(f"unknown sigma {cfg.sigma!r}")
    if cfg.optimizer not in ("adafactor", "sgd"):
        raise ConfigError(f"unknown optimizer {cfg.optimizer!r}")
    if cfg.batch_size < 1 or cfg.steps < 0 or cfg.eval_every < 1:
        raise ConfigError("batch_size >= 1, steps >= 0, eval_every >= 1 required")
    if not cfg.lm_path:
        raise ConfigError("lm_path is required")
    if not os.path.exists(cfg.lm_path):
        raise ConfigError(f"lm_path does not exist: {cfg.lm_path}")
    if cfg.task is None:
        for name in ("train_path", "val_path", "vocab_path"):
            p = getattr(cfg, name)
            if not p:
                raise ConfigError(f"{name} is required when no task generator is given")
            if not os.path.exists(p):
                raise ConfigError(f"{name} does not exist: {p}")
    if not cfg.out_dir:
        raise ConfigError("out_dir is required")
    return cfg


def _load_task(cfg):
    if cfg.task is not None:
        spec = dict(cfg.task)
        kind = spec.pop("kind", "majority")
        return D.generate_task(
            kind,
            num_train=spec.pop("num_train", 512),
            num_val=spec.pop("num_val", 128),
            seq_len=spec.pop("seq_len", 12),
            num_classes=spec.pop("num_classes", 2),
            seed=spec.pop("seed", cfg.seed),
        )
    vocab = D.Vocab.load(cfg.vocab_path)
    train = D.load_jsonl(cfg.train_path, vocab)
    val = D.load_jsonl(cfg.val_path, vocab)
    return train, val


def _embed_all(lm, dataset):
    # inputs end with the <eos> query token; the label is read off there,
    # matching the slot the pretraining corpus marks the same way
    eos = dataset.vocab.eos_id
    return [lm.embed(ex.token_ids + [eos]) for ex in dataset.examples]


def _xent_value(logits, target_id):
    m = logits.max()
    z = logits - m
    return float(np.log(np.exp(z).sum()) - z[target_id])


def dataset_metrics(lm, x_data, dataset, embedded):
    """(accuracy, mean loss) of a detached prompt over a dataset."""
    x = T.Tensor(x_data)
    correct = 0
    loss = 0.0
    verb = dataset.verbalizer
    for ex, emb in zip(dataset.examples, embedded):
        logits = lm.forward(x, emb).data
        if D.classify(logits, verb) == ex.label:
            correct += 1
        loss += _xent_value(logits, verb.class_tokens[ex.label])
    count = max(1, len(dataset.examples))
    return correct / count, loss / count


@dataclass
class EvalRow:
    step: int
    train_loss: float
    train_acc: float
    val_acc: float
    elapsed_ms: int = 0


@dataclass
class RunMetrics:
    rows: list
    summary: dict

    @property
    def best_val_acc(self):
        return max(r.val_acc for r in self.rows)

    @property
    def final_val_acc(self):
        return self.rows[-1].val_acc


def _metrics_csv(rows):
    lines = [METRICS_HEADER]
    for r in rows:
        lines.append(
            f"{r.step},{float(r.train_loss)!r},{float(r.train_acc)!r},"
            f"{float(r.val_acc)!r},{r.elapsed_ms}"
        )
    return "\n".join(lines) + "\n"


def train(cfg):
    """Run one prompt-tuning experiment; writes artifacts to cfg.out_dir."""
    cfg = resolve_config(cfg)
    started = time.monotonic()
    lm = TinyLM.load(cfg.lm_path)
    train_ds, val_ds = _load_task(cfg)
    d = lm.dims.embed_dim

    max_len = max(train_ds.max_length(), val_ds.max_length()) + 1  # + <eos>
    if cfg.n + max_len > lm.dims.max_seq:
        raise ConfigError(
            f"n={cfg.n} plus input length {max_len} exceeds max_seq {lm.dims.max_seq}"
        )
    if not train_ds.examples:
        raise ConfigError("training dataset is empty")

    sigma = T.Nonlinearity(cfg.sigma)
    if cfg.n == 0:
        prompt = None
        trainables = []
    else:
        prompt = prompts.init_prompt(cfg.method, cfg.n, d, cfg.r, sigma, cfg.seed)
        trainables = prompts.trainable_parameters(prompt)
    opt = make_optimizer(cfg.optimizer, trainables, lr=cfg.lr)

    frozen = {f"lm.{k}": v.data for k, v in lm.params.items()}
    if prompt is not None and isinstance(prompt, prompts.LoPT2):
        frozen["prompt.x0"] = prompt.x0.data
    frozen_before = serialize.checksum_arrays(frozen)

    train_emb = _embed_all(lm, train_ds)
    val_emb = _embed_all(lm, val_ds)

    def prompt_data():
        if prompt is None:
            return np.zeros((0, d))
        return prompts.materialize(prompt).data

    rows = []

    def run_eval(step):
        if serialize.checksum_arrays(frozen) != frozen_before:
            raise RuntimeError("frozen tensors changed during training")
        x_now = prompt_data()
        train_acc, train_loss = dataset_metrics(lm, x_now, train_ds, train_emb)
        val_acc, _ = dataset_metrics(lm, x_now, val_ds, val_emb)
        rows.append(EvalRow(step, train_loss, train_acc, val_acc))

    run_eval(0)

    shuffle_rng = np.random.default_rng([cfg.seed, 0x5481])
    order = []
    aborted = None
    for step in range(1, cfg.steps + 1):
        batch = []
        while len(batch) < cfg.batch_size and (order or len(train_ds) > 0):
            if not order:
                order = list(shuffle_rng.permutation(len(train_ds)))
                if len(batch) > 0:
                    break  # remainder batch kept, epoch boundary respected
            batch.append(order.pop())
        x = prompts.materialize(prompt) if prompt is not None else T.Tensor(np.zeros((0, d)))
        total = None
        for idx in batch:
            ex = train_ds.examples[idx]
            logits = lm.forward(x, train_emb[idx])
            loss = T.softmax_cross_entropy(logits, train_ds.verbalizer.class_tokens[ex.label])
            total = loss if total is None else T.add(total, loss)
        total = T.scale(total, 1.0 / len(batch))
        if not np.isfinite(total.data):
            rows.append(EvalRow(step, float(total.data), float("nan"), float("nan")))
            aborted = f"non-finite loss at step {step}"
            break
        if trainables:
            for _, p in trainables:
                p.zero_grad()
            T.backward(total)
            opt.step()
        if step % cfg.eval_every == 0:
            run_eval(step)

    if aborted is None and rows[-1].step != cfg.steps:
        run_eval(cfg.steps)

    elapsed = time.monotonic() - started
    summary = {
        "method": cfg.method,
        "n": cfg.n,
        "r": cfg.r,
        "sigma": cfg.sigma,
        "optimizer": cfg.optimizer,
        "lr": cfg.lr,
        "seed": cfg.seed,
        "steps": cfg.steps,
        "trainable_params": (
            prompts.parameter_count(cfg.method, cfg.n, d, cfg.r) if cfg.n else 0
        ),
        "reduction_vs_full_pct": (
            prompts.reduction_rate(cfg.method, cfg.n, d, cfg.r) if cfg.n else 0.0
        ),
        "best_val_acc": max(r.val_acc for r in rows if np.isfinite(r.val_acc)),
        "final_val_acc": rows[-1].val_acc,
        "initial_train_loss": rows[0].train_loss,
        "final_train_loss": rows[-1].train_loss,
        "lm_checksum_before": frozen_before,
        "lm_checksum_after": serialize.checksum_arrays(frozen),
        "backend": backend.active_backend(),
        "elapsed_seconds": round(elapsed, 3),
        "aborted": aborted,
    }

    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.resolved.json"), "w", encoding="utf-8") as f:
        json.dump(cfg.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    with open(os.path.join(cfg.out_dir, "metrics.csv"), "w", encoding="utf-8") as f:
        f.write(_metrics_csv(rows))
    if prompt is not None:
        prompts.save_prompt(prompt, os.path.join(cfg.out_dir, "prompt.final.json"))
    with open(os.path.join(cfg.out_dir, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, sort_keys=True, indent=2)
        f.write("\n")

    if aborted:
        raise NonFiniteLossError(aborted)
    return RunMetrics(rows=rows, summary=summary)


def evaluate(prompt_path, lm_path, data_path, vocab_path):
    """Accuracy of a saved prompt checkpoint on a JSONL dataset."""
    lm = TinyLM.load(lm_path)
    vocab = D.Vocab.load(vocab_path)
    dataset = D.load_jsonl(data_path, vocab)
    prompt = prompts.load_prompt(prompt_path)
    x = prompts.materialize(prompt).data
    acc, _ = dataset_metrics(lm, x, dataset, _embed_all(lm, dataset))
    return acc
