"""AdamW training with linear warmup/decay, evaluation, and the finite-difference gradient check."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import ClozeInstance, Mention, Vocabulary, build_vocab
from .metrics import corpus_scores
from .model import (Example, ModelConfig, NumericalError, batch_examples, init_params, loss_and_grads,
                    prepare_example, reader_logits, forward_batch, save_checkpoint)
from .reader import Prediction, sigmoid

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-6
    weight_decay: float = 0.01
    warmup_ratio: float = 0.06
    epochs: int = 60
    batch_size: int = 32
    seed: int = 0
    # stop as soon as dev accuracy reaches this value (0 disables)
    target_accuracy: float = 0.0

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        base = dict(epochs=2, batch_size=2)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


class AdamW:
    """Adam with bias correction and decoupled weight decay on matrices only."""

    def __init__(self, params: Mapping[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: Mapping[str, np.ndarray], lr: float) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for k in sorted(params):
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + c.eps)
            if params[k].ndim > 1:
                update = update + c.weight_decay * params[k]
            params[k] -= (lr * update).astype(params[k].dtype, copy=False)


def lr_at(step: int, total: int, cfg: TrainConfig) -> float:
    warm = int(round(cfg.warmup_ratio * total))
    if warm > 0 and step < warm:
        return cfg.lr * (step + 1) / warm
    return cfg.lr * max(0.0, (total - step) / max(1, total - warm))


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    vocab: Vocabulary
    history: list[dict] = field(default_factory=list)

    @property
    def best_dev_accuracy(self) -> float:
        return max((h.get("dev_accuracy", 0.0) for h in self.history), default=0.0)


def _prepare(instances, vocab, config):
    return [prepare_example(inst, vocab, config) for inst in instances]


def predict(params, config: ModelConfig, examples: Sequence[Example], batch_size: int = 64) -> list[Prediction]:
    preds = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        batch = batch_examples(chunk)
        hidden, _ = forward_batch(params, batch, config)
        z = reader_logits(params, hidden, batch.n_words)
        for b, ex in enumerate(chunk):
            cands = ex.seq.candidate_indices
            scores = [float(s) for s in sigmoid(z[b, cands])]
            best = int(np.argmax(scores))
            preds.append(Prediction(scores, cands, best, ex.seq.surfaces[cands[best]]))
    return preds


def evaluate(params, config: ModelConfig, examples: Sequence[Example], batch_size: int = 64) -> dict:
    preds = predict(params, config, examples, batch_size)
    return corpus_scores([p.best_surface for p in preds], [ex.instance.gold_answers for ex in examples])


def train(
    instances: Sequence[ClozeInstance],
    model_config: ModelConfig,
    train_config: TrainConfig,
    dev: Sequence[ClozeInstance] = (),
    vocab: Vocabulary | None = None,
    checkpoint_dir: str | Path | None = None,
    params: dict[str, np.ndarray] | None = None,
    provenance: Mapping | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train from ``train_config.seed``; returns parameters and one log row per epoch."""
    if not instances:
        raise ValueError("empty training set")
    vocab = vocab or build_vocab(instances)
    tc = train_config
    train_ex = _prepare(instances, vocab, model_config)
    dev_ex = _prepare(dev, vocab, model_config)
    if params is None:
        params = init_params(model_config, len(vocab), tc.seed)
    opt = AdamW(params, tc)
    rng = np.random.default_rng(tc.seed)
    drop_rng = np.random.default_rng([tc.seed, 1]) if model_config.dropout > 0 else None
    steps_per_epoch = -(-len(train_ex) // tc.batch_size)
    total = steps_per_epoch * tc.epochs
    step = 0
    history = []
    for epoch in range(1, tc.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_ex))
        loss_sum, correct = 0.0, 0
        for start in range(0, len(order), tc.batch_size):
            chunk = [train_ex[i] for i in order[start:start + tc.batch_size]]
            batch = batch_examples(chunk)
            try:
                loss, grads, z = loss_and_grads(params, batch, model_config, drop_rng)
            except NumericalError as exc:
                raise NumericalError(f"step {step}: {exc}") from exc
            opt.step(params, grads, lr_at(step, total, tc))
            step += 1
            loss_sum += loss * len(chunk)
            masked = np.where(batch.scored, z, -np.inf)
            best = masked.argmax(axis=1)
            correct += int(batch.targets[np.arange(len(chunk)), best].sum())
        row = {"epoch": epoch, "loss": loss_sum / len(train_ex), "train_accuracy": correct / len(train_ex),
               "seconds": time.perf_counter() - t0}
        if dev_ex:
            scores = evaluate(params, model_config, dev_ex)
            row.update({f"dev_{k}": v for k, v in scores.items() if k != "n"})
        history.append(row)
        logger.info("epoch %d %s", epoch, {k: round(v, 4) for k, v in row.items()})
        if on_epoch:
            on_epoch(row)
        if checkpoint_dir is not None:
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            save_checkpoint(Path(checkpoint_dir) / f"epoch{epoch:03d}.npz", params, model_config, vocab,
                            {**dict(provenance or {}), "train": tc.to_dict(), "epoch": epoch})
        if tc.target_accuracy and row.get("dev_accuracy", 0.0) >= tc.target_accuracy:
            break
    return TrainResult(params, vocab, history)


# --- gradient check --------------------------------------------------------

def gradcheck_instance() -> ClozeInstance:
    """A 22-token instance touching every label family (SENT, MATCH, PLC, no-edge, window, global)."""
    sents = [["kana", "met", "lora"], ["lora", "."]]
    mentions = [Mention("kana", 0, 0, 1), Mention("lora", 0, 2, 3), Mention("lora", 1, 0, 1)]
    return ClozeInstance("gradcheck", ["[PLC]", "with", "kana"], sents, mentions, [1, 2], ["lora"])


def gradcheck_config(**overrides) -> ModelConfig:
    base = dict(P_max=24, L=16, H=4, n_heads=2, n_layers=2, k=2, entity_embed_dim=8, max_q_len=8)
    base.update(overrides)
    return ModelConfig(**base)


def random_params(config: ModelConfig, vocab_size: int, seed: int = 0, scale: float = 0.3) -> dict[str, np.ndarray]:
    """A generic point for gradient checks: every array (gains, biases, all four queries) perturbed.

    Matrices get fan-in scaled noise and the reader 1/sqrt(2L), so candidate
    logits stay O(1); a saturated sigmoid leaves gradients near 1e-8, below
    what central differences resolve in float64. The base is the "normal"
    init whatever ``config.init`` says, so the point does not depend on the
    training scheme.
    """
    from dataclasses import replace

    rng = np.random.default_rng([seed, 7])
    params = init_params(replace(config, init="normal"), vocab_size, seed)
    out = {}
    for k, v in params.items():
        # fan-in scaling for projections keeps activations, and hence logits, O(1)
        s = scale if v.ndim == 1 or k.endswith("embeddings") else 1.0 / np.sqrt(v.shape[0])
        out[k] = (v + rng.normal(0.0, s, size=v.shape)).astype(np.float64)
    out["reader.w"] = rng.normal(0.0, 0.5 / np.sqrt(out["reader.w"].size), size=out["reader.w"].shape)
    return out


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_coords: int
    per_family: dict[str, float]

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def _family(name: str) -> str:
    return name.split(".")[-1] if name.startswith("layers.") else name


def grad_check(
    params: Mapping[str, np.ndarray],
    example: Example,
    config: ModelConfig,
    eps: float = 1e-5,
    n_samples: int = 200,
    seed: int = 0,
    grad_fn: Callable | None = None,
) -> GradCheckResult:
    """Central differences against the analytic gradient on sampled coordinates.

    Every parameter array contributes coordinates; word-embedding rows are
    sampled from the ids the example uses. Relative error is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if config.dtype != "float64":
        raise ValueError("gradient checks need float64")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    batch = batch_examples([example])
    if grad_fn is None:
        grad_fn = lambda p: loss_and_grads(p, batch, config)[:2]  # noqa: E731
    _, grads = grad_fn(params)

    rng = np.random.default_rng(seed)
    names = sorted(params)
    per_tensor = -(-n_samples // len(names)) + 1
    used_rows = np.unique(batch.word_ids)
    coords: list[tuple[str, tuple]] = []
    for name in names:
        arr = params[name]
        if name == "word_embeddings":
            flat = [r * arr.shape[1] + c for r in used_rows for c in range(arr.shape[1])]
        else:
            flat = range(arr.size)
        pick = rng.choice(np.asarray(flat), size=min(per_tensor, len(flat)), replace=False)
        coords += [(name, np.unravel_index(int(i), arr.shape)) for i in pick]

    def loss_at(p):
        return loss_and_grads(p, batch, config, need_grads=False)[0]

    worst: dict[str, float] = {}
    for name, idx in coords:
        arr = params[name]
        orig = arr[idx]
        arr[idx] = orig + eps
        up = loss_at(params)
        arr[idx] = orig - eps
        down = loss_at(params)
        arr[idx] = orig
        numeric = (up - down) / (2 * eps)
        analytic = float(grads[name][idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        fam = _family(name)
        worst[fam] = max(worst.get(fam, 0.0), rel)
    return GradCheckResult(max(worst.values()), len(coords), worst)


# --- ablations -------------------------------------------------------------

def run_ablation(
    specs: Sequence[str],
    base: ModelConfig,
    train_config: TrainConfig,
    train_set: Sequence[ClozeInstance],
    dev_set: Sequence[ClozeInstance],
    seeds: Sequence[int] = (0,),
) -> list[dict]:
    """Retrain per spec and seed; each row reports mean dev metrics and deltas against FULL.

    A spec is ``FULL`` or ``+``-joined ablation names.
    """
    from dataclasses import replace

    from .labels import parse_ablations

    vocab = build_vocab(train_set)
    rows = []
    full_row = None
    for spec in ["FULL", *[s for s in specs if s != "FULL"]]:
        ablations = tuple(a.value for a in parse_ablations(spec))
        mcfg = replace(base, ablations=ablations)
        runs = []
        for seed in seeds:
            res = train(train_set, mcfg, replace(train_config, seed=seed), vocab=vocab)
            dev_ex = _prepare(dev_set, vocab, mcfg)
            runs.append(evaluate(res.params, mcfg, dev_ex))
        row = {"spec": spec, "label_vocab_size": mcfg.V, "seeds": list(seeds),
               **{k: float(np.mean([r[k] for r in runs])) for k in ("accuracy", "em", "f1")},
               "per_seed_accuracy": [r["accuracy"] for r in runs]}
        if full_row is None:
            full_row = row
        for k in ("accuracy", "em", "f1"):
            row[f"delta_{k}"] = full_row[k] - row[k]
        rows.append(row)
        logger.info("ablation %s: %s", spec, row)
    return rows
