"""Joint RE + NER training: alternating minibatches, global-norm clipping,
Adam, best-dev model selection, alpha tuning, checkpoints."""
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from sorel import model as mdl
from sorel.data import RelationVocab, TokenVocab, make_batches
from sorel.errors import ConfigError, NumericError, ValidationError
from sorel.evaluation import macro_prf, predict

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "sorel-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    learn_rate: float = 0.0005
    clip_norm: float = 5.0
    # beta1 = 0.1 is unusually low but is the published setting
    adam_beta1: float = 0.1
    adam_beta2: float = 0.9
    adam_eps: float = 1e-8
    alpha: float = 0.2
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    alpha_sweep: list = field(default_factory=list)
    tune_mode: str = "retrain"
    deterministic: bool = True
    neg_keep_rate: float = 1.0  # fraction of negative pairs kept per training batch
    freeze_embeddings: bool = False
    eval_batch_size: int = 64
    stop_f1: float = None  # stop once dev macro-F1 reaches this value

    def validate(self):
        if self.learn_rate <= 0 or self.clip_norm <= 0:
            raise ConfigError("learn_rate and clip_norm must be > 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.alpha < 0 or not np.isfinite(self.alpha):
            raise ConfigError("alpha must be finite and >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.tune_mode not in ("retrain", "rescore"):
            raise ConfigError(f"tune_mode must be retrain or rescore, got {self.tune_mode!r}")
        if not 0 < self.neg_keep_rate <= 1:
            raise ConfigError("neg_keep_rate must lie in (0, 1]")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros(cls, params):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads, clip_norm):
    """Scale all gradients jointly so their global L2 norm is at most ``clip_norm``."""
    norm = global_norm(grads)
    if norm <= clip_norm:
        return grads, norm
    scale = clip_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def clip_and_step(grads, params, state, cfg, frozen=()):
    """Clip, then one bias-corrected Adam update of ``params`` in place."""
    grads, norm = clip_gradients(grads, cfg.clip_norm)
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, g in grads.items():
        if k in frozen:
            continue
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[k] -= cfg.learn_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return params, state, norm


@dataclass
class TrainResult:
    params: dict
    history: list
    best_epoch: int = -1
    best_f1: float = float("nan")
    trace: list = field(default_factory=list)  # task of every executed batch


def evaluate(params, examples, model_cfg, alpha, vocab, batch_size=64):
    """Report and predicted labels over every candidate pair of ``examples``."""
    preds, golds = [], []
    for batch in make_batches(examples, batch_size):
        if not batch.num_pairs:
            continue
        _, _, comb = mdl.predict_scores(params, batch, model_cfg, alpha)
        preds.append(predict(comb, vocab))
        golds.append(batch.labels)
    preds = np.concatenate(preds) if preds else np.zeros(0, dtype=int)
    golds = np.concatenate(golds) if golds else np.zeros(0, dtype=int)
    return macro_prf(preds, golds, vocab), preds


def evaluate_ner(params, examples, model_cfg, tags, batch_size=64):
    preds, golds = [], []
    for batch in make_batches(examples, batch_size):
        logits = mdl.ner_predict(params, batch, model_cfg)
        mask = batch.tokens.pad_mask
        preds.append(logits.argmax(-1)[mask])
        golds.append(batch.tags[mask])
    vocab = RelationVocab(tags, negative=tags[0])
    return macro_prf(np.concatenate(preds), np.concatenate(golds), vocab)


def _copy(params):
    return {k: v.copy() for k, v in params.items()}


def train(re_examples, ner_examples, model_cfg, cfg, dev_examples=None, params=None,
          tags=None, vocab=None, on_record=None):
    """Train with strict RE / NER batch alternation; the shorter task cycles.

    Returns the parameters of the epoch with the best dev macro-F1 (the last
    epoch when no dev set is given).
    """
    cfg.validate()
    if not re_examples or not ner_examples:
        raise ConfigError("training needs non-empty RE and NER datasets")
    params = mdl.init_params(model_cfg, cfg.seed) if params is None else params
    if cfg.epochs == 0:
        return TrainResult(params, [])
    root = np.random.SeedSequence(cfg.seed)
    shuffle_rng, dropout_rng, neg_rng = (np.random.default_rng(s) for s in root.spawn(3))
    frozen = {k for k in params if k.startswith("emb.")} if cfg.freeze_embeddings else set()
    state = AdamState.zeros(params)
    alpha = cfg.alpha
    neg_index = vocab.negative_index if vocab is not None else 0
    pair_filter = None
    if cfg.neg_keep_rate < 1:
        def pair_filter(c):
            return c.label != neg_index or neg_rng.random() < cfg.neg_keep_rate

    result = TrainResult(params, [])
    best = -1.0
    best_params = None
    for epoch in range(1, cfg.epochs + 1):
        re_batches = make_batches(re_examples, cfg.batch_size, shuffle_rng.permutation(len(re_examples)), pair_filter)
        ner_batches = make_batches(ner_examples, cfg.batch_size, shuffle_rng.permutation(len(ner_examples)))
        losses = {"re": [], "ner": []}
        for step in range(max(len(re_batches), len(ner_batches))):
            for task, batches in (("re", re_batches), ("ner", ner_batches)):
                batch = batches[step % len(batches)]
                try:
                    loss, grads = mdl.loss_and_grads(params, batch, model_cfg, task, alpha, True, dropout_rng)
                except NumericError as exc:
                    raise NumericError(f"training diverged: {exc}", where=f"epoch {epoch} step {step} {task}")
                clip_and_step(grads, params, state, cfg, frozen)
                losses[task].append(loss)
                result.trace.append(task)
        rec = {"epoch": epoch, "task": "re", "loss": float(np.mean(losses["re"])),
               "dev_p": None, "dev_r": None, "dev_f1": None}
        ner_rec = {"epoch": epoch, "task": "ner", "loss": float(np.mean(losses["ner"])),
                   "dev_p": None, "dev_r": None, "dev_f1": None}
        if dev_examples:
            report, _ = evaluate(params, dev_examples, model_cfg, alpha, vocab, cfg.eval_batch_size)
            rec.update(dev_p=report.precision, dev_r=report.recall, dev_f1=report.f1)
            if tags is not None:
                nr = evaluate_ner(params, dev_examples, model_cfg, tags, cfg.eval_batch_size)
                ner_rec.update(dev_p=nr.precision, dev_r=nr.recall, dev_f1=nr.f1)
            if report.f1 > best:
                best = report.f1
                best_params = _copy(params)
                result.best_epoch = epoch
                result.best_f1 = report.f1
        for r in (rec, ner_rec):
            result.history.append(r)
            if on_record is not None:
                on_record(r)
        log.info("epoch %d re_loss %.4f ner_loss %.4f dev_f1 %s", epoch, rec["loss"], ner_rec["loss"], rec["dev_f1"])
        if cfg.stop_f1 is not None and best >= cfg.stop_f1:
            break
    if best_params is not None:
        result.params = best_params
    return result


def tune_alpha(re_examples, ner_examples, dev_examples, model_cfg, cfg, tags=None, vocab=None):
    """Pick alpha from ``cfg.alpha_sweep`` by dev macro-F1; ties go to the smaller alpha.

    ``retrain`` trains one model per alpha; ``rescore`` trains once at
    ``cfg.alpha`` and re-scores the dev set at every sweep value.
    Returns ``(best_alpha, {alpha: dev_f1}, TrainResult for best_alpha)``.
    """
    sweep = sorted(set(float(a) for a in cfg.alpha_sweep))
    if not sweep:
        raise ConfigError("alpha_sweep is empty")
    scores, results = {}, {}
    if cfg.tune_mode == "rescore":
        base = train(re_examples, ner_examples, model_cfg, cfg, dev_examples, tags=tags, vocab=vocab)
        for a in sweep:
            scores[a] = evaluate(base.params, dev_examples, model_cfg, a, vocab, cfg.eval_batch_size)[0].f1
            results[a] = base
    else:
        for a in sweep:
            c = TrainConfig(**{**cfg.to_dict(), "alpha": a})
            res = train(re_examples, ner_examples, model_cfg, c, dev_examples, tags=tags, vocab=vocab)
            scores[a] = evaluate(res.params, dev_examples, model_cfg, a, vocab, cfg.eval_batch_size)[0].f1
            results[a] = res
    best = sweep[0]
    for a in sweep[1:]:
        if scores[a] > scores[best]:
            best = a
    return best, scores, results[best]


def save_checkpoint(path, params, model_cfg, train_cfg, token_vocab, rel_vocab, tags):
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": model_cfg.to_dict(),
        "train_config": train_cfg.to_dict() if train_cfg is not None else None,
        "token_vocab": token_vocab.words,
        "relation_vocab": {"names": list(rel_vocab.names), "negative": rel_vocab.negative},
        "tags": list(tags),
        "shapes": {k: list(v.shape) for k, v in params.items()},
    }
    arrays = {f"param/{k}": v for k, v in params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


@dataclass
class Checkpoint:
    params: dict
    model_cfg: mdl.ModelConfig
    train_cfg: TrainConfig
    token_vocab: TokenVocab
    rel_vocab: RelationVocab
    tags: list


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        if "__meta__" not in z:
            raise ValidationError("not a checkpoint: metadata missing", path=path)
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(f"unsupported checkpoint {meta.get('format')} v{meta.get('version')}", path=path)
        params = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    model_cfg = mdl.ModelConfig(**meta["model_config"])
    expected = {k: v.shape for k, v in mdl.init_params(model_cfg, 0).items()}
    if set(expected) != set(params):
        raise ValidationError(f"parameter set mismatch: {sorted(set(expected) ^ set(params))}", path=path)
    for k, shape in expected.items():
        if params[k].shape != shape or list(shape) != meta["shapes"][k]:
            raise ValidationError(f"shape mismatch for {k}: stored {params[k].shape}, config implies {shape}",
                                  path=path)
    vocab = TokenVocab()
    for w in meta["token_vocab"][2:]:
        vocab.add(w)
    rv = meta["relation_vocab"]
    tc = TrainConfig(**meta["train_config"]) if meta.get("train_config") else TrainConfig()
    return Checkpoint(params, model_cfg, tc, vocab, RelationVocab(rv["names"], rv["negative"]), meta["tags"])


def write_history(history, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(rec) + "\n")
