"""Documents, on-disk format, candidate pairs, batching and the synthetic
bridge-token corpus.

On-disk format: UTF-8, one JSON object per line::

    {"doc_id": "d0",
     "tokens": ["Aspirin", "causes", ...],          # or a whitespace-split string
     "mentions": [{"mention_id": "m0", "entity_id": "E1", "entity_type": "Chemical",
                   "start": 0, "end": 1}, ...],     # token span, end exclusive
     "relations": [{"head_entity_id": "E1", "tail_entity_id": "E2",
                    "relation_type": "CID"}, ...]}
"""
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from sorel.encoder import PAD_ID, UNK_ID, TokenBatch
from sorel.errors import ConfigError, ParseError, ValidationError
from sorel.pairs import MentionSets, PairIndex

log = logging.getLogger(__name__)

DEFAULT_MAX_LEN = 512
NEGATIVE = "NEG"


@dataclass(frozen=True)
class Mention:
    mention_id: str
    entity_id: str
    entity_type: str
    start: int
    end: int


@dataclass(frozen=True)
class Relation:
    head_entity_id: str
    tail_entity_id: str
    relation_type: str


@dataclass
class Document:
    doc_id: str
    tokens: list
    mentions: list = field(default_factory=list)
    relations: list = field(default_factory=list)

    def validate(self, relation_types=None):
        n = len(self.tokens)
        entities = set()
        for m in self.mentions:
            if not (0 <= m.start < m.end <= n):
                raise ValidationError(
                    f"mention {m.mention_id!r} span [{m.start}, {m.end}) outside 0 <= start < end <= {n}")
            entities.add(m.entity_id)
        for r in self.relations:
            for eid in (r.head_entity_id, r.tail_entity_id):
                if eid not in entities:
                    raise ValidationError(f"relation references unknown entity {eid!r}")
            if relation_types is not None and r.relation_type not in relation_types:
                raise ValidationError(f"relation type {r.relation_type!r} not in vocabulary")
        return self

    def entity_order(self):
        """Entity ids in order of first mention."""
        seen = {}
        for m in sorted(self.mentions, key=lambda m: (m.start, m.end)):
            seen.setdefault(m.entity_id, None)
        return list(seen)

    def to_record(self):
        return {
            "doc_id": self.doc_id,
            "tokens": list(self.tokens),
            "mentions": [asdict(m) for m in self.mentions],
            "relations": [asdict(r) for r in self.relations],
        }

    @classmethod
    def from_record(cls, rec):
        tokens = rec["tokens"]
        if isinstance(tokens, str):
            tokens = tokens.split()
        return cls(
            doc_id=str(rec["doc_id"]),
            tokens=[str(t) for t in tokens],
            mentions=[Mention(str(m["mention_id"]), str(m["entity_id"]), str(m["entity_type"]),
                              int(m["start"]), int(m["end"])) for m in rec.get("mentions", [])],
            relations=[Relation(str(r["head_entity_id"]), str(r["tail_entity_id"]), str(r["relation_type"]))
                       for r in rec.get("relations", [])],
        )


@dataclass(frozen=True)
class RelationVocab:
    names: tuple
    negative: str = NEGATIVE

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if self.names.count(self.negative) != 1:
            raise ConfigError(f"negative type {self.negative!r} must appear exactly once in {self.names}")

    @property
    def negative_index(self):
        return self.names.index(self.negative)

    def __len__(self):
        return len(self.names)

    def index(self, name):
        return self.names.index(name)

    @classmethod
    def from_documents(cls, docs, negative=NEGATIVE):
        types = sorted({r.relation_type for d in docs for r in d.relations} - {negative})
        return cls((negative, *types), negative)


class TokenVocab:
    """String to id map; id 0 is padding and id 1 the unknown token."""

    def __init__(self, words=()):
        self.words = ["<pad>", "<unk>"]
        self.ids = {w: i for i, w in enumerate(self.words)}
        for w in words:
            self.add(w)

    def add(self, w):
        if w not in self.ids:
            self.ids[w] = len(self.words)
            self.words.append(w)
        return self.ids[w]

    def __len__(self):
        return len(self.words)

    def lookup(self, tokens):
        return np.array([self.ids.get(t, UNK_ID) for t in tokens], dtype=np.int64)

    @classmethod
    def from_documents(cls, docs):
        v = cls()
        for d in docs:
            for t in d.tokens:
                v.add(t)
        return v


def load_documents(path, relation_types=None):
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                doc = Document.from_record(rec)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"malformed record ({exc.__class__.__name__}: {exc})", line=lineno, path=path)
            try:
                doc.validate(relation_types)
            except ValidationError as exc:
                raise ValidationError(str(exc), line=lineno, path=path) from None
            docs.append(doc)
    return docs


def save_documents(docs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(json.dumps(d.to_record(), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class CandidatePair:
    head_entity_id: str
    tail_entity_id: str
    mentions: MentionSets
    context: tuple
    label: int


def _entity_tokens(doc, max_len):
    out = {}
    for m in doc.mentions:
        if m.end > max_len:
            continue
        out.setdefault(m.entity_id, set()).update(range(m.start, m.end))
    return out


def make_candidates(doc, vocab, max_len=DEFAULT_MAX_LEN):
    """All ordered pairs of distinct entities with their gold label."""
    n = len(doc.tokens)
    if n > max_len:
        warnings.warn(f"document {doc.doc_id!r} truncated from {n} to {max_len} tokens", stacklevel=2)
        n = max_len
    spans = _entity_tokens(doc, max_len)
    order = [e for e in doc.entity_order() if e in spans]
    gold = {}
    for r in doc.relations:
        gold.setdefault((r.head_entity_id, r.tail_entity_id), vocab.index(r.relation_type))
    pad = np.ones(n, dtype=bool)
    out = []
    for h in order:
        for t in order:
            if h == t:
                continue
            ms = MentionSets(sorted(spans[h]), sorted(spans[t]))
            ctx = pad.copy()
            ctx[list(ms.head)] = False
            ctx[list(ms.tail)] = False
            out.append(CandidatePair(h, t, ms, tuple(int(i) for i in np.flatnonzero(ctx)),
                                     gold.get((h, t), vocab.negative_index)))
    return out


@dataclass
class Example:
    """A document prepared for the model: ids, tags, candidate pairs."""

    doc: Document
    token_ids: np.ndarray
    tags: np.ndarray
    pairs: list


def prepare(docs, token_vocab, rel_vocab, tags, max_len=DEFAULT_MAX_LEN):
    from sorel.ner import tags_for

    out = []
    for d in docs:
        ids = token_vocab.lookup(d.tokens[:max_len])
        out.append(Example(d, ids, tags_for(d, tags, len(ids)), make_candidates(d, rel_vocab, max_len)))
    return out


@dataclass
class Batch:
    tokens: TokenBatch
    tags: np.ndarray  # [batch, N]
    index: PairIndex
    labels: np.ndarray  # [P]
    keys: list  # (doc_id, head_entity_id, tail_entity_id) per pair

    @property
    def num_pairs(self):
        return len(self.labels)


def batch_examples(examples, pair_filter=None):
    """Pad ``examples`` into one :class:`Batch`. Mention and context indices
    are token positions, so right padding leaves them unchanged."""
    tb = TokenBatch.from_lists([e.token_ids for e in examples])
    N = tb.token_ids.shape[1]
    tags = np.zeros((len(examples), N), dtype=np.int64)
    entries, labels, keys = [], [], []
    for b, e in enumerate(examples):
        tags[b, :len(e.tags)] = e.tags
        for c in e.pairs:
            if pair_filter is not None and not pair_filter(c):
                continue
            entries.append((b, c.mentions))
            labels.append(c.label)
            keys.append((e.doc.doc_id, c.head_entity_id, c.tail_entity_id))
    index = PairIndex.build(entries, tb.pad_mask)
    return Batch(tb, tags, index, np.array(labels, dtype=np.int64), keys)


def make_batches(examples, batch_size, order=None, pair_filter=None):
    order = range(len(examples)) if order is None else order
    order = list(order)
    return [batch_examples([examples[i] for i in order[s:s + batch_size]], pair_filter)
            for s in range(0, len(order), batch_size)]


@dataclass
class SynthConfig:
    num_docs: int = 1000
    doc_len: int = 16
    vocab_size: int = 200
    num_relation_types: int = 3
    positive_fraction: float = 0.5
    seed: int = 0
    sentence_len: int = 6

    def validate(self):
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ConfigError(f"positive_fraction must lie in [0, 1], got {self.positive_fraction}")
        if self.num_docs < 0 or self.num_relation_types < 1:
            raise ConfigError("num_docs must be >= 0 and num_relation_types >= 1")
        if self.doc_len < 3:
            raise ConfigError("doc_len must leave room for two entities and a bridge token")
        sizes = synth_vocab_sizes(self)
        if min(sizes.values()) < 1:
            raise ConfigError(f"vocab_size {self.vocab_size} too small to partition: {sizes}")
        return self


def synth_vocab_sizes(cfg):
    R = cfg.num_relation_types
    ent = cfg.vocab_size // 5
    bridge = max(1, cfg.vocab_size // (10 * R))
    return {"chemical": ent, "disease": ent, "bridge_per_type": bridge,
            "filler": cfg.vocab_size - 2 * ent - bridge * R}


def synth_relation_vocab(num_relation_types):
    return RelationVocab((NEGATIVE, *(f"R{t}" for t in range(1, num_relation_types + 1))))


def bridge_words(cfg):
    n = synth_vocab_sizes(cfg)["bridge_per_type"]
    return {f"R{t}": [f"br{t}_{i}" for i in range(n)] for t in range(1, cfg.num_relation_types + 1)}


def gen_synthetic(cfg, seed=None):
    """Documents whose gold relation is decided by one bridge token.

    Each document holds one Chemical and one Disease entity at random
    positions among filler words with ``.`` sentence breaks. Positive
    documents add exactly one bridge word whose vocabulary encodes the
    relation type (Chemical -> Disease); negatives have no bridge.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    sizes = synth_vocab_sizes(cfg)
    bridges = bridge_words(cfg)
    types = list(bridges)
    docs = []
    for n in range(cfg.num_docs):
        L = cfg.doc_len
        tokens = [f"w{i}" for i in rng.integers(0, sizes["filler"], size=L)]
        for s in range(cfg.sentence_len, L, cfg.sentence_len):
            tokens[s - 1] = "."
        slots = [i for i in range(L) if tokens[i] != "."]
        positive = rng.random() < cfg.positive_fraction
        picked = rng.choice(slots, size=3 if positive else 2, replace=False)
        hpos, tpos = int(picked[0]), int(picked[1])
        tokens[hpos] = f"chem{rng.integers(sizes['chemical'])}"
        tokens[tpos] = f"dis{rng.integers(sizes['disease'])}"
        mentions = [Mention("m0", "E0", "Chemical", hpos, hpos + 1), Mention("m1", "E1", "Disease", tpos, tpos + 1)]
        relations = []
        if positive:
            rel = types[rng.integers(len(types))]
            tokens[int(picked[2])] = bridges[rel][rng.integers(len(bridges[rel]))]
            relations.append(Relation("E0", "E1", rel))
        docs.append(Document(f"syn{n}", tokens, mentions, relations).validate())
    return docs


def split_documents(docs, ratios=(0.8, 0.1, 0.1)):
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(docs)
    a = int(round(ratios[0] * n))
    b = a + int(round(ratios[1] * n))
    return docs[:a], docs[a:b], docs[b:]


def convert_pubtator(path):
    """Best-effort PubTator (CDR) reader. UNVALIDATED against BRAN's preprocessing.

    Title and abstract are joined and whitespace-tokenized; character offsets
    are mapped to the tokens they overlap. ``CID`` relation lines become
    Chemical -> Disease relations.
    """
    log.warning("convert_pubtator is an unvalidated stub; outputs may differ from published preprocessing")
    raw = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if "|t|" in line or "|a|" in line:
                pmid, kind, text = line.split("|", 2)
                raw.setdefault(pmid, {"text": [], "ann": [], "rel": []})["text"].append(text)
                continue
            cols = line.split("\t")
            entry = raw.setdefault(cols[0], {"text": [], "ann": [], "rel": []})
            if len(cols) >= 6 and cols[1].isdigit():
                entry["ann"].append((int(cols[1]), int(cols[2]), cols[4], cols[5]))
            elif len(cols) >= 4 and cols[1] == "CID":
                entry["rel"].append((cols[2], cols[3]))
    docs = []
    for pmid, entry in raw.items():
        text = " ".join(entry["text"])
        tokens, offsets, pos = [], [], 0
        for tok in text.split():
            start = text.index(tok, pos)
            tokens.append(tok)
            offsets.append((start, start + len(tok)))
            pos = start + len(tok)
        mentions = []
        for n, (s, e, etype, eids) in enumerate(entry["ann"]):
            covered = [i for i, (a, b) in enumerate(offsets) if a < e and b > s]
            if not covered or eids == "-1":
                continue
            for eid in eids.split("|"):
                mentions.append(Mention(f"m{n}", eid, etype, covered[0], covered[-1] + 1))
        known = {m.entity_id for m in mentions}
        rels = [Relation(c, d, "CID") for c, d in entry["rel"] if c in known and d in known]
        docs.append(Document(pmid, tokens, mentions, rels).validate())
    return docs
