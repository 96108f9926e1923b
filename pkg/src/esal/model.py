"""Mixture-of-experts attention labeler over dialogue windows.

Pipeline per window: embed tokens, run one BiLSTM expert per category plus a
status BiLSTM, blend expert outputs with a softmax gate, attend over the
blended sequence with encoded candidate queries (item names against the
category stream, status names against the status stream), align the two
evidence streams with a bilinear match across context windows, and score
every (pair, status) candidate independently with a shared feed-forward
head and a sigmoid.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .autodiff import (
    Tensor,
    add,
    add_rowvec,
    concat,
    gather_rows,
    matmul,
    max_reduce,
    mul,
    narrow,
    reshape,
    scale_rows,
    sigmoid,
    softmax,
    stack_rows,
    tanh,
    tmean,
    transpose,
)
from .corpus import (
    CLS,
    DOCTOR_MARK,
    PAD,
    PATIENT_MARK,
    SEP,
    TokenSeq,
    Vocab,
    tokenize,
)
from .layers import (
    LayerDims,
    ParamStore,
    init_embedding,
    init_linear,
    init_lstm,
    lstm_run,
    reverse_rows,
    self_attn_pool,
    xavier_uniform,
)
from .ontology import Candidate, CandidateSpace, Schema, build_space

GATE_MODES = ("single", "per_category")
SCORE_HEADS = ("scalar", "maxpool")


class ModelError(ValueError):
    """Model configuration or input violates a contract."""


@dataclass(frozen=True)
class ModelConfig:
    dims: LayerDims = field(default_factory=LayerDims)
    gate_mode: str = "per_category"
    context_windows: int = 0  # K previous windows visible to the matcher
    score_head: str = "scalar"
    maxpool_width: int = 4  # FFN output width when score_head="maxpool"
    max_seq_len: int = 128
    dtype: str = "float32"

    def __post_init__(self):
        if self.gate_mode not in GATE_MODES:
            raise ModelError(f"gate_mode must be one of {GATE_MODES}")
        if self.score_head not in SCORE_HEADS:
            raise ModelError(f"score_head must be one of {SCORE_HEADS}")
        if self.context_windows < 0:
            raise ModelError("context_windows must be >= 0")
        if self.maxpool_width < 1:
            raise ModelError("maxpool_width must be >= 1")
        if self.max_seq_len < 4:
            raise ModelError("max_seq_len must be >= 4")
        if self.dtype not in ("float32", "float64"):
            raise ModelError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.dims.embed_dim,
            "hidden_dim": self.dims.hidden_dim,
            "gate_hidden": self.dims.gate_hidden,
            "ffn_hidden": self.dims.ffn_hidden,
            "gate_mode": self.gate_mode,
            "context_windows": self.context_windows,
            "score_head": self.score_head,
            "maxpool_width": self.maxpool_width,
            "max_seq_len": self.max_seq_len,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        dims = LayerDims(
            embed_dim=int(obj["embed_dim"]),
            hidden_dim=int(obj["hidden_dim"]),
            gate_hidden=int(obj["gate_hidden"]),
            ffn_hidden=int(obj["ffn_hidden"]),
        )
        return cls(
            dims=dims,
            gate_mode=obj["gate_mode"],
            context_windows=int(obj["context_windows"]),
            score_head=obj["score_head"],
            maxpool_width=int(obj["maxpool_width"]),
            max_seq_len=int(obj["max_seq_len"]),
            dtype=obj["dtype"],
        )


@dataclass
class CandidateEncodings:
    """Pooled query vectors: one row per pair, one per status."""

    pair_mat: Tensor  # [P, 2h]
    status_mat: Tensor  # [S, 2h]
    pair_pool_weights: list[np.ndarray]
    status_pool_weights: list[np.ndarray]


@dataclass
class WindowForward:
    """Everything the forward pass computed for one window."""

    token_seq: TokenSeq
    logits: Tensor  # [J]
    probs: Tensor  # [J]
    gate_weights: dict[int, np.ndarray]  # category index -> [C]
    attn_pairs: np.ndarray  # [P, n] query-over-token weights (category streams)
    attn_statuses: list[np.ndarray]  # per context window, [S, n_w]; last = current
    match_weights: np.ndarray  # [J, #context]


def _slug(name: str) -> str:
    s = re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")
    return s or "x"


def category_slugs(schema: Schema) -> list[str]:
    slugs = [_slug(name) for name, _ in schema.categories]
    if len(set(slugs)) != len(slugs):
        raise ModelError(f"category names collide after slugging: {slugs}")
    return slugs


def init_params(
    schema: Schema, vocab_size: int, config: ModelConfig, seed: int
) -> ParamStore:
    """Build every trainable tensor with a stable hierarchical name."""
    rng = np.random.default_rng(seed)
    d = config.dims
    two_h = 2 * d.hidden_dim
    store = ParamStore(dtype=config.dtype)

    init_embedding(store, rng, "embed.table", vocab_size, d.embed_dim)
    for slug in category_slugs(schema):
        init_lstm(store, rng, f"expert.{slug}.fwd", d.embed_dim, d.hidden_dim)
        init_lstm(store, rng, f"expert.{slug}.bwd", d.embed_dim, d.hidden_dim)
    init_lstm(store, rng, "status.fwd", d.embed_dim, d.hidden_dim)
    init_lstm(store, rng, "status.bwd", d.embed_dim, d.hidden_dim)

    store.add("pool.W", xavier_uniform(rng, two_h, 1, (1, two_h)))
    store.add("pool.b", np.zeros(1))

    n_cat = schema.num_categories
    gate_in = n_cat * two_h
    if config.gate_mode == "single":
        init_linear(store, rng, "gate.l1", gate_in, d.gate_hidden)
        init_linear(store, rng, "gate.l2", d.gate_hidden, n_cat)
    else:
        for slug in category_slugs(schema):
            init_linear(store, rng, f"gate.{slug}.l1", gate_in, d.gate_hidden)
            init_linear(store, rng, f"gate.{slug}.l2", d.gate_hidden, n_cat)

    store.add("match.W", xavier_uniform(rng, two_h, two_h, (two_h, two_h)))

    out_dim = 1 if config.score_head == "scalar" else config.maxpool_width
    init_linear(store, rng, "out.l1", 2 * two_h, d.ffn_hidden)
    init_linear(store, rng, "out.l2", d.ffn_hidden, out_dim)
    return store


class EsalModel:
    """Ties schema, vocabulary, config, and parameters into one forward API."""

    def __init__(
        self,
        schema: Schema,
        vocab: Vocab,
        config: ModelConfig,
        seed: int = 0,
        params: ParamStore | None = None,
        space: CandidateSpace | None = None,
    ):
        self.schema = schema
        self.vocab = vocab
        self.config = config
        self.space = space if space is not None else build_space(schema)
        self.params = (
            params
            if params is not None
            else init_params(schema, len(vocab), config, seed)
        )
        self.slugs = category_slugs(schema)
        # Dense gather indices: candidate j -> pair row / status row / flat cell.
        J = len(self.space)
        S = schema.num_statuses
        self._pair_ids = np.empty(J, dtype=np.int64)
        self._status_ids = np.empty(J, dtype=np.int64)
        for j in range(J):
            cand = self.space.candidate_at(j)
            self._pair_ids[j] = self.space.pair_index(cand.pair)
            self._status_ids[j] = cand.status
        self._flat_ids = self._pair_ids * S + self._status_ids
        # Framing tokens carry no extractable evidence; label attention is
        # masked off them so candidate queries bind to dialogue content.
        self._frame_ids = frozenset(
            vocab.id_of(t)
            for t in (PAD, CLS, SEP, DOCTOR_MARK, PATIENT_MARK)
            if t in vocab
        )

    # -- candidate queries -------------------------------------------------

    def _query_ids(self, text: str) -> list[int]:
        toks = tokenize(text)
        if not toks:
            raise ModelError(f"query text {text!r} tokenizes to nothing")
        return [self.vocab.id_of(t) for t in toks]

    def _bilstm(self, prefix: str, x: Tensor) -> Tensor:
        p = self.params
        fwd = lstm_run(x, p[f"{prefix}.fwd.W_ih"], p[f"{prefix}.fwd.W_hh"], p[f"{prefix}.fwd.b"])
        rev = lstm_run(
            reverse_rows(x),
            p[f"{prefix}.bwd.W_ih"],
            p[f"{prefix}.bwd.W_hh"],
            p[f"{prefix}.bwd.b"],
        )
        return concat([fwd, reverse_rows(rev)], axis=1)

    def _pool(self, h: Tensor) -> tuple[Tensor, Tensor]:
        return self_attn_pool(h, self.params["pool.W"], self.params["pool.b"])

    def _attn_mask(self, seq: TokenSeq) -> Tensor:
        """Additive attention mask: -inf on framing positions, 0 on content.

        A window with no content tokens at all falls back to the zero mask
        rather than producing an empty softmax.
        """
        mask = np.zeros(len(seq.ids), dtype=self.params.dtype)
        frame = [i for i, tid in enumerate(seq.ids) if tid in self._frame_ids]
        if len(frame) < len(seq.ids):
            mask[frame] = -np.inf
        return Tensor(mask)

    def encode_candidates(self) -> CandidateEncodings:
        """Encode item names per category expert and status names once.

        Recompute after every parameter update; one encoding pass is shared
        by all windows of a batch.
        """
        table = self.params["embed.table"]
        pair_rows: list[Tensor] = []
        pair_w: list[np.ndarray] = []
        for ci, (_, items) in enumerate(self.schema.categories):
            slug = self.slugs[ci]
            for item in items:
                emb = gather_rows(table, self._query_ids(item))
                h = self._bilstm(f"expert.{slug}", emb)
                vec, alpha = self._pool(h)
                pair_rows.append(vec)
                pair_w.append(alpha.value())
        status_rows: list[Tensor] = []
        status_w: list[np.ndarray] = []
        for status in self.schema.statuses:
            emb = gather_rows(table, self._query_ids(status))
            h = self._bilstm("status", emb)
            vec, alpha = self._pool(h)
            status_rows.append(vec)
            status_w.append(alpha.value())
        return CandidateEncodings(
            pair_mat=stack_rows(pair_rows),
            status_mat=stack_rows(status_rows),
            pair_pool_weights=pair_w,
            status_pool_weights=status_w,
        )

    # -- window pipeline ----------------------------------------------------

    def encode_dialogue_window(self, seq: TokenSeq) -> tuple[list[Tensor], Tensor]:
        """Expert sequences H_C per category plus the status sequence H_S."""
        emb = gather_rows(self.params["embed.table"], list(seq.ids))
        experts = [self._bilstm(f"expert.{slug}", emb) for slug in self.slugs]
        status = self._bilstm("status", emb)
        return experts, status

    def _gate_logits(self, prefix: str, gate_in: Tensor) -> Tensor:
        p = self.params
        h1 = tanh(add_rowvec(matmul(gate_in, p[f"{prefix}.l1.W"]), p[f"{prefix}.l1.b"]))
        out = add_rowvec(matmul(h1, p[f"{prefix}.l2.W"]), p[f"{prefix}.l2.b"])
        return reshape(out, (out.shape[1],))

    def apply_gate(self, experts: list[Tensor]) -> tuple[list[Tensor], dict[int, np.ndarray]]:
        """Blend expert sequences; one mixture per category (or one shared)."""
        pooled = [tmean(h, axis=0) for h in experts]  # each [2h]
        gate_in = reshape(concat(pooled, axis=0), (1, -1))  # [1, C*2h]

        mixes: list[Tensor] = []
        weights: dict[int, np.ndarray] = {}
        if self.config.gate_mode == "single":
            g = softmax(self._gate_logits("gate", gate_in))
            blended = self._mix(experts, g)
            for ci in range(len(experts)):
                mixes.append(blended)
                weights[ci] = g.value()
        else:
            for ci, slug in enumerate(self.slugs):
                g = softmax(self._gate_logits(f"gate.{slug}", gate_in))
                mixes.append(self._mix(experts, g))
                weights[ci] = g.value()
        return mixes, weights

    @staticmethod
    def _mix(experts: list[Tensor], g: Tensor) -> Tensor:
        total = None
        for e, h in enumerate(experts):
            term = mul(narrow(g, 0, e, e + 1), h)
            total = term if total is None else add(total, term)
        return total

    def label_attention(
        self,
        mixes: list[Tensor],
        status_seq: Tensor,
        cand: CandidateEncodings,
        mask: Tensor,
    ) -> tuple[Tensor, Tensor, np.ndarray, np.ndarray]:
        """Evidence vectors: item queries over the blended category streams,
        status queries over the status stream."""
        q_blocks: list[Tensor] = []
        p_blocks: list[Tensor] = []
        for ci in range(self.schema.num_categories):
            lo, hi = self.space.category_pair_range(ci)
            block = narrow(cand.pair_mat, 0, lo, hi)  # [P_c, 2h]
            scores = add_rowvec(matmul(block, transpose(mixes[ci])), mask)
            p = softmax(scores)  # [P_c, n]
            q_blocks.append(matmul(p, mixes[ci]))
            p_blocks.append(p)
        q_pairs = concat(q_blocks, axis=0)  # [P, 2h]
        p_pairs = concat(p_blocks, axis=0)  # [P, n]

        scores = add_rowvec(matmul(cand.status_mat, transpose(status_seq)), mask)
        p_status = softmax(scores)  # [S, n]
        q_status = matmul(p_status, status_seq)  # [S, 2h]
        return q_pairs, q_status, p_pairs.value(), p_status.value()

    def match_and_feature(
        self, q_pairs: Tensor, q_status_ctx: list[Tensor]
    ) -> tuple[Tensor, Tensor]:
        """Align each candidate's pair evidence with its status evidence over
        the context windows (last entry = current window)."""
        S = self.schema.num_statuses
        P = len(self.space.pairs)
        left = matmul(q_pairs, self.params["match.W"])  # [P, 2h]
        cols: list[Tensor] = []
        for q_s in q_status_ctx:
            m_full = matmul(left, transpose(q_s))  # [P, S]
            cols.append(gather_rows(reshape(m_full, (P * S, 1)), self._flat_ids))
        scores = concat(cols, axis=1)  # [J, W]
        match = softmax(scores)  # rows over context windows

        blended = None
        for w, q_s in enumerate(q_status_ctx):
            rows = gather_rows(q_s, self._status_ids)  # [J, 2h]
            term = scale_rows(rows, narrow(match, 1, w, w + 1))
            blended = term if blended is None else add(blended, term)

        pair_rows = gather_rows(q_pairs, self._pair_ids)  # [J, 2h]
        feats = concat([pair_rows, blended], axis=1)  # [J, 4h]
        return feats, match

    def score(self, feats: Tensor) -> tuple[Tensor, Tensor]:
        p = self.params
        h1 = tanh(add_rowvec(matmul(feats, p["out.l1.W"]), p["out.l1.b"]))
        out = add_rowvec(matmul(h1, p["out.l2.W"]), p["out.l2.b"])  # [J, m]
        if self.config.score_head == "scalar":
            logits = reshape(out, (out.shape[0],))
        else:
            logits = max_reduce(out, axis=1)
        return logits, sigmoid(logits)

    def forward(
        self, seqs: list[TokenSeq], cand: CandidateEncodings | None = None
    ) -> WindowForward:
        """Score one window.  ``seqs`` holds up to K context windows followed
        by the current window (oldest first, current last)."""
        if not seqs:
            raise ModelError("forward needs at least the current window")
        if len(seqs) > self.config.context_windows + 1:
            raise ModelError(
                f"got {len(seqs)} windows but context_windows={self.config.context_windows}"
            )
        if cand is None:
            cand = self.encode_candidates()
        current = seqs[-1]

        experts, status_seq = self.encode_dialogue_window(current)
        mixes, gate_weights = self.apply_gate(experts)
        q_pairs, q_status, p_pairs_np, p_status_np = self.label_attention(
            mixes, status_seq, cand, self._attn_mask(current)
        )

        q_status_ctx: list[Tensor] = []
        attn_statuses: list[np.ndarray] = []
        for seq in seqs[:-1]:
            emb = gather_rows(self.params["embed.table"], list(seq.ids))
            h_s = self._bilstm("status", emb)
            scores = add_rowvec(
                matmul(cand.status_mat, transpose(h_s)), self._attn_mask(seq)
            )
            p_s = softmax(scores)
            q_status_ctx.append(matmul(p_s, h_s))
            attn_statuses.append(p_s.value())
        q_status_ctx.append(q_status)
        attn_statuses.append(p_status_np)

        feats, match = self.match_and_feature(q_pairs, q_status_ctx)
        logits, probs = self.score(feats)
        return WindowForward(
            token_seq=current,
            logits=logits,
            probs=probs,
            gate_weights=gate_weights,
            attn_pairs=p_pairs_np,
            attn_statuses=attn_statuses,
            match_weights=match.value(),
        )

    # -- prediction ----------------------------------------------------------

    def predict(self, wf: WindowForward, threshold: float) -> frozenset[Candidate]:
        if not (0.0 < threshold < 1.0):
            raise ModelError(f"threshold must lie in (0,1), got {threshold}")
        probs = wf.probs.value()
        return frozenset(
            self.space.candidate_at(j) for j in np.flatnonzero(probs >= threshold)
        )

    # -- persistence -----------------------------------------------------------

    def save(self, path, threshold: float) -> None:
        ckpt.save_checkpoint(
            path,
            tensors=self.params.export_values(),
            config=self.config.to_dict(),
            vocab_tokens=list(self.vocab.tokens),
            schema_dict=self.schema.to_dict(),
            threshold=threshold,
        )

    @classmethod
    def load(cls, path) -> tuple["EsalModel", float]:
        data = ckpt.load_checkpoint(path)
        schema = Schema.from_dict(data["schema_dict"])
        vocab = Vocab(data["vocab_tokens"])
        config = ModelConfig.from_dict(data["config"])
        model = cls(schema, vocab, config, seed=0)
        model.params.load_values(data["tensors"])
        return model, data["threshold"]
