"""Command-line front end: gen, train, predict, score, inspect, gradcheck.

Settings resolve in precedence order: command-line flag, then JSON config
file (kebab-case keys mirroring the flags 1:1), then the ESAL_SEED
environment variable (seed only), then built-in defaults.  Unknown config
keys are rejected.  Exit codes: 0 success, 2 usage or config error,
3 numeric failure, 4 data mismatch, 5 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .autodiff import grad_check
from .checkpoint import CheckpointError, schema_fingerprint
from .corpus import (
    DOCTOR_MARK,
    PATIENT_MARK,
    CorpusFormatError,
    Dialogue,
    build_vocab,
    encode_window,
    load_corpus,
    schema_tokens,
)
from .layers import LayerDims
from .metrics import EvaluationError, evaluate
from .model import EsalModel, ModelConfig
from .ontology import Candidate, CandidatePair, LabelParseError, Schema
from .synthgen import GenConfig, generate
from .training import TrainConfig, TrainingAbort, bce_with_logits, build_examples, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_DATA = 4
EXIT_VERIFY = 5

GRADCHECK_TOLERANCE = 1e-4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# Config plumbing

_MODEL_DEFAULTS = ModelConfig()
_TRAIN_DEFAULTS = TrainConfig()
_GEN_DEFAULTS = GenConfig()

# key -> (type, default); None default means "must be provided" for required
# keys, or "optional" where the command treats absence as a real state.
KEYS: dict[str, dict] = {
    "gen": {
        "out": (str, None),
        "dialogues-train": (int, _GEN_DEFAULTS.dialogues_train),
        "dialogues-dev": (int, _GEN_DEFAULTS.dialogues_dev),
        "dialogues-test": (int, _GEN_DEFAULTS.dialogues_test),
        "utterances-per-dialogue": (int, _GEN_DEFAULTS.utterances_per_dialogue),
        "window-size": (int, _GEN_DEFAULTS.window_size),
        "labels-per-window": (float, _GEN_DEFAULTS.labels_per_window),
        "noise": (float, _GEN_DEFAULTS.noise),
        "seed": (int, 0),
    },
    "train": {
        "train": (str, None),
        "dev": (str, None),
        "schema": (str, None),
        "out": (str, None),
        "init-checkpoint": (str, None),
        "embed-dim": (int, _MODEL_DEFAULTS.dims.embed_dim),
        "hidden-dim": (int, _MODEL_DEFAULTS.dims.hidden_dim),
        "gate-hidden": (int, _MODEL_DEFAULTS.dims.gate_hidden),
        "ffn-hidden": (int, _MODEL_DEFAULTS.dims.ffn_hidden),
        "gate-mode": (str, _MODEL_DEFAULTS.gate_mode),
        "context-windows": (int, _MODEL_DEFAULTS.context_windows),
        "score-head": (str, _MODEL_DEFAULTS.score_head),
        "maxpool-width": (int, _MODEL_DEFAULTS.maxpool_width),
        "max-seq-len": (int, _MODEL_DEFAULTS.max_seq_len),
        "dtype": (str, _MODEL_DEFAULTS.dtype),
        "learning-rate": (float, _TRAIN_DEFAULTS.learning_rate),
        "optimizer": (str, _TRAIN_DEFAULTS.optimizer),
        "batch-size": (int, _TRAIN_DEFAULTS.batch_size),
        "max-epochs": (int, _TRAIN_DEFAULTS.max_epochs),
        "patience": (int, _TRAIN_DEFAULTS.patience),
        "clip-norm": (float, _TRAIN_DEFAULTS.clip_norm),
        "min-freq": (int, 1),
        "seed": (int, 0),
        "deterministic": (bool, False),
    },
    "predict": {
        "checkpoint": (str, None),
        "corpus": (str, None),
        "out": (str, None),
        "schema": (str, None),
        "threshold": (float, None),
    },
    "score": {
        "pred": (str, None),
        "gold": (str, None),
        "schema": (str, None),
        "out": (str, None),
    },
    "inspect": {
        "checkpoint": (str, None),
        "corpus": (str, None),
        "dialogue-id": (str, None),
        "window-index": (int, None),
        "out": (str, None),
    },
    "gradcheck": {
        "eps": (float, 1e-5),
        "max-coords": (int, 200),
        "seed": (int, 0),
    },
}

REQUIRED: dict[str, tuple[str, ...]] = {
    "gen": ("out",),
    "train": ("train", "dev", "schema", "out"),
    "predict": ("checkpoint", "corpus", "out"),
    "score": ("pred", "gold", "schema"),
    "inspect": ("checkpoint", "corpus", "dialogue-id", "window-index", "out"),
    "gradcheck": (),
}


def _add_flags(sub: argparse.ArgumentParser, command: str) -> None:
    sub.add_argument("--config", help="JSON config file (flags override it)")
    for key, (typ, _) in KEYS[command].items():
        flag = f"--{key}"
        if typ is bool:
            sub.add_argument(flag, action=argparse.BooleanOptionalAction, default=None)
        else:
            sub.add_argument(flag, type=typ, default=None)


def merge_config(command: str, args: argparse.Namespace) -> dict:
    """defaults < ESAL_SEED < config file < flags; unknown file keys rejected."""
    spec = KEYS[command]
    merged = {key: default for key, (_, default) in spec.items()}

    env_seed = os.environ.get("ESAL_SEED")
    if env_seed is not None and "seed" in spec:
        try:
            merged["seed"] = int(env_seed)
        except ValueError:
            raise CliError(f"ESAL_SEED is not an integer: {env_seed!r}", EXIT_USAGE)

    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise CliError(f"cannot read config file: {exc}", EXIT_USAGE)
        except json.JSONDecodeError as exc:
            raise CliError(f"config file is not valid JSON: {exc}", EXIT_USAGE)
        if not isinstance(file_cfg, dict):
            raise CliError("config file must hold a JSON object", EXIT_USAGE)
        unknown = sorted(set(file_cfg) - set(spec))
        if unknown:
            raise CliError(
                f"unknown config keys for '{command}': {', '.join(unknown)}", EXIT_USAGE
            )
        for key, value in file_cfg.items():
            typ = spec[key][0]
            try:
                merged[key] = typ(value) if value is not None else None
            except (TypeError, ValueError):
                raise CliError(
                    f"config key {key!r}: cannot coerce {value!r} to {typ.__name__}",
                    EXIT_USAGE,
                )

    for key in spec:
        flag_val = getattr(args, key.replace("-", "_"))
        if flag_val is not None:
            merged[key] = flag_val

    missing = [k for k in REQUIRED[command] if merged.get(k) is None]
    if missing:
        raise CliError(
            f"missing required settings for '{command}': {', '.join(missing)}",
            EXIT_USAGE,
        )
    return merged


# ---------------------------------------------------------------------------
# Shared helpers


def _load_corpus_or_die(path: str, schema: Schema) -> list[Dialogue]:
    try:
        return load_corpus(path, schema)
    except FileNotFoundError as exc:
        raise CliError(str(exc), EXIT_USAGE)
    except CorpusFormatError as exc:
        raise CliError(str(exc), EXIT_DATA)


def _load_schema_or_die(path: str) -> Schema:
    try:
        return Schema.from_file(path)
    except FileNotFoundError as exc:
        raise CliError(str(exc), EXIT_USAGE)
    except (ValueError, KeyError) as exc:
        raise CliError(f"bad schema file {path}: {exc}", EXIT_USAGE)


def _load_model_or_die(path: str) -> tuple[EsalModel, float]:
    try:
        return EsalModel.load(path)
    except FileNotFoundError as exc:
        raise CliError(str(exc), EXIT_USAGE)
    except CheckpointError as exc:
        raise CliError(str(exc), EXIT_DATA)


# ---------------------------------------------------------------------------
# Commands


def cmd_gen(cfg: dict) -> int:
    gen_config = GenConfig(
        dialogues_train=cfg["dialogues-train"],
        dialogues_dev=cfg["dialogues-dev"],
        dialogues_test=cfg["dialogues-test"],
        utterances_per_dialogue=cfg["utterances-per-dialogue"],
        window_size=cfg["window-size"],
        labels_per_window=cfg["labels-per-window"],
        noise=cfg["noise"],
        seed=cfg["seed"],
    )
    try:
        result = generate(gen_config, out_dir=cfg["out"])
    except OSError as exc:
        raise CliError(f"cannot write to {cfg['out']}: {exc}", EXIT_USAGE)
    for split, st in result["stats"].items():
        print(
            f"{split}: {st['dialogues']} dialogues, {st['windows']} windows, "
            f"{st['labels']} labels ({st['labels_per_window']:.2f} per window)"
        )
    print(f"wrote corpus, schema.json, lexicon.json to {cfg['out']}")
    return EXIT_OK


def _model_config_from(cfg: dict) -> ModelConfig:
    return ModelConfig(
        dims=LayerDims(
            embed_dim=cfg["embed-dim"],
            hidden_dim=cfg["hidden-dim"],
            gate_hidden=cfg["gate-hidden"],
            ffn_hidden=cfg["ffn-hidden"],
        ),
        gate_mode=cfg["gate-mode"],
        context_windows=cfg["context-windows"],
        score_head=cfg["score-head"],
        maxpool_width=cfg["maxpool-width"],
        max_seq_len=cfg["max-seq-len"],
        dtype=cfg["dtype"],
    )


def cmd_train(cfg: dict) -> int:
    schema = _load_schema_or_die(cfg["schema"])
    train_d = _load_corpus_or_die(cfg["train"], schema)
    dev_d = _load_corpus_or_die(cfg["dev"], schema)

    if cfg["init-checkpoint"]:
        model, _ = _load_model_or_die(cfg["init-checkpoint"])
        if schema_fingerprint(model.schema.to_dict()) != schema_fingerprint(schema.to_dict()):
            raise CliError(
                "schema in --init-checkpoint differs from --schema", EXIT_DATA
            )
    else:
        try:
            model_config = _model_config_from(cfg)
        except ValueError as exc:
            raise CliError(str(exc), EXIT_USAGE)
        vocab = build_vocab(
            train_d,
            min_freq=cfg["min-freq"],
            extra_tokens=(DOCTOR_MARK, PATIENT_MARK) + schema_tokens(schema),
        )
        model = EsalModel(schema, vocab, model_config, seed=cfg["seed"])

    try:
        train_config = TrainConfig(
            learning_rate=cfg["learning-rate"],
            optimizer=cfg["optimizer"],
            batch_size=cfg["batch-size"],
            max_epochs=cfg["max-epochs"],
            patience=cfg["patience"],
            seed=cfg["seed"],
            clip_norm=cfg["clip-norm"],
            deterministic=cfg["deterministic"],
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE)

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = train(model, train_d, dev_d, train_config)
    except TrainingAbort as exc:
        raise CliError(str(exc), EXIT_NUMERIC)

    ckpt_path = out / "model.esal"
    result.model.save(ckpt_path, result.threshold)
    log_path = out / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        for rec in result.log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    from .figures import save_training_curves

    if result.log:
        save_training_curves(result.log, out / "training_curves.png")
    print(
        f"trained {result.epochs_run} epochs; best dev Full F1 {result.best_dev_f1:.4f}; "
        f"threshold {result.threshold:.2f}"
    )
    print(f"wrote {ckpt_path} and {log_path}")
    return EXIT_OK


def cmd_predict(cfg: dict) -> int:
    model, stored_tau = _load_model_or_die(cfg["checkpoint"])
    tau = cfg["threshold"] if cfg["threshold"] is not None else stored_tau
    if not (0.0 < tau < 1.0):
        raise CliError(f"threshold must lie in (0,1), got {tau}", EXIT_USAGE)
    if cfg["schema"]:
        external = _load_schema_or_die(cfg["schema"])
        if schema_fingerprint(external.to_dict()) != schema_fingerprint(
            model.schema.to_dict()
        ):
            raise CliError(
                "schema file does not match the checkpoint's schema", EXIT_DATA
            )
    dialogues = _load_corpus_or_die(cfg["corpus"], model.schema)

    examples = build_examples(
        dialogues,
        model.vocab,
        model.space,
        model.config.max_seq_len,
        model.config.context_windows,
    )
    cand = model.encode_candidates()
    out_path = Path(cfg["out"])
    if out_path.parent != Path(""):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    n_preds = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for ex in examples:
            wf = model.forward(list(ex.seqs), cand)
            probs = wf.probs.value()
            preds = []
            for j in np.flatnonzero(probs >= tau):
                c = model.space.candidate_at(int(j))
                preds.append(
                    {
                        "category": model.schema.category_name(c.category),
                        "item": model.schema.item_name(c.category, c.item),
                        "status": model.schema.status_name(c.status),
                        "score": round(float(probs[j]), 6),
                    }
                )
            n_preds += len(preds)
            fh.write(
                json.dumps(
                    {
                        "dialogue_id": ex.dialogue_id,
                        "window_index": ex.window_index,
                        "predictions": preds,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    print(f"wrote {len(examples)} windows, {n_preds} predictions to {out_path}")
    return EXIT_OK


def _read_predictions(
    path: str, schema: Schema
) -> dict[tuple[str, int], frozenset]:
    out: dict[tuple[str, int], frozenset] = {}
    try:
        fh = open(path, encoding="utf-8")
    except FileNotFoundError as exc:
        raise CliError(str(exc), EXIT_USAGE)
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                did = str(obj["dialogue_id"])
                widx = int(obj["window_index"])
                cands = set()
                for p in obj["predictions"]:
                    ci = schema.category_index(str(p["category"]))
                    ii = schema.item_index(ci, str(p["item"]))
                    si = schema.status_index(str(p["status"]))
                    cands.add(Candidate(CandidatePair(ci, ii), si))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise CliError(f"{path}:{lineno}: bad prediction record: {exc}", EXIT_DATA)
            except LabelParseError as exc:
                raise CliError(f"{path}:{lineno}: {exc}", EXIT_DATA)
            key = (did, widx)
            if key in out:
                raise CliError(f"{path}:{lineno}: duplicate window {key}", EXIT_DATA)
            out[key] = frozenset(cands)
    return out


def cmd_score(cfg: dict) -> int:
    schema = _load_schema_or_die(cfg["schema"])
    gold_d = _load_corpus_or_die(cfg["gold"], schema)
    gold = {
        (d.id, w.window_index): w.gold for d in gold_d for w in d.windows
    }
    pred = _read_predictions(cfg["pred"], schema)
    try:
        report = evaluate(pred, gold, schema)
    except EvaluationError as exc:
        raise CliError(str(exc), EXIT_DATA)
    table = report.to_table()
    print(table, end="")
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.json", "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        (out / "report.txt").write_text(table, encoding="utf-8")
        from .figures import save_report_chart

        save_report_chart(report, out / "report.png")
        print(f"wrote report.json, report.txt, report.png to {out}")
    return EXIT_OK


def _write_heatmap_csv(path, row_labels, col_labels, weights: np.ndarray) -> None:
    # Rows are renormalized in float64 so the written values sum to one at
    # full precision regardless of the model's compute dtype.
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query", *col_labels])
        for label, row in zip(row_labels, weights):
            row64 = row.astype(np.float64)
            row64 = row64 / row64.sum()
            writer.writerow([label, *(repr(float(v)) for v in row64)])


def _write_heatmap_pgm(path, weights: np.ndarray) -> None:
    """8-bit binary PGM; each row is scaled by its own max so the brightest
    pixel per query is white."""
    h, w = weights.shape
    img = np.zeros((h, w), dtype=np.uint8)
    for i, row in enumerate(weights):
        m = float(row.max())
        if m > 0:
            img[i] = np.clip(np.round(row.astype(np.float64) / m * 255.0), 0, 255)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def cmd_inspect(cfg: dict) -> int:
    model, _ = _load_model_or_die(cfg["checkpoint"])
    dialogues = _load_corpus_or_die(cfg["corpus"], model.schema)
    target = None
    for d in dialogues:
        if d.id == cfg["dialogue-id"]:
            target = d
            break
    if target is None:
        raise CliError(f"dialogue {cfg['dialogue-id']!r} not found", EXIT_USAGE)
    widx = cfg["window-index"]
    if not (0 <= widx < len(target.windows)):
        raise CliError(
            f"window {widx} out of range for dialogue {target.id!r} "
            f"({len(target.windows)} windows)",
            EXIT_USAGE,
        )

    mcfg = model.config
    encoded = [
        encode_window(w, target, model.vocab, mcfg.max_seq_len) for w in target.windows
    ]
    lo = max(0, widx - mcfg.context_windows)
    seqs = encoded[lo : widx + 1]
    wf = model.forward(seqs, model.encode_candidates())

    from .figures import save_attention_png

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    tokens = list(wf.token_seq.tokens)
    written = []
    for ci, (cat_name, items) in enumerate(model.schema.categories):
        lo_p, hi_p = model.space.category_pair_range(ci)
        weights = wf.attn_pairs[lo_p:hi_p]
        slug = model.slugs[ci]
        _write_heatmap_csv(out / f"attn_{slug}.csv", list(items), tokens, weights)
        _write_heatmap_pgm(out / f"attn_{slug}.pgm", weights)
        save_attention_png(
            weights, list(items), tokens, out / f"attn_{slug}.png",
            f"{cat_name} expert attention",
        )
        written.append(f"attn_{slug}")
    status_names = list(model.schema.statuses)
    weights = wf.attn_statuses[-1]
    _write_heatmap_csv(out / "attn_status.csv", status_names, tokens, weights)
    _write_heatmap_pgm(out / "attn_status.pgm", weights)
    save_attention_png(
        weights, status_names, tokens, out / "attn_status.png", "status attention"
    )
    written.append("attn_status")
    print(f"wrote {', '.join(written)} (.csv/.pgm/.png) to {out}")
    return EXIT_OK


def _gradcheck_setup(seed: int):
    """Tiny all-float64 model over a fixed toy schema and window."""
    from .corpus import CLS, SEP, Vocab

    schema = Schema(
        [("Alpha", ["ache", "burn"]), ("Beta", ["clot", "drip"])],
        ["doctor-pos", "doctor-neg", "unknown"],
    )
    tokens = [
        "[pad]", "[unk]", "[cls]", "[sep]", "[doc]", "[pat]",
        "ache", "burn", "clot", "drip", "doctor", "pos", "neg", "unknown", "-",
        "yes", "no", "it", "hurts",
    ]
    vocab = Vocab(tokens)
    config = ModelConfig(
        dims=LayerDims(embed_dim=4, hidden_dim=3, gate_hidden=4, ffn_hidden=8),
        gate_mode="per_category",
        context_windows=1,
        score_head="scalar",
        max_seq_len=16,
        dtype="float64",
    )
    model = EsalModel(schema, vocab, config, seed=seed)

    from .corpus import TokenSeq

    def seq(words: list[str]) -> TokenSeq:
        surface = [CLS, *words, SEP]
        return TokenSeq(tuple(vocab.id_of(t) for t in surface), tuple(surface))

    seqs = [seq(["[doc]", "it", "hurts", "yes"]), seq(["[pat]", "ache", "yes", "no"])]
    rng = np.random.default_rng(seed)
    targets = rng.integers(0, 2, size=(1, len(model.space))).astype(np.float64)
    return model, seqs, targets


def cmd_gradcheck(cfg: dict) -> int:
    from .autodiff import stack_rows

    model, seqs, targets = _gradcheck_setup(cfg["seed"])

    def loss_fn():
        wf = model.forward(seqs, model.encode_candidates())
        return bce_with_logits(stack_rows([wf.logits]), targets)

    worst, report = grad_check(
        loss_fn,
        model.params.items(),
        eps=cfg["eps"],
        max_coords=cfg["max-coords"],
        seed=cfg["seed"],
    )
    width = max(len(n) for n in report)
    for name in sorted(report):
        print(f"{name:<{width}}  {report[name]:.3e}")
    print(f"max relative error: {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})")
    if worst >= GRADCHECK_TOLERANCE:
        offenders = [n for n, e in report.items() if e >= GRADCHECK_TOLERANCE]
        print(f"FAILED tensors: {', '.join(sorted(offenders))}", file=sys.stderr)
        return EXIT_VERIFY
    print("gradcheck OK")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="esal",
        description="Dialogue information extraction: corpus generation, "
        "training, prediction, scoring, and inspection.",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen": "generate a synthetic labeled corpus",
        "train": "train a model and write a checkpoint",
        "predict": "run a checkpoint over a corpus",
        "score": "compare predictions against gold labels",
        "inspect": "export attention heatmaps for one window",
        "gradcheck": "verify analytic gradients against finite differences",
    }
    for command in KEYS:
        sub = subs.add_parser(command, help=helps[command])
        _add_flags(sub, command)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen": cmd_gen,
        "train": cmd_train,
        "predict": cmd_predict,
        "score": cmd_score,
        "inspect": cmd_inspect,
        "gradcheck": cmd_gradcheck,
    }
    try:
        cfg = merge_config(args.command, args)
        return handlers[args.command](cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (CorpusFormatError, EvaluationError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))
