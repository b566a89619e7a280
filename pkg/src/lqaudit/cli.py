"""``lqaudit`` command line: slice, embed, train, score, filter, audit, eval.

Every stage reads the previous stage's default output from the work
directory, so ``lqaudit slice && lqaudit embed && ...`` composes without
extra arguments.  Exit codes: 0 success, 1 fatal error, 2 finished with
per-item diagnostics.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import yaml

from . import __version__
from .dcn import (
    DcnConfig, TrainHyper, load_checkpoint, save_checkpoint, score_slice, select_threshold, train,
)
from .embedding import EmbeddingProviderSpec, embed_corpus, make_provider, read_embeddings, tokenize, write_embeddings
from .errors import DegenerateLabels, PipelineError, ValidationError
from .evalkit import (
    confusion, metrics, predictions_from_reports, predictions_from_scores, read_labels, write_metrics,
)
from .manifest import FilterConfig, build_manifest, read_manifest, write_manifest
from .dcn.model import ScoredSlice
from .orchestrator import AuditConfig, HttpChatClient, RecordingClient, ReplayClient, run_audit, write_reports
from .slicer import parse_contract, read_slices, slice_all, write_slices
from .taxonomy import SemanticCorpus, default_corpus, load_corpus

log = logging.getLogger("lqaudit")

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2

SECTIONS = ("seed", "paths", "embedding", "dcn", "train", "filter", "audit", "llm")

DEFAULT_FILES = {
    "slices": "slices.jsonl",
    "embeddings": "embeddings.lqlm",
    "corpus_embeddings": "corpus_embeddings.lqlm",
    "checkpoint": "model.lqck",
    "scores": "scores.jsonl",
    "manifest": "manifest.json",
    "reports": "reports.json",
    "metrics": "metrics.json",
}


@dataclass
class PipelineConfig:
    seed: int = 0
    paths: dict = field(default_factory=dict)
    embedding: EmbeddingProviderSpec = field(default_factory=EmbeddingProviderSpec)
    dcn: DcnConfig = field(default_factory=DcnConfig)
    train: TrainHyper = field(default_factory=TrainHyper)
    filter: FilterConfig = field(default_factory=FilterConfig)
    audit: AuditConfig = field(default_factory=AuditConfig)
    llm: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None, seed: int | None = None) -> "PipelineConfig":
        unknown = set(raw) - set(SECTIONS)
        if unknown:
            raise ValidationError(f"unknown config sections: {sorted(unknown)}")
        s = int(raw.get("seed", 0) if seed is None else seed)
        emb = dict(raw.get("embedding") or {})
        emb.setdefault("seed", s)
        hyper = dict(raw.get("train") or {})
        hyper["seed"] = s if seed is not None or "seed" not in hyper else hyper["seed"]
        try:
            return cls(
                seed=s,
                paths=dict(raw.get("paths") or {}),
                embedding=EmbeddingProviderSpec.from_dict(emb),
                dcn=DcnConfig.from_dict(raw.get("dcn") or {}),
                train=TrainHyper.from_dict(hyper),
                filter=FilterConfig.from_dict(raw.get("filter") or {}),
                audit=AuditConfig.from_dict(raw.get("audit") or {}),
                llm=dict(raw.get("llm") or {}),
                base_dir=base_dir or Path.cwd(),
            )
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad configuration: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "paths": self.paths,
            "embedding": self.embedding.to_dict(),
            "dcn": self.dcn.to_dict(),
            "train": {k: getattr(self.train, k) for k in self.train.__dataclass_fields__},
            "filter": self.filter.to_dict(),
            "audit": self.audit.to_dict(),
            "llm": {k: v for k, v in self.llm.items()},
        }

    def hash(self) -> str:
        return _sha_text(json.dumps(self.to_dict(), sort_keys=True))

    def path(self, key: str) -> Path | None:
        value = self.paths.get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def corpus(self) -> SemanticCorpus:
        p = self.path("corpus")
        return load_corpus(p) if p is not None else default_corpus()


def load_config(path: str | None, seed: int | None = None) -> PipelineConfig:
    if path is None:
        return PipelineConfig.from_dict({}, seed=seed)
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ValidationError(f"{p}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValidationError(f"{p}: top level must be a mapping")
    return PipelineConfig.from_dict(raw, base_dir=p.parent.resolve(), seed=seed)


# --------------------------------------------------------------------------
# provenance helpers


def _sha_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _sha_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def provenance(cfg: PipelineConfig, command: str, inputs: dict[str, Path], **extra) -> dict:
    out = {
        "tool": f"lqaudit {__version__}",
        "command": command,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "inputs": {name: {"file": p.name, "sha256": _sha_file(p)} for name, p in sorted(inputs.items())},
    }
    out.update(extra)
    return out


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def write_meta(path: Path, meta: dict) -> None:
    _meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_meta(path: Path) -> dict:
    p = _meta_path(path)
    return json.loads(p.read_text(encoding="utf-8")) if p.is_file() else {}


# --------------------------------------------------------------------------
# commands


class Context:
    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.cfg = load_config(args.config, args.seed)
        self.workdir = Path(args.workdir) if args.workdir else (self.cfg.path("workdir") or Path("work"))
        self.workdir.mkdir(parents=True, exist_ok=True)

    def out(self, value: str | None, key: str) -> Path:
        return Path(value) if value else self.workdir / DEFAULT_FILES[key]

    def inp(self, value: str | None, key: str) -> Path:
        p = Path(value) if value else self.workdir / DEFAULT_FILES[key]
        if not p.is_file():
            raise ValidationError(f"missing input {key}: {p}")
        return p


def cmd_slice(ctx: Context) -> int:
    src = Path(ctx.args.contracts) if ctx.args.contracts else ctx.cfg.path("contracts")
    if src is None or not src.exists():
        raise ValidationError(f"contracts directory not found: {src}")
    files = [src] if src.is_file() else sorted(src.rglob("*.sol"))
    if not files:
        raise ValidationError(f"no .sol files under {src}")
    diagnostics: list[str] = []
    slices = []
    for f in files:
        cid = f.relative_to(src).with_suffix("").as_posix() if src.is_dir() else f.stem
        try:
            contract = parse_contract(cid, f.read_text(encoding="utf-8"))
        except PipelineError as exc:
            diagnostics.append(f"{cid}: {type(exc).__name__}: {exc}")
            continue
        slices.extend(slice_all(contract, diagnostics))
    if not slices:
        for d in diagnostics:
            log.error(d)
        raise ValidationError("no slices produced")
    out = ctx.out(ctx.args.output, "slices")
    write_slices(slices, out)
    write_meta(out, provenance(ctx.cfg, "slice", {}, n_contracts=len(files), n_slices=len(slices),
                               diagnostics=diagnostics))
    print(f"slices\t{len(slices)}\t{out}")
    for d in diagnostics:
        log.warning(d)
    return EXIT_PARTIAL if diagnostics else EXIT_OK


def cmd_embed(ctx: Context) -> int:
    slices_path = ctx.inp(ctx.args.slices, "slices")
    slices = read_slices(slices_path)
    provider = make_provider(ctx.cfg.embedding)
    diagnostics: list[str] = []
    pairs = []
    truncated = 0
    for s in slices:
        try:
            seq = provider.embed(s.normalized_slice, key=s.slice_id)
        except PipelineError as exc:
            diagnostics.append(f"{s.slice_id}: {exc}")
            continue
        pairs.append((s.slice_id, seq))
        if ctx.cfg.embedding.kind == "hashing":
            truncated += len(tokenize(s.normalized_slice)) > seq.L
    corpus = embed_corpus(provider, ctx.cfg.corpus())
    out = ctx.out(ctx.args.output, "embeddings")
    cout = ctx.out(ctx.args.corpus_output, "corpus_embeddings")
    write_embeddings(out, pairs)
    write_embeddings(cout, zip(corpus.codes, corpus.embeddings))
    meta = provenance(ctx.cfg, "embed", {"slices": slices_path}, provider=ctx.cfg.embedding.to_dict(),
                      corpus_fingerprint=corpus.fingerprint())
    write_meta(out, dict(meta, diagnostics=diagnostics, truncated_slices=truncated))
    if truncated:
        log.info("%d slices exceeded %d tokens and were truncated", truncated, pairs[0][1].L)
    write_meta(cout, meta)
    print(f"embeddings\t{len(pairs)}\t{out}")
    print(f"corpus_embeddings\t{corpus.K}\t{cout}")
    for d in diagnostics:
        log.warning(d)
    return EXIT_PARTIAL if diagnostics else EXIT_OK


def _corpus_with_embeddings(ctx: Context, path: Path) -> SemanticCorpus:
    corpus = ctx.cfg.corpus()
    store = read_embeddings(path)
    missing = [c for c in corpus.codes if c not in store]
    if missing:
        raise ValidationError(f"{path}: no embeddings for flaw codes {missing}")
    return corpus.with_embeddings([store[c] for c in corpus.codes])


def _labelled(store: dict, labels, path: Path):
    lacking = sorted(set(labels.items) - set(store))
    if lacking:
        raise ValidationError(f"{path}: labelled slices without embeddings: {lacking[:5]}")
    return [(store[sid], labels.vector(sid)) for sid in sorted(labels.items)]


_LOG_FIELDS = ("epoch", "lr", "train_loss", "val_loss", "grad_norm", "precision", "recall", "f1", "macro_f1")


def _read_log(path: Path) -> list[dict]:
    if not path.is_file():
        return []
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def _write_log(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=_LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (r[k] if k == "epoch" else f"{r[k]:.9g}") for k in _LOG_FIELDS})


def cmd_train(ctx: Context) -> int:
    from .plotting import plot_training_curves

    a = ctx.args
    if not a.labels or not Path(a.labels).is_file():
        raise ValidationError(f"labels file not found: {a.labels}")
    emb_path = ctx.inp(a.embeddings, "embeddings")
    cemb_path = ctx.inp(a.corpus_embeddings, "corpus_embeddings")
    corpus = _corpus_with_embeddings(ctx, cemb_path)
    store = read_embeddings(emb_path)
    labels = read_labels(a.labels, corpus.codes)
    data = _labelled(store, labels, Path(a.labels))
    validation = None
    inputs = {"embeddings": emb_path, "corpus_embeddings": cemb_path, "labels": Path(a.labels)}
    if a.val_labels:
        vl = read_labels(a.val_labels, corpus.codes)
        validation = _labelled(store, vl, Path(a.val_labels))
        inputs["val_labels"] = Path(a.val_labels)

    out = ctx.out(a.output, "checkpoint")
    log_path = out.with_suffix(".metrics.csv")
    init_model, start_epoch, history = None, 0, []
    if a.resume:
        resume = Path(a.resume)
        init_model = load_checkpoint(resume, expected=ctx.cfg.dcn)
        meta = read_meta(resume)
        start_epoch = int(meta.get("last_epoch", -1)) + 1
        history = _read_log(resume.with_suffix(".metrics.csv"))
        inputs["resume"] = resume

    rows = list(history)
    result = train(data, corpus, ctx.cfg.dcn, ctx.cfg.train, validation=validation, init_model=init_model,
                   start_epoch=start_epoch, on_epoch=lambda m: rows.append(m.to_dict()))
    save_checkpoint(result.model, out)
    _write_log(log_path, rows)
    plot_training_curves(rows, out.with_suffix(".curves.png"))

    # threshold tuned on validation data (or the training data if none was given)
    held = validation if validation else data
    pairs = []
    for emb, y in held:
        pairs.extend(zip(score_slice(result.model, emb, corpus).scores, (bool(v) for v in y)))
    try:
        tau = select_threshold(pairs)
    except DegenerateLabels:
        tau = None
    write_meta(out, provenance(
        ctx.cfg, "train", inputs, model_fingerprint=result.model.fingerprint(),
        corpus_fingerprint=corpus.fingerprint(), best_epoch=result.best_epoch,
        last_epoch=result.last_epoch, stopped_early=result.stopped_early, tuned_threshold=tau,
    ))
    best = next((r for r in rows if r["epoch"] == result.best_epoch), None)
    print(f"checkpoint\t{out}")
    print(f"metrics_log\t{log_path}")
    print(f"epochs\t{start_epoch}-{result.last_epoch}\tbest\t{result.best_epoch}")
    if best is not None:
        print(f"best_val_f1\t{best['f1']:.4f}\tbest_val_macro_f1\t{best['macro_f1']:.4f}")
    if tau is not None:
        print(f"tuned_threshold\t{tau:.6g}")
    return EXIT_OK


def _write_scores(scored: Sequence[ScoredSlice], codes: Sequence[str], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in scored:
            fh.write(json.dumps({"slice_id": s.slice_id,
                                 "scores": {c: float(f"{p:.9g}") for c, p in zip(codes, s.scores)}}) + "\n")


def read_scores(path: Path, codes: Sequence[str]) -> list[ScoredSlice]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.append(ScoredSlice(obj["slice_id"], tuple(float(obj["scores"][c]) for c in codes)))
    return out


def cmd_score(ctx: Context) -> int:
    a = ctx.args
    ckpt = ctx.inp(a.checkpoint, "checkpoint")
    emb_path = ctx.inp(a.embeddings, "embeddings")
    cemb_path = ctx.inp(a.corpus_embeddings, "corpus_embeddings")
    model = load_checkpoint(ckpt)
    corpus = _corpus_with_embeddings(ctx, cemb_path)
    store = read_embeddings(emb_path)
    scored = [score_slice(model, store[sid], corpus, sid) for sid in store]
    out = ctx.out(a.output, "scores")
    _write_scores(scored, corpus.codes, out)
    write_meta(out, provenance(ctx.cfg, "score", {"checkpoint": ckpt, "embeddings": emb_path,
                                                   "corpus_embeddings": cemb_path},
                               model_fingerprint=model.fingerprint(), corpus_fingerprint=corpus.fingerprint(),
                               tuned_threshold=read_meta(ckpt).get("tuned_threshold")))
    print(f"scores\t{len(scored)}\t{out}")
    return EXIT_OK


def cmd_filter(ctx: Context) -> int:
    a = ctx.args
    scores_path = ctx.inp(a.scores, "scores")
    corpus = ctx.cfg.corpus()
    scored = read_scores(scores_path, corpus.codes)
    meta = read_meta(scores_path)
    fcfg = ctx.cfg.filter
    if a.tau_high is not None:
        fcfg = FilterConfig.from_dict(dict(fcfg.to_dict(), tau_high=a.tau_high))
    manifest = build_manifest(
        scored, corpus.codes, fcfg,
        corpus_fingerprint=meta.get("corpus_fingerprint", corpus.fingerprint()),
        model_fingerprint=meta.get("model_fingerprint", ""),
        provenance=provenance(ctx.cfg, "filter", {"scores": scores_path}),
    )
    out = ctx.out(a.output, "manifest")
    write_manifest(manifest, out)
    n_ret = sum(len(e.retained) for e in manifest.entries)
    n_clean = sum(e.is_clean for e in manifest.entries)
    print(f"manifest\t{len(manifest.entries)}\t{out}")
    print(f"retained_flaws\t{n_ret}\tclean_slices\t{n_clean}")
    return EXIT_OK


def _llm_client(ctx: Context):
    transcript = ctx.args.mock_llm or ctx.cfg.llm.get("mock_transcript")
    if transcript:
        return ReplayClient.from_file(transcript)
    endpoint, model = ctx.cfg.llm.get("endpoint"), ctx.cfg.llm.get("model")
    if not endpoint or not model:
        raise ValidationError("audit needs --mock-llm or llm.endpoint and llm.model in the config")
    return HttpChatClient(endpoint, model, ctx.cfg.llm.get("api_key_env", "LQAUDIT_API_KEY"),
                          float(ctx.cfg.llm.get("timeout", 120.0)))


def cmd_audit(ctx: Context) -> int:
    a = ctx.args
    man_path = ctx.inp(a.manifest, "manifest")
    slices_path = ctx.inp(a.slices, "slices")
    manifest = read_manifest(man_path)
    slices = read_slices(slices_path)
    client = _llm_client(ctx)
    if a.record:
        client = RecordingClient(client)
    reports = run_audit(slices, manifest, ctx.cfg.corpus(), client, ctx.cfg.audit)
    out = ctx.out(a.output, "reports")
    write_reports(reports, out)
    write_meta(out, provenance(ctx.cfg, "audit", {"manifest": man_path, "slices": slices_path},
                               model_fingerprint=manifest.model_fingerprint,
                               corpus_fingerprint=manifest.corpus_fingerprint))
    if a.record:
        client.save(a.record)
    totals = {"Confirmed": 0, "Suspicious": 0, "Rejected": 0}
    for r in reports:
        for k, v in r.counts().items():
            if k in totals:
                totals[k] += v
    print(f"reports\t{len(reports)}\t{out}")
    print("\t".join(f"{k.lower()}\t{v}" for k, v in totals.items()))
    return EXIT_PARTIAL if any(r.diagnostics for r in reports) else EXIT_OK


def cmd_eval(ctx: Context) -> int:
    from .plotting import plot_class_metrics

    a = ctx.args
    if not a.labels or not Path(a.labels).is_file():
        raise ValidationError(f"labels file not found: {a.labels}")
    corpus = ctx.cfg.corpus()
    labels = read_labels(a.labels, corpus.codes)
    if a.reports:
        src = Path(a.reports)
        reports = json.loads(src.read_text(encoding="utf-8"))["reports"]
        pred = predictions_from_reports(reports, corpus.codes, labels.items, a.suspicious == "positive")
        basis = {"reports": src.name, "suspicious": a.suspicious}
    else:
        src = ctx.inp(a.scores, "scores")
        threshold = a.threshold if a.threshold is not None else ctx.cfg.filter.tau_high
        scored = {s.slice_id: s.scores for s in read_scores(src, corpus.codes)}
        pred = predictions_from_scores(((sid, scored.get(sid, ())) for sid in labels.items), threshold)
        basis = {"scores": src.name, "threshold": threshold}
    report = metrics(confusion(pred, labels))
    out = ctx.out(a.output, "metrics")
    write_metrics(report, out, {"basis": basis, "provenance": provenance(
        ctx.cfg, "eval", {"labels": Path(a.labels), "predictions": src})})
    with open(out.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["flaw_code", "precision", "recall", "specificity", "f1", "support"])
        for code, m in report.per_class.items():
            w.writerow([code, f"{m.precision:.6f}", f"{m.recall:.6f}", f"{m.specificity:.6f}",
                        f"{m.f1:.6f}", m.support])
    plot_class_metrics({k: m.to_dict() for k, m in report.per_class.items()}, out.with_suffix(".png"),
                       title=f"macro-F1 {report.macro_f1:.3f}  weighted-F1 {report.weighted_f1:.3f}")
    print("flaw_code\tprecision\trecall\tspecificity\tf1\tsupport")
    for code, m in report.per_class.items():
        print(f"{code}\t{m.precision:.4f}\t{m.recall:.4f}\t{m.specificity:.4f}\t{m.f1:.4f}\t{m.support}")
    print(f"macro_f1\t{report.macro_f1:.4f}\tweighted_f1\t{report.weighted_f1:.4f}")
    print(f"metrics\t{out}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lqaudit", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="YAML pipeline configuration")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--workdir", help="directory for default inputs and outputs (default: ./work)")
    p.add_argument("--mock-llm", metavar="TRANSCRIPT", help="replay LLM answers from a transcript file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("slice", help="slice Solidity contracts into normalized function slices")
    s.add_argument("contracts", nargs="?", help="directory of .sol files (or a single file)")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_slice)

    s = sub.add_parser("embed", help="embed slices and the flaw corpus")
    s.add_argument("--slices")
    s.add_argument("-o", "--output")
    s.add_argument("--corpus-output")
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("train", help="train the co-attention scorer")
    s.add_argument("--labels", required=False)
    s.add_argument("--val-labels")
    s.add_argument("--embeddings")
    s.add_argument("--corpus-embeddings")
    s.add_argument("--resume", metavar="CHECKPOINT")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("score", help="score every embedded slice against every flaw")
    s.add_argument("--checkpoint")
    s.add_argument("--embeddings")
    s.add_argument("--corpus-embeddings")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("filter", help="build the audit manifest from scores")
    s.add_argument("--scores")
    s.add_argument("--tau-high", type=float)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("audit", help="run the four-phase LLM audit")
    s.add_argument("--manifest")
    s.add_argument("--slices")
    s.add_argument("--record", metavar="TRANSCRIPT", help="save a replayable transcript of the LLM exchange")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_audit)

    s = sub.add_parser("eval", help="compare reports or scores with labels")
    s.add_argument("--labels")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--reports")
    g.add_argument("--scores")
    s.add_argument("--threshold", type=float, help="score threshold (default: filter.tau_high)")
    s.add_argument("--suspicious", choices=("positive", "negative"), default="positive")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx = Context(args)
        return args.func(ctx)
    except (PipelineError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
