"""Command-line entry point: ``odx <subcommand> [options]``.

Every subcommand reads its inputs from the run directory (``paths.output_dir``),
writes its outputs there, and prints one summary line. Exit status is 0 on
success, 1 for invalid input or configuration and 2 for runtime failures.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from pathlib import Path

from . import __version__, _accel
from .claims import IngestReport, ValidationError, read_claims_directory
from .cohort import TaskSetSummary, build_task_set, patient_to_dict, read_instances, write_instances
from .config import PipelineConfig, load_config, parse_format
from .ensemble import EnsembleKind, TrainingError, predict_many, train_ensemble, TreeEnsembleModel
from .eval import (
    compute_metrics,
    estimate_cost,
    format_table,
    format_usd,
    run_field_ablation,
    run_visits_sweep,
    table_rows_text,
    write_report,
)
from .features import SplitLeakError, Vocabulary, build_vocabulary, read_vectors, vectorize, write_vectors
from .llm import (
    LLMClient,
    MockChatServer,
    constant_responder,
    exposure_biased_responder,
    export_finetune_dataset,
    llm_predict_batch,
    marker_responder,
)
from .prediction import read_predictions, write_predictions
from .serialize import CodeDictionary, FieldMask, PromptFormat, read_prompts, render_prompt, write_prompts
from .synthgen import SPLITS, ConfigError, generate_population, write_population_tables

VALIDATION_ERRORS = (ValidationError, ConfigError, SplitLeakError, TrainingError, FileNotFoundError)

MOCK_RESPONDERS = {
    "mock": lambda: constant_responder('{"overdose_risk": "no"}'),
    "mock-exposure": exposure_biased_responder,
    "mock-markers": marker_responder,
}
TREE_PREDICTORS = tuple(k.value for k in EnsembleKind)
PREDICTORS = (*MOCK_RESPONDERS, "llm", *TREE_PREDICTORS)


# --- run directory layout -------------------------------------------------------

class Workspace:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.root = Path(cfg.paths.output_dir)

    def _file(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    @property
    def w(self) -> str:
        return f"w{self.cfg.window_days}"

    def prompt_tag(self, fmt: PromptFormat | None = None, max_visits: int | None = None,
                   mask: FieldMask | None = None) -> str:
        fmt = fmt or self.cfg.format
        n = max_visits or self.cfg.max_visits
        mask = mask or self.cfg.mask
        return f"{self.w}.{fmt.slug}.n{n}.{mask.name.replace(',', '+')}"

    def data_dir(self, split):
        return Path(self.cfg.paths.data_dir) / split

    def patients(self, split):
        return self._file("patients", f"{split}.jsonl")

    def instances(self, split):
        return self._file("cohort", f"{split}.{self.w}.jsonl")

    def cohort_summary(self, split):
        return self._file("cohort", f"{split}.{self.w}.summary.json")

    def prompts(self, split):
        return self._file("prompts", f"{split}.{self.prompt_tag()}.jsonl")

    def vocabulary(self):
        return self._file("features", f"vocabulary.{self.w}.json")

    def vectors(self, split):
        return self._file("features", f"{split}.{self.w}.vectors.txt")

    def model(self, kind):
        return self._file("models", f"{kind}.{self.w}.json")

    def predictions(self, split, predictor):
        tag = self.w if predictor in TREE_PREDICTORS else self.prompt_tag()
        return self._file("predictions", f"{split}.{tag}.{predictor}.jsonl")

    def report(self, name):
        return self._file("reports", name)

    def manifest(self):
        return self._file("run_manifest.json")


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise ValidationError(f"missing input {path} (run `odx {hint}` first)")
    return path


def _dictionary(cfg: PipelineConfig):
    return CodeDictionary.load(cfg.paths.dictionary) if cfg.paths.dictionary else None


def _splits(args) -> list[str]:
    return list(SPLITS) if args.split == "all" else [args.split]


def _dump(payload, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


# --- subcommands -------------------------------------------------------------------

def cmd_synth(cfg, ws, args):
    total = 0
    for split in _splits(args):
        pop = generate_population(cfg.generator, split)
        write_population_tables(pop, ws.data_dir(split))
        total += len(pop.patients)
    return f"synth: wrote {total} patients ({', '.join(_splits(args))}) to {cfg.paths.data_dir}"


def cmd_ingest(cfg, ws, args):
    parts = []
    for split in _splits(args):
        report = IngestReport()
        patients = read_claims_directory(_require(ws.data_dir(split), "synth"), report)
        with open(ws.patients(split), "w", encoding="utf-8") as fh:
            for p in patients:
                fh.write(json.dumps(patient_to_dict(p), sort_keys=True) + "\n")
        _dump(report.to_dict(), ws.report(f"ingest.{split}.json"))
        parts.append(f"{split} {len(patients)} patients/{len(report.rejections)} rejected rows")
    return "ingest: " + ", ".join(parts)


def cmd_cohort(cfg, ws, args):
    parts = []
    for split in _splits(args):
        patients = read_claims_directory(_require(ws.data_dir(split), "synth"))
        summary = TaskSetSummary(cfg.window_days)
        instances = build_task_set(patients, cfg.window_days, summary, split=split)
        write_instances(instances, ws.instances(split))
        _dump(summary.to_dict(), ws.cohort_summary(split))
        parts.append(f"{split} {summary.n_instances} instances "
                     f"({summary.n_case} case / {summary.n_control} control, {len(summary.dropped_ids)} dropped)")
    return f"cohort w={cfg.window_days}: " + ", ".join(parts)


def _instances(ws, split):
    return read_instances(_require(ws.instances(split), f"cohort --split {split}"))


def cmd_render(cfg, ws, args):
    d = _dictionary(cfg)
    parts = []
    for split in _splits(args):
        docs = [render_prompt(i, cfg.format, cfg.max_visits, cfg.mask, d, cfg.paths.templates_dir)
                for i in _instances(ws, split)]
        write_prompts(docs, ws.prompts(split))
        mean = sum(x.token_estimate for x in docs) / max(1, len(docs))
        parts.append(f"{split} {len(docs)} prompts, mean {mean:.1f} tokens")
    return f"render {cfg.format.value}: " + ", ".join(parts)


def cmd_featurize(cfg, ws, args):
    train = _instances(ws, "train")
    vocab = build_vocabulary(train, cfg.min_support, cfg.max_visits)
    vocab.save(ws.vocabulary())
    for split in SPLITS:
        insts = train if split == "train" else _instances(ws, split)
        write_vectors(((i.instance_id, vectorize(i, vocab, cfg.max_visits)) for i in insts), ws.vectors(split))
    return f"featurize: {len(vocab)} features (min_support {cfg.min_support}), vectors for {', '.join(SPLITS)}"


def _load_vectors(ws, split, vocab):
    rows = read_vectors(_require(ws.vectors(split), "featurize"), len(vocab))
    gold = {i.instance_id: i.label for i in _instances(ws, split)}
    ids = [r[0] for r in rows]
    if set(ids) != set(gold):
        raise ValidationError(f"vectors for {split} do not match the cohort instances")
    return ids, [r[1] for r in rows], [gold[i] for i in ids]


def cmd_train(cfg, ws, args):
    vocab = Vocabulary.load(_require(ws.vocabulary(), "featurize"))
    _, Xt, yt = _load_vectors(ws, "train", vocab)
    _, Xv, yv = _load_vectors(ws, "valid", vocab)
    parts = []
    for kind in ([args.kind] if args.kind != "all" else TREE_PREDICTORS):
        model = train_ensemble(kind, Xt, yt, cfg.grids[EnsembleKind(kind)], Xv, yv, cfg.seed,
                               parallelism=cfg.parallelism, vocab_digest=vocab.digest())
        model.save(ws.model(kind))
        f1 = "n/a" if model.validation_f1 is None else f"{100 * model.validation_f1:.2f}"
        parts.append(f"{kind} grid point {model.grid_index} {model.hyperparameters} valid F1 {f1}")
    return "train: " + "; ".join(parts)


def _llm_predictor(cfg, name):
    if name == "llm":
        client = LLMClient(cfg.llm)
    else:
        client = LLMClient(cfg.llm, MockChatServer(MOCK_RESPONDERS[name]()).transport())
    return lambda docs: llm_predict_batch(cfg.llm, docs, client)


def cmd_predict(cfg, ws, args):
    name = args.predictor
    parts = []
    for split in _splits(args):
        if name in TREE_PREDICTORS:
            vocab = Vocabulary.load(_require(ws.vocabulary(), "featurize"))
            model = TreeEnsembleModel.load(_require(ws.model(name), f"train --kind {name}"))
            if model.vocab_digest != vocab.digest():
                raise ValidationError("model was trained on a different vocabulary")
            ids, X, _ = _load_vectors(ws, split, vocab)
            preds = predict_many(model, ids, X)
        else:
            docs = read_prompts(_require(ws.prompts(split), f"render --split {split}"))
            preds = _llm_predictor(cfg, name)(docs)
        write_predictions(preds, ws.predictions(split, name))
        n_pos = sum(p.is_positive for p in preds)
        n_err = sum(p.failed for p in preds)
        parts.append(f"{split} {len(preds)} predictions ({n_pos} overdose, {n_err} errors)")
    return f"predict {name}: " + ", ".join(parts)


def cmd_evaluate(cfg, ws, args):
    split = "test" if args.split == "all" else args.split
    instances = _instances(ws, split)
    gold = {i.instance_id: i.label for i in instances}
    tags = {i.instance_id: i.cohort for i in instances}
    preds = read_predictions(_require(ws.predictions(split, args.predictor), f"predict --predictor {args.predictor}"))
    report = compute_metrics(preds, gold, tags, cfg.error_policy)
    path = ws.report(f"report.{split}.{args.predictor}.json")
    write_report({"split": split, "predictor": args.predictor, "window_days": cfg.window_days,
                  "report": report.to_dict()}, path)
    print(format_table([(args.predictor, report)]))
    sub = report.subgroup_accuracy
    return (f"evaluate {args.predictor} on {split}: F1 "
            f"{'n/a' if report.f1 is None else f'{100 * report.f1:.2f}'}, "
            f"exposed/non-exposed accuracy {_fmt(sub.get('exposed'))}/{_fmt(sub.get('non-exposed'))}, "
            f"{report.n_errors} errors -> {path}")


def _fmt(v):
    return "n/a" if v is None else f"{v:.4f}"


def _driver_predictor(cfg, args):
    if args.predictor in TREE_PREDICTORS:
        raise ValidationError("sweep and ablation drive prompt-based predictors only")
    return _llm_predictor(cfg, args.predictor)


def cmd_sweep(cfg, ws, args):
    split = "test" if args.split == "all" else args.split
    rows = run_visits_sweep(_driver_predictor(cfg, args), _instances(ws, split), args.limits, cfg.format,
                            cfg.mask, _dictionary(cfg), cfg.paths.templates_dir, cfg.error_policy)
    path = ws.report(f"sweep.{split}.{cfg.format.slug}.{args.predictor}.json")
    write_report({"split": split, "predictor": args.predictor, "rows": [r.to_dict() for r in rows]}, path)
    print(table_rows_text(rows, "Max visits"))
    return f"sweep: {len(rows)} rows -> {path}"


def cmd_ablate(cfg, ws, args):
    split = "test" if args.split == "all" else args.split
    rows = run_field_ablation(_driver_predictor(cfg, args), _instances(ws, split), cfg.format, cfg.max_visits,
                              _dictionary(cfg), cfg.paths.templates_dir, cfg.error_policy)
    path = ws.report(f"ablation.{split}.{cfg.format.slug}.{args.predictor}.json")
    write_report({"split": split, "predictor": args.predictor, "rows": [r.to_dict() for r in rows]}, path)
    print(table_rows_text(rows, "Fields"))
    return f"ablate: {len(rows)} rows -> {path}"


def cmd_cost(cfg, ws, args):
    split = "test" if args.split == "all" else args.split
    instances = _instances(ws, split)
    d = _dictionary(cfg)
    formats = list(PromptFormat) if args.all_formats else [cfg.format]
    out = {}
    for fmt in formats:
        docs = [render_prompt(i, fmt, cfg.max_visits, cfg.mask, d, cfg.paths.templates_dir) for i in instances]
        out[fmt.value] = {
            "mean_tokens": round(sum(x.token_estimate for x in docs) / len(docs), 4),
            "usd_per_instance": round(estimate_cost(docs, cfg.cost), 4),
        }
        print(f"{fmt.value:24s} {out[fmt.value]['mean_tokens']:10.2f} tokens  "
              f"{format_usd(out[fmt.value]['usd_per_instance'])}")
    path = ws.report(f"cost.{split}.json")
    write_report({"split": split, "cost_model": vars(cfg.cost), "formats": out}, path)
    return f"cost: {len(out)} formats -> {path}"


def cmd_export_finetune(cfg, ws, args):
    split = "train" if args.split == "all" else args.split
    path = ws._file("finetune", f"{split}.{ws.prompt_tag()}.jsonl")
    n = export_finetune_dataset(_instances(ws, split), cfg.format, cfg.max_visits, cfg.mask,
                                _dictionary(cfg), path, cfg.paths.templates_dir)
    return f"export-finetune: {n} records -> {path}"


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "cohort": cmd_cohort,
    "render": cmd_render,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "cost": cmd_cost,
    "export-finetune": cmd_export_finetune,
}


# --- argument handling ----------------------------------------------------------------

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config (JSON)")
    common.add_argument("--out", help="run directory (overrides paths.output_dir)")
    common.add_argument("--data-dir", help="claims CSV root (overrides paths.data_dir)")
    common.add_argument("--seed", type=int)
    common.add_argument("--window", type=int, help="prediction window in days (7 or 30)")
    common.add_argument("--allow-any-window", action="store_true")
    common.add_argument("--max-visits", type=_positive_int)
    common.add_argument("--format", help="DetailedDescriptive, DetailedCode, SummarizedDescriptive, SummarizedCode")
    common.add_argument("--mask", help="comma list of dx,proc,rx or 'all'")
    common.add_argument("--parallelism", type=_positive_int)
    common.add_argument("--json-errors", action="store_true", help="print errors as JSON on stderr")
    common.add_argument("--split", default="all", choices=["all", *SPLITS])

    parser = argparse.ArgumentParser(prog="odx", description="Overdose prediction pipeline on claims data.")
    parser.add_argument("--version", action="version", version=f"odx {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "synth":
            p.add_argument("--signal", type=float, help="override generator signal_strength")
        if name == "train":
            p.add_argument("--kind", default="all", choices=["all", *TREE_PREDICTORS])
        if name in ("predict", "evaluate", "sweep", "ablate"):
            default = "mock-exposure" if name != "ablate" else "mock-markers"
            p.add_argument("--predictor", default=default, choices=PREDICTORS)
        if name == "sweep":
            p.add_argument("--limits", type=_positive_int, nargs="+", default=[5, 10, 20, 30, 40])
        if name == "cost":
            p.add_argument("--all-formats", action="store_true")
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if args.out:
        data_was_default = Path(cfg.paths.data_dir) == Path(cfg.paths.output_dir) / "data"
        cfg.paths.output_dir = Path(args.out)
        if data_was_default:
            cfg.paths.data_dir = Path(args.out) / "data"
    if args.data_dir:
        cfg.paths.data_dir = Path(args.data_dir)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.generator.seed = args.seed
    if args.window is not None:
        cfg.window_days = args.window
    if args.max_visits is not None:
        cfg.max_visits = args.max_visits
    if args.format:
        cfg.format = parse_format(args.format)
    if args.mask:
        cfg.mask = FieldMask.parse(args.mask)
    if args.parallelism:
        cfg.parallelism = args.parallelism
    if getattr(args, "signal", None) is not None:
        cfg.generator.signal_strength = args.signal
    cfg.validate(allow_any_window=args.allow_any_window)
    return cfg


def _update_manifest(ws: Workspace, cfg: PipelineConfig, command: str, argv, started: float, status: str):
    path = ws.manifest()
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (FileNotFoundError, json.JSONDecodeError):
        manifest = {"runs": {}}
    manifest["odx_version"] = __version__
    manifest["python"] = platform.python_version()
    manifest["tree_backend"] = _accel.backend_name()
    manifest["runs"][command] = {
        "argv": list(argv),
        "config_digest": cfg.digest(),
        "config": cfg.to_dict(),
        "status": status,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "duration_s": round(time.time() - started, 3),
    }
    _dump(manifest, path)


def _fail(args, code: int, exc: BaseException) -> int:
    if getattr(args, "json_errors", False):
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    else:
        print(f"odx: error: {exc}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    started = time.time()
    try:
        cfg = resolve_config(args)
    except VALIDATION_ERRORS + (ValueError,) as exc:
        return _fail(args, 1, exc)
    ws = Workspace(cfg)
    try:
        summary = COMMANDS[args.command](cfg, ws, args)
    except VALIDATION_ERRORS as exc:
        _update_manifest(ws, cfg, args.command, argv, started, "invalid")
        return _fail(args, 1, exc)
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        _update_manifest(ws, cfg, args.command, argv, started, "failed")
        return _fail(args, 2, exc)
    _update_manifest(ws, cfg, args.command, argv, started, "ok")
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
