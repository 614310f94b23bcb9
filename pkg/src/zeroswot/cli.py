"""Command-line surface: data generation, the two training stages,
evaluations and reports, all rooted in a single run directory.

Exit codes: 0 success, 1 validation problem (bad config, missing
prerequisite artifact), 2 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import checks, data, inference, training, vocab
from .autodiff import no_grad
from .checkpoint import save_checkpoint
from .config import (ConfigInvalid, RunConfig, config_to_dict, default_config,
                     load_config)
from .inference import ZeroShotModel
from .pipeline import (build_mt_model, build_speech_stack, load_mt_model,
                       load_speech_stack)

__all__ = ["main", "MissingArtifact"]


class MissingArtifact(Exception):
    """A prerequisite output is absent; the message names the command
    that produces it."""

    def __init__(self, path, command: str):
        super().__init__(f"missing {path}; run `zeroswot {command}` first")
        self.command = command


# ---- plumbing -----------------------------------------------------------

def _json_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_jsonl(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(_json_line(row) + "\n")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _resolve_config(args) -> RunConfig:
    overrides = {}
    for item in args.ablation or []:
        if "=" not in item:
            raise ConfigInvalid(f"--ablation {item!r}: expected KEY=VALUE")
        key, value = item.split("=", 1)
        if "." not in key:            # bare ablation names live on speech
            key = f"speech.{key}"
        overrides[key] = value
    if args.config:
        cfg = load_config(args.config, overrides)
    elif overrides:
        doc = config_to_dict(default_config())
        tmp = Path(args.run_dir) / ".defaults.json"
        tmp.parent.mkdir(parents=True, exist_ok=True)
        _write_json(tmp, doc)
        cfg = load_config(tmp, overrides)
        tmp.unlink()
    else:
        cfg = default_config()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _echo_config(run_dir: Path, cfg: RunConfig) -> None:
    _write_json(run_dir / "config.json", config_to_dict(cfg))


def _require(path: Path, command: str) -> Path:
    if not path.exists():
        raise MissingArtifact(path, command)
    return path


def _load_split(run_dir: Path, name: str):
    path = _require(run_dir / "corpus" / f"{name}.jsonl", "gen-data")
    return data.load_corpus(path)


def _vocabs(spec: data.GeneratorSpec):
    return spec.letter_vocab(), spec.subword_vocab()


def _load_frozen_mt(run_dir: Path, cfg: RunConfig, n_subwords: int):
    path = _require(run_dir / "mt" / "mt.zsc", "train-mt")
    mt = load_mt_model(cfg.model, n_subwords, path)
    mt.freeze()
    return mt


def _stack_kwargs(cfg: RunConfig) -> dict:
    return dict(adapter_mode=cfg.speech.adapter_mode,
                include_separator=cfg.speech.include_separator,
                skip_specials=cfg.speech.no_speech_embedder)


def _load_stack(run_dir: Path, cfg: RunConfig, mt, letters, subwords,
                ckpt_name: str = "speech.zsc"):
    path = _require(run_dir / "speech" / ckpt_name, "train-speech")
    return load_speech_stack(cfg.model, len(letters), mt, subwords.lang_id,
                             subwords.eos_id, path, **_stack_kwargs(cfg))


# ---- commands -----------------------------------------------------------

def cmd_gen_data(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = _resolve_config(args)
    _echo_config(run_dir, cfg)
    total = cfg.train_size + cfg.valid_size + cfg.test_size
    corpus = data.gen_corpus(cfg.generator, total, cfg.seed)
    fractions = (cfg.train_size / total, cfg.valid_size / total,
                 cfg.test_size / total)
    splits = data.split_corpus(corpus, fractions, cfg.seed)
    out = run_dir / "corpus"
    out.mkdir(parents=True, exist_ok=True)
    for name, part in zip(("train", "valid", "test"), splits):
        data.save_corpus(out / f"{name}.jsonl", cfg.generator, part)
    letters, subwords = _vocabs(cfg.generator)
    vocab.save_symbols(out / "letters.txt", letters.symbols)
    vocab.save_symbols(out / "subwords.txt", subwords.subwords)
    print(f"wrote {len(splits[0])}/{len(splits[1])}/{len(splits[2])} "
          f"examples under {out}")
    return 0


def cmd_train_mt(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = _resolve_config(args)
    _echo_config(run_dir, cfg)
    _, train = _load_split(run_dir, "train")
    _, valid = _load_split(run_dir, "valid")
    _, subwords = _vocabs(cfg.generator)
    mt = build_mt_model(cfg.model, len(subwords), cfg.seed)
    result = training.train_toy_mt(data.mt_view(train), data.mt_view(valid),
                                   mt, subwords, cfg.mt)
    out = run_dir / "mt"
    _write_jsonl(out / "metrics.jsonl", result["metrics"])
    _write_jsonl(out / "validation.jsonl", result["validation"])
    save_checkpoint(out / "mt.zsc", mt.parameters())
    final_acc = result["validation"][-1]["teacher_forced_acc"]
    _write_json(out / "summary.json",
                {"stop_reason": result["stop_reason"],
                 "final_teacher_forced_acc": final_acc,
                 "steps_run": result["metrics"][-1]["step"]})
    print(f"train-mt: {result['stop_reason']} "
          f"(teacher-forced acc {final_acc:.4f})")
    return 0


def cmd_train_speech(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = _resolve_config(args)
    _echo_config(run_dir, cfg)
    _, train = _load_split(run_dir, "train")
    _, valid = _load_split(run_dir, "valid")
    letters, subwords = _vocabs(cfg.generator)
    mt = _load_frozen_mt(run_dir, cfg, len(subwords))
    stack = build_speech_stack(cfg.model, len(letters), mt, subwords.lang_id,
                               subwords.eos_id, cfg.seed, **_stack_kwargs(cfg))
    out = run_dir / "speech"
    taps = ((cfg.model.shared_layers,) if cfg.speech.no_aux_wass
            else tuple(cfg.model.taps))
    train_sp = data.speech_view(train)
    valid_sp = data.speech_view(valid)
    if cfg.speech.offline_targets:
        targets = training.extract_text_targets(
            train_sp + valid_sp, mt, subwords, taps, out / "targets")
    else:
        targets = training.OnlineTargets(mt, subwords, taps)
    result = training.train_speech_encoder(
        train_sp, valid_sp, stack, mt, letters, subwords, targets,
        cfg.speech, snapshot_dir=out / "snapshots")
    _write_jsonl(out / "metrics.jsonl", result["metrics"])
    _write_jsonl(out / "validation.jsonl", result["validation"])
    save_checkpoint(out / "speech.zsc", stack.parameters())
    _write_json(out / "summary.json",
                {"stop_reason": result["stop_reason"],
                 "best_step": result["best_step"],
                 "best_val_wass": result["best_val"],
                 "snapshots": result["snapshots"]})
    print(f"train-speech: {result['stop_reason']} "
          f"(best val Wasserstein {result['best_val']:.4f} "
          f"at step {result['best_step']})")
    return 0


def _eval_stack(run_dir: Path, cfg: RunConfig, mt, letters, subwords):
    """The speech stack to evaluate: averaged over the k best snapshots
    when eval.average_k > 0, else the best single checkpoint."""
    if cfg.eval.average_k > 0:
        summary_path = _require(run_dir / "speech" / "summary.json", "train-speech")
        with open(summary_path, encoding="utf-8") as fh:
            snaps = json.load(fh)["snapshots"]
        if snaps:
            state = training.average_checkpoints(
                [s["path"] for s in snaps], k=cfg.eval.average_k,
                scores=[s["val_wass"] for s in snaps])
            avg_path = run_dir / "speech" / "averaged.zsc"
            save_checkpoint(avg_path, state)
            return _load_stack(run_dir, cfg, mt, letters, subwords, "averaged.zsc")
    return _load_stack(run_dir, cfg, mt, letters, subwords)


def cmd_eval_st(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = _resolve_config(args)
    _echo_config(run_dir, cfg)
    _, test = _load_split(run_dir, "test")
    letters, subwords = _vocabs(cfg.generator)
    mt = _load_frozen_mt(run_dir, cfg, len(subwords))
    stack = _eval_stack(run_dir, cfg, mt, letters, subwords)
    model = ZeroShotModel(stack, mt)
    rows = []
    hyps = []
    accs = []
    for ex in test:
        try:
            hyp = inference.translate_speech(model, ex.frames, subwords,
                                             cfg.eval.beam_size, cfg.eval.max_len)
        except Exception:
            hyp = []
        ref = list(ex.translation_ids)
        acc = inference.token_accuracy(hyp, ref)
        accs.append(acc)
        hyps.append(vocab.detokenize(hyp, subwords))
        rows.append({"id": ex.id, "hyp_ids": hyp, "ref_ids": ref,
                     "token_accuracy": acc})
    out = run_dir / "eval"
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "st_hyps.txt", "w", encoding="utf-8") as fh:
        for line in hyps:
            fh.write(line + "\n")
    report = {"n": len(test), "beam_size": cfg.eval.beam_size,
              "token_accuracy": float(np.mean(accs)) if accs else None,
              "per_example": rows}
    _write_json(out / "st_report.json", report)
    print(f"eval-st: token accuracy {report['token_accuracy']:.4f} "
          f"on {report['n']} examples")
    return 0


def cmd_eval_retrieval(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = _resolve_config(args)
    _echo_config(run_dir, cfg)
    _, test = _load_split(run_dir, "test")
    letters, subwords = _vocabs(cfg.generator)
    mt = _load_frozen_mt(run_dir, cfg, len(subwords))
    stack = _eval_stack(run_dir, cfg, mt, letters, subwords)
    model = ZeroShotModel(stack, mt)
    subset = test[:cfg.eval.retrieval_examples]
    speech_states, text_states, kept, failed = [], [], [], []
    with no_grad():
        for ex in subset:
            try:
                s = inference.zero_shot_encode(model, ex.frames).data
            except Exception:
                failed.append(ex.id)
                continue
            t = mt.text.encode(vocab.text_to_ids(ex.transcription, subwords)).data
            speech_states.append(s)
            text_states.append(t)
            kept.append(ex.id)
    reports = {}
    for metric in ("cosine_meanpool", "wasserstein"):
        rep = inference.retrieve(speech_states, text_states, metric, cfg.speech.ot)
        reports[metric] = {"accuracy": rep.accuracy, "n": rep.n,
                           "mismatches": [[kept[q], kept[p]]
                                          for q, p in rep.mismatches]}
    report = {"failed_speech_ids": failed, **reports}
    _write_json(run_dir / "eval" / "retrieval_report.json", report)
    print("eval-retrieval: " + ", ".join(
        f"{m} {reports[m]['accuracy']:.4f}" for m in reports))
    return 0


def cmd_eval_lengths(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = _resolve_config(args)
    _echo_config(run_dir, cfg)
    _, test = _load_split(run_dir, "test")
    letters, subwords = _vocabs(cfg.generator)
    mt = _load_frozen_mt(run_dir, cfg, len(subwords))
    stack = _eval_stack(run_dir, cfg, mt, letters, subwords)
    model = ZeroShotModel(stack, mt)
    report = inference.length_report(test, model, subwords)
    _write_json(run_dir / "eval" / "lengths_report.json", report)
    mean_r = report["mean_ratio"]
    print(f"eval-lengths: mean |dlen| {report['mean_abs_diff']}, "
          f"mean ratio {mean_r}")
    return 0


def cmd_grad_check(args) -> int:
    results = checks.run_all(seeds=args.seeds)
    width = max(len(n) for n in results)
    ok = True
    for name, err in results.items():
        status = "ok" if err <= checks.THRESHOLD else "FAIL"
        ok = ok and err <= checks.THRESHOLD
        print(f"{name:<{width}}  max rel err {err:.3e}  {status}")
    if not ok:
        print(f"gradient checks exceeded {checks.THRESHOLD:g}", file=sys.stderr)
        return 2
    return 0


def cmd_average_ckpt(args) -> int:
    run_dir = Path(args.run_dir)
    summary_path = _require(run_dir / "speech" / "summary.json", "train-speech")
    with open(summary_path, encoding="utf-8") as fh:
        snaps = json.load(fh)["snapshots"]
    if not snaps:
        raise MissingArtifact(run_dir / "speech" / "snapshots", "train-speech")
    state = training.average_checkpoints([s["path"] for s in snaps],
                                         k=args.k,
                                         scores=[s["val_wass"] for s in snaps])
    out = Path(args.out) if args.out else run_dir / "speech" / "averaged.zsc"
    save_checkpoint(out, state)
    print(f"averaged {min(args.k, len(snaps))} checkpoints into {out}")
    return 0


# ---- plots --------------------------------------------------------------

def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join("" if v is None else str(v) for v in row) + "\n")


def _plot_lines(path: Path, steps, series: dict, xlabel: str, ylabel: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, ys in series.items():
        xs = [s for s, y in zip(steps, ys) if y is not None]
        vs = [y for y in ys if y is not None]
        ax.plot(xs, vs, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if series:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def _read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def cmd_report_plots(args) -> int:
    run_dir = Path(args.run_dir)
    plots = run_dir / "plots"
    plots.mkdir(parents=True, exist_ok=True)

    mt_rows = _read_jsonl(run_dir / "mt" / "metrics.jsonl")
    _write_csv(plots / "mt_loss.csv", ["step", "loss"],
               [(r["step"], r["loss"]) for r in mt_rows])
    _plot_lines(plots / "mt_loss.png", [r["step"] for r in mt_rows],
                {"loss": [r["loss"] for r in mt_rows]} if mt_rows else {},
                "step", "cross entropy")

    sp_rows = _read_jsonl(run_dir / "speech" / "metrics.jsonl")
    layers = sorted({l for r in sp_rows for l in r["loss_wass_per_layer"]},
                    key=int)
    header = (["step", "loss_total", "loss_ctc"]
              + [f"loss_wass_{l}" for l in layers])
    _write_csv(plots / "speech_loss.csv", header,
               [[r["step"], r["loss_total"], r["loss_ctc"]]
                + [r["loss_wass_per_layer"][l] for l in layers]
                for r in sp_rows])
    series = {}
    if sp_rows:
        series = {"total": [r["loss_total"] for r in sp_rows],
                  "ctc": [r["loss_ctc"] for r in sp_rows]}
        for l in layers:
            series[f"wass_{l}"] = [r["loss_wass_per_layer"][l] for r in sp_rows]
    _plot_lines(plots / "speech_loss.png", [r["step"] for r in sp_rows],
                series, "step", "loss")

    lengths_path = run_dir / "eval" / "lengths_report.json"
    ratios = []
    if lengths_path.exists():
        with open(lengths_path, encoding="utf-8") as fh:
            ratios = [r["ratio"] for r in json.load(fh)["per_example"]]
    edges = np.linspace(0.0, 4.0, 21)
    counts, _ = np.histogram(ratios, bins=edges)
    _write_csv(plots / "length_ratio_hist.csv", ["bin_left", "bin_right", "count"],
               [(edges[i], edges[i + 1], int(counts[i]))
                for i in range(len(counts))])
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge")
    ax.set_xlabel("length ratio n'/m")
    ax.set_ylabel("examples")
    fig.tight_layout()
    fig.savefig(plots / "length_ratio_hist.png", dpi=100)
    plt.close(fig)

    print(f"wrote plots under {plots}")
    return 0


# ---- argument parsing ---------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Exits with code 1 on bad arguments (validation failure)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _formatter(prog):
    return argparse.HelpFormatter(prog, max_help_position=30, width=96)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="zeroswot",
        formatter_class=_formatter,
        description=("Zero-shot speech translation on a synthetic corpus: "
                     "align a speech encoder to a frozen text encoder via "
                     "CTC compression and optimal transport, then splice it "
                     "into the translation model."))
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, formatter_class=_formatter)
        p.add_argument("--run-dir", required=True,
                       help="directory holding all artifacts of this run")
        p.add_argument("--config", default=None,
                       help="JSON run configuration (defaults when omitted)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--ablation", action="append", metavar="KEY=VALUE",
                       help="config override, e.g. adapter_mode=char_only "
                            "(bare keys target the speech section; dotted "
                            "keys address any field)")
        p.set_defaults(fn=fn)
        return p

    add("gen-data", cmd_gen_data,
        "generate the synthetic corpus and vocabulary files")
    add("train-mt", cmd_train_mt,
        "train the toy translation model on text pairs")
    add("train-speech", cmd_train_speech,
        "align the speech encoder to the frozen text branch")
    add("eval-st", cmd_eval_st,
        "zero-shot speech translation on the test split")
    add("eval-retrieval", cmd_eval_retrieval,
        "speech-to-text retrieval accuracy on the test split")
    add("eval-lengths", cmd_eval_lengths,
        "compression length-gap report on the test split")

    g = sub.add_parser("grad-check", help="finite-difference gradient audit",
                       formatter_class=_formatter)
    g.add_argument("--seeds", type=int, default=20,
                   help="random instances per operation (default 20)")
    g.set_defaults(fn=cmd_grad_check, lock=False)

    a = sub.add_parser("average-ckpt",
                       help="average the k best speech checkpoints",
                       formatter_class=_formatter)
    a.add_argument("--run-dir", required=True,
                   help="directory holding all artifacts of this run")
    a.add_argument("--k", type=int, default=3,
                   help="how many best checkpoints to average (default 3)")
    a.add_argument("--out", default=None,
                   help="output checkpoint path (default speech/averaged.zsc)")
    a.set_defaults(fn=cmd_average_ckpt)

    r = sub.add_parser("report-plots",
                       help="write loss curves and length histograms as CSV/PNG",
                       formatter_class=_formatter)
    r.add_argument("--run-dir", required=True,
                   help="directory holding all artifacts of this run")
    r.set_defaults(fn=cmd_report_plots)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "lock", True) and getattr(args, "run_dir", None):
            run_dir = Path(args.run_dir)
            run_dir.mkdir(parents=True, exist_ok=True)
            lock = FileLock(run_dir / ".lock")
            try:
                with lock.acquire(timeout=5):
                    return args.fn(args)
            except Timeout:
                print(f"error: {run_dir} is locked by another process",
                      file=sys.stderr)
                return 2
        return args.fn(args)
    except (ConfigInvalid, MissingArtifact, data.BadFractions) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
