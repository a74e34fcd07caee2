"""Command-line pipeline: ``scnowcast <command> [--config F] [--seed S] [--out D] [--threads N]``.

Every command writes its artifacts under the output directory, prints a short
delimited report to stdout and renders matplotlib figures next to the CSVs.
Exit status is 0 only when the command's own checks pass; files written by a
failed command are removed.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import verify
from .config import ConfigError, RunConfig, dump_config, load_config
from .cubegen import CubeBank, N_CHANNELS, eligible_times, split
from .gridstore import (
    EventSeries,
    FieldFormatError,
    event_seeds,
    label_fraction,
    read_event,
    synth_event,
    write_event,
)
from .net import gradcheck as gc
from .net.io import ModelFormatError, load_model, save_model
from .net.model import ScnModel
from .net.train import HISTORY_COLUMNS, TrainHistory, evaluate, predict_proba, train

log = logging.getLogger("scnowcast")

MIN_FRAMES = 4
KFOLD_COLUMNS = ("metric", "mean", "sigma")
GEN_COLUMNS = ("event", "frames", "samples", "positives", "base_rate")


class CommandError(RuntimeError):
    """A check failed; the message is reported and the exit status is nonzero."""


class Outputs:
    """Records created paths so a failing command can remove them."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.paths: list[Path] = []

    def path(self, *parts) -> Path:
        return self.file(self.root.joinpath(*parts))

    def file(self, p: Path) -> Path:
        p = Path(p)
        self._mkdir(p.parent)
        if not p.exists():
            self.paths.append(p)
        return p

    def dir(self, p: Path) -> Path:
        self._mkdir(p)
        return p

    def _mkdir(self, d: Path) -> None:
        missing = []
        while not d.exists():
            missing.append(d)
            d = d.parent
        for m in reversed(missing):
            m.mkdir()
            self.paths.append(m)

    def discard(self) -> None:
        for p in reversed(self.paths):
            if p.is_dir():
                shutil.rmtree(p, ignore_errors=True)
            elif p.exists():
                p.unlink()


def _emit(*fields) -> None:
    print(",".join(str(f) for f in fields))


# ---------------------------------------------------------------------------
# data access


def _load_events(cfg: RunConfig, names) -> list[EventSeries]:
    out = []
    for name in names:
        d = cfg.events_dir / name
        if not (d / "manifest.txt").exists():
            raise CommandError(f"missing event data: {d}")
        s = read_event(d)
        if s.grid != cfg.grid:
            raise CommandError(f"event {name}: grid {s.grid} does not match configured {cfg.grid}")
        out.append(s)
    return out


def _check_model(model: ScnModel, series: list[EventSeries]) -> None:
    for s in series:
        if model.config.slices != s.grid.levels:
            raise CommandError(f"model expects {model.config.slices} levels, event "
                               f"{s.event_id} has {s.grid.levels}")
    if model.config.channels != N_CHANNELS:
        raise CommandError(f"model expects {model.config.channels} channels, data has {N_CHANNELS}")


def _read_model(cfg: RunConfig) -> ScnModel:
    if not cfg.model_file.exists():
        raise CommandError(f"missing model file: {cfg.model_file}")
    return load_model(cfg.model_file)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(cfg: RunConfig, out: Outputs) -> int:
    if cfg.synth.n_frames < MIN_FRAMES:
        raise CommandError(f"synth.n_frames = {cfg.synth.n_frames}; samples need >= {MIN_FRAMES} frames")
    rows = []
    for name, seed in zip(cfg.event_names(), event_seeds(cfg.synth.seed, cfg.n_events)):
        series = synth_event(cfg.grid, replace(cfg.synth, seed=seed), event_id=name)
        d = cfg.events_dir / name
        out.dir(d)
        out.paths.extend(write_event(series, d))
        n = len(eligible_times(series)) * cfg.grid.n_cells
        rate = label_fraction(series)
        rows.append([name, len(series), n, round(rate * n), f"{rate:.6f}"])
    verify.write_csv(out.path("gen_summary.csv"), GEN_COLUMNS, rows)
    _emit(*GEN_COLUMNS)
    for r in rows:
        _emit(*r)
    return 0


def _write_history(out: Outputs, history: TrainHistory, stem: str) -> None:
    rows = history.rows()
    verify.write_csv(out.path(f"{stem}.csv"), HISTORY_COLUMNS, rows)
    if history.records:
        from .plotting import plot_history

        plot_history([(r.iteration, r.loss, r.csi, r.pod, r.far) for r in history.records],
                     out.path(f"{stem}.png"))


def _save_checked(model: ScnModel, path: Path) -> None:
    save_model(model, path)
    back = load_model(path)
    if not all(np.array_equal(a, b) for a, b in zip(model.parameters(), back.parameters())):
        raise CommandError(f"model file {path} failed the read-back check")


def cmd_train(cfg: RunConfig, out: Outputs) -> int:
    if cfg.split_mode == "holdout":
        plan = cfg.holdout_plan()
        tr_series = _load_events(cfg, plan.train_events)
        te_series = _load_events(cfg, plan.test_events)
        train_set, test_set = CubeBank(tr_series), CubeBank(te_series)
        log.info("holdout: %d train / %d held-out samples", len(train_set), len(test_set))
        model, history = train(train_set, test_set, cfg.net, threshold=cfg.threshold)
        _save_checked(model, out.file(cfg.model_file))
        _write_history(out, history, "history")
        _emit(*HISTORY_COLUMNS)
        for r in history.rows():
            _emit(*r)
        return 0

    bank = CubeBank(_load_events(cfg, cfg.event_names()))
    folds = split(bank, cfg.kfold_plan())
    scores = {"csi": [], "pod": [], "far": [], "auc": []}
    fold_rows = []
    for i, (tr, te) in enumerate(folds):
        log.info("fold %d/%d: %d train / %d test", i + 1, len(folds), len(tr), len(te))
        model, history = train(tr, te, cfg.net, threshold=cfg.threshold)
        _save_checked(model, out.path(f"model_fold{i}.scn"))
        _write_history(out, history, f"history_fold{i}")
        _, table, p1 = evaluate(model, te, cfg.threshold)
        auc = _auc(p1, te.labels)
        vals = {"csi": verify.csi(table), "pod": verify.pod(table), "far": verify.far(table), "auc": auc}
        for k, v in vals.items():
            if v is not None:
                scores[k].append(v)
        fold_rows.append(verify.scores_row(f"fold{i}", table, auc))
    verify.write_csv(out.path("kfold_folds.csv"), verify.SCORES_COLUMNS, fold_rows)
    summary = []
    for k, v in scores.items():
        if v:
            summary.append([k, f"{np.mean(v):.6f}", f"{np.std(v, ddof=1) if len(v) > 1 else 0.0:.6f}"])
        else:
            summary.append([k, "undefined", "undefined"])
    verify.write_csv(out.path("kfold_summary.csv"), KFOLD_COLUMNS, summary)
    _emit(*KFOLD_COLUMNS)
    for r in summary:
        _emit(*r)
    return 0


def _auc(p1, labels):
    y = np.asarray(labels)
    if y.min() == y.max():
        return None
    return verify.roc(p1, y).auc


def cmd_eval(cfg: RunConfig, out: Outputs, events=None) -> int:
    model = _read_model(cfg)
    names = list(events) if events else list(cfg.holdout_plan().test_events)
    series = _load_events(cfg, names)
    _check_model(model, series)
    from .plotting import plot_roc, plot_skill_series

    score_rows, roc_rows, skill_rows, curves = [], [], [], {}
    all_p, all_y, tables = [], [], []
    for s in series:
        bank = CubeBank([s])
        p1 = predict_proba(model, bank)
        y = bank.labels
        pred = (p1 > cfg.threshold).astype(int)
        table = verify.contingency(pred, y)
        tables.append(table)
        auc = _auc(p1, y)
        if auc is not None:
            curves[s.event_id] = verify.roc(p1, y)
            roc_rows += verify.roc_rows(s.event_id, curves[s.event_id])
        score_rows.append(verify.scores_row(s.event_id, table, auc))
        times = bank.issue_times
        per_time = [(t, verify.contingency(pred[times == t], y[times == t])) for t in np.unique(times)]
        series_pts = verify.skill_series(per_time)
        skill_rows += verify.skill_rows(s.event_id, series_pts)
        plot_skill_series(series_pts, out.path(f"skill_{s.event_id}.png"), title=s.event_id)
        all_p.append(p1)
        all_y.append(y)
    pooled = verify.aggregate(tables)
    p_all, y_all = np.concatenate(all_p), np.concatenate(all_y)
    auc_all = _auc(p_all, y_all)
    score_rows.append(verify.scores_row("all", pooled, auc_all))
    if auc_all is not None and len(series) > 1:
        curves["all"] = verify.roc(p_all, y_all)
        roc_rows += verify.roc_rows("all", curves["all"])

    verify.write_csv(out.path("scores.csv"), verify.SCORES_COLUMNS, score_rows)
    verify.write_csv(out.path("roc.csv"), verify.ROC_COLUMNS, roc_rows)
    verify.write_csv(out.path("skill.csv"), verify.SKILL_COLUMNS, skill_rows)
    if curves:
        plot_roc(curves, out.path("roc.png"))
    _emit(*verify.SCORES_COLUMNS)
    for r in score_rows:
        _emit(*r)
    return 0


def cmd_predict_grid(cfg: RunConfig, out: Outputs, event: str, issue_time: int) -> int:
    model = _read_model(cfg)
    (s,) = _load_events(cfg, [event])
    _check_model(model, [s])
    stamps = s.timestamps
    if issue_time not in stamps:
        raise CommandError(f"event {event} has no frame at time {issue_time}")
    t = stamps.index(issue_time)
    if t not in eligible_times(s):
        raise CommandError(f"issue time {issue_time} is not eligible: needs the previous frame "
                           f"and the frame two steps ahead")
    bank = CubeBank([s])
    bank = bank.subset(np.flatnonzero(bank.time_idx == t))
    p1 = predict_proba(model, bank)
    shape = (s.grid.cell_rows, s.grid.cell_cols)
    pred = (p1 > cfg.threshold).astype(int).reshape(shape)
    truth = bank.labels.reshape(shape)
    grid = verify.overlay(pred, truth)
    if grid.table() != verify.contingency(pred.ravel(), truth.ravel()):
        raise CommandError("overlay histogram disagrees with the contingency table")

    stem = f"overlay_{event}_{issue_time}"
    grid.write_csv(out.path(f"{stem}.csv"))
    grid.write_pgm(out.path(f"{stem}.pgm"))
    verify.write_csv(out.path(f"prob_{event}_{issue_time}.csv"),
                     [f"c{j}" for j in range(shape[1])],
                     [[f"{v:.6f}" for v in row] for row in p1.reshape(shape)])
    from .plotting import plot_overlay

    plot_overlay(grid, out.path(f"{stem}.png"), title=f"{event} t={issue_time}")
    _emit("class", "count")
    for k, v in grid.histogram().items():
        _emit(k, v)
    return 0


def cmd_gradcheck(cfg: RunConfig, out: Outputs, seed: int) -> int:
    results = gc.run_gradcheck(seed)
    rows = [[r["name"], r["n_params"], f"{r['max_rel_error']:.3e}", "pass" if r["passed"] else "fail"]
            for r in results]
    header = ("case", "n_params", "max_rel_error", "status")
    verify.write_csv(out.path("gradcheck.csv"), header, rows)
    _emit(*header)
    for r in rows:
        _emit(*r)
    return 0 if all(r["passed"] for r in results) else 1


def cmd_fuse_demo(cfg: RunConfig, out: Outputs, seed: int) -> int:
    r = gc.run_fuse_demo(seed)
    rows = [["max_abs_diff", f"{r['max_abs_diff']:.3e}"], ["trials", r["trials"]],
            ["mac_savings", f"{r['savings']:.4f}"], ["status", "pass" if r["passed"] else "fail"]]
    verify.write_csv(out.path("fuse_demo.csv"), ("quantity", "value"), rows)
    _emit("quantity", "value")
    for row in rows:
        _emit(*row)
    return 0 if r["passed"] else 1


# ---------------------------------------------------------------------------
# entry point


def _global_flags(default) -> argparse.ArgumentParser:
    g = argparse.ArgumentParser(add_help=False, argument_default=default)
    g.add_argument("--config", type=Path, help="flat key = value run configuration")
    g.add_argument("--seed", type=int, help="override every seed in the configuration")
    g.add_argument("--out", type=Path, help="output directory (overrides paths.out_dir)")
    g.add_argument("--threads", type=int, help="BLAS thread limit")
    g.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    return g


def build_parser() -> argparse.ArgumentParser:
    # flags work before or after the command; SUPPRESS stops the subcommand
    # parser from resetting values given before it
    common = _global_flags(argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="scnowcast", description=__doc__.splitlines()[0],
                                parents=[_global_flags(None)])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="write synthetic events")
    sub.add_parser("train", parents=[common], help="train (holdout or k-fold)")
    ev = sub.add_parser("eval", parents=[common], help="score a model on held-out events")
    ev.add_argument("--events", help="comma-separated event ids (default: held-out events)")
    pg = sub.add_parser("predict-grid", parents=[common], help="forecast overlay for one issue time")
    pg.add_argument("--event", required=True)
    pg.add_argument("--time", type=int, required=True, help="issue timestamp in seconds")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    sub.add_parser("fuse-demo", parents=[common], help="conv+pool fusion check and savings")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = replace(cfg, threads=args.threads)
    cfg.validate()
    return cfg


def _threads(n):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Outputs(cfg.out_dir)
    out.dir(cfg.out_dir)
    seed = cfg.net.seed
    commands = {
        "gen": lambda: cmd_gen(cfg, out),
        "train": lambda: cmd_train(cfg, out),
        "eval": lambda: cmd_eval(cfg, out, args.events.split(",") if args.events else None),
        "predict-grid": lambda: cmd_predict_grid(cfg, out, args.event, args.time),
        "gradcheck": lambda: cmd_gradcheck(cfg, out, seed),
        "fuse-demo": lambda: cmd_fuse_demo(cfg, out, seed),
    }
    try:
        with _threads(cfg.threads):
            out.path("run.cfg").write_text(dump_config(cfg))
            status = commands[args.command]()
    except (CommandError, ConfigError, FieldFormatError, ModelFormatError, ValueError, OSError) as exc:
        out.discard()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BaseException:
        out.discard()
        raise
    if status != 0:
        print(f"{args.command}: checks failed", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
