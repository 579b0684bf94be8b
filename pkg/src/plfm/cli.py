"""``plfm`` command line: dataset, train, infer, evaluate, report.

Exit codes: 0 ok, 1 usage, 2 data error, 3 incompatible models. Failures
print one ``error\t<kind>\t<message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INCOMPATIBLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class Incompatible(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- helpers

def _config(args):
    overrides = {
        "run": {"seed": getattr(args, "seed", None)},
        "data": {"size": getattr(args, "size", None)},
        "head": {"classes": getattr(args, "classes", None)},
        "eval": {"csc_radius": getattr(args, "csc_radius", None),
                 "degrees": True if getattr(args, "degrees", False) else None},
    }
    return load_config(getattr(args, "config", None), overrides)


def _index(root, need_split=False):
    from .dataset import load_index
    index = load_index(root)
    if not index.entries:
        raise DataError(f"no frames under {root}")
    if need_split and index.split_labels is None:
        raise DataError(f"{root}: no split.tsv (run `plfm dataset split` first)")
    return index


def _series(index, rois):
    from .pipeline import load_series
    return [load_series(index.root, index, r) for r in rois]


class _Log:
    """Append-only TSV log; the header is written once."""

    def __init__(self, path, columns):
        self.path, self.columns = Path(path), list(columns)
        if not self.path.exists() or self.path.stat().st_size == 0:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("\t".join(self.columns) + "\n", encoding="utf-8")

    def write(self, row: dict):
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write("\t".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                               for c in self.columns) + "\n")


# ---------------------------------------------------------------- dataset

def cmd_dataset_synth(args, cfg):
    from .dataset import DatasetIndex, SceneConfig, synth_scene, write_index, write_series

    out = Path(args.out)
    seed, size = cfg.get("run", "seed"), cfg.get("data", "size")
    lo, hi = cfg.get("data", "coverage_min"), cfg.get("data", "coverage_max")
    n_rois = args.rois if args.rois is not None else cfg.get("data", "rois")
    if n_rois < 1:
        raise UsageError("--rois must be >= 1")
    entries = []
    for i in range(n_rois):
        cov = np.random.default_rng([seed, i, 1]).uniform(lo, hi, size=4)
        scene = SceneConfig(size=size, coverage=list(cov), looks=cfg.get("data", "looks"),
                            thickness=cfg.get("data", "thickness"))
        try:
            series = synth_scene(np.random.SeedSequence([seed, i]).generate_state(1)[0], scene,
                                 f"roi{i:03d}")
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        entries += write_series(out, series)
    write_index(DatasetIndex(out, entries))
    print(f"wrote {n_rois} rois ({len(entries)} frames) to {out}")


def cmd_dataset_split(args, cfg):
    from .dataset import split_dataset, write_split

    index = _index(args.root)
    sc = cfg["split"]
    iters = args.iters if args.iters is not None else sc["iterations"]
    n = args.n if args.n is not None else sc["n"]
    bins = args.bins if args.bins is not None else sc["bins"]
    try:
        res = split_dataset(index, iters, n, bins, cfg.get("run", "seed"),
                            val_fraction=sc["val_fraction"], test_fraction=sc["test_fraction"],
                            normalized=sc["normalized"])
    except ValueError as exc:
        raise DataError(str(exc)) from None
    write_split(args.root, res.labels())
    with open(Path(args.root) / "split_trace.tsv", "w", encoding="utf-8") as fh:
        fh.write("stage\titeration\td\n")
        for stage, trace in (("val", res.trace), ("test", res.test_trace)):
            for it, d in enumerate(trace):
                fh.write(f"{stage}\t{it}\t{float(d)!r}\n")
    print(f"d={res.dissimilarity!r}\ttrain={len(res.train_ids)}\tval={len(res.val_ids)}"
          f"\ttest={len(res.test_ids)}")


def cmd_dataset_index(args, cfg):
    from .dataset import scan_index, write_index

    if not Path(args.root).is_dir():
        raise DataError(f"dataset root {args.root} is not a directory")
    index = scan_index(args.root)
    path = write_index(index)
    print(f"indexed {len(index.entries)} frames in {len(index.rois())} rois -> {path}")


# ---------------------------------------------------------------- train

def _resume(out, kind, resume):
    from .checkpoint import load_checkpoint
    if not resume or not (Path(out) / "meta.json").exists():
        return None
    ck = load_checkpoint(out)
    if ck.kind != kind:
        raise Incompatible(f"{out} holds a {ck.kind} checkpoint, not {kind}")
    return ck


def _train_convlstm(args, cfg, index):
    from .checkpoint import convlstm_config, save_convlstm
    from .convlstm import ConvLSTMConfig, ConvLSTMNet, HuberConfig, TrainConfig, train_convlstm
    from .pipeline import convlstm_pairs

    c = cfg["convlstm"]
    n = cfg.get("data", "n_frames")
    train = convlstm_pairs(_series(index, index.rois_in("train")), n, c["augment"])
    val = convlstm_pairs(_series(index, index.rois_in("val")), n) or None
    if not train:
        raise DataError("no training sequences (series shorter than n + 1?)")
    size = train[0][1].shape[:2]
    tc = TrainConfig(lr=c["lr"], batch_size=c["batch_size"],
                     max_epochs=args.max_epochs if args.max_epochs is not None else c["max_epochs"],
                     plateau_patience=c["plateau_patience"], early_stop_patience=c["early_stop_patience"],
                     huber=HuberConfig(c["delta"], c["batch_size"]), seed=cfg.get("run", "seed"))
    ck = _resume(args.out, "convlstm", args.resume)
    model, start, opt_state = None, 0, None
    if ck is not None:
        mc = convlstm_config(ck.config)
        if tuple(mc.size) != tuple(size) or mc.n_frames != n:
            raise Incompatible(f"checkpoint dims {mc.size}x{mc.n_frames} vs data {size}x{n}")
        model = ConvLSTMNet(mc)
        model.load_state_dict(ck.state)
        start, opt_state = ck.meta.get("epochs_done", 0), ck.optimizer
    mc = ConvLSTMConfig(size=tuple(size), hidden=c["hidden"], kernel_size=c["kernel_size"],
                        n_frames=n, peephole=c["peephole"], pool=c["pool"])
    log = _Log(Path(args.out) / "log.tsv", ("epoch", "train_loss", "val_loss", "lr"))
    state = {}

    def on_epoch(row, m, opt):
        log.write(row)
        state["opt"] = opt

    model, hist = train_convlstm(train, tc, val, model, mc, on_epoch, start, opt_state)
    done = start + len(hist)
    digest = save_convlstm(args.out, model, {"epochs_done": done, "seed": tc.seed, "train": asdict(tc)},
                           state["opt"].state_dict() if "opt" in state else opt_state)
    return digest, hist


def _train_cgan(args, cfg, index):
    from .cgan import CGANConfig, DiscriminatorConfig, GeneratorConfig, build_models, train_cgan
    from .checkpoint import cgan_config, save_cgan
    from .pipeline import cgan_pairs

    c = cfg["cgan"]
    pairs = cgan_pairs(_series(index, index.rois_in("train")), c["augment"])
    size = pairs[0][1].shape[0]
    steps = c["steps"]
    if args.max_epochs is not None:
        steps = args.max_epochs * math.ceil(len(pairs) / c["batch_size"])
    if args.steps is not None:
        steps = args.steps
    gc = GeneratorConfig(base_filters=c["base_filters"])
    dc = DiscriminatorConfig(base_filters=c["base_filters"], gammas=c["gammas"], lam=c["lam"])
    gan = CGANConfig(size=size, generator=gc, discriminator=dc, lr=c["lr"], beta1=c["beta1"],
                     batch_size=c["batch_size"], steps=steps, adv_weight=c["adv_weight"],
                     looks=cfg.get("data", "looks"), seed=cfg.get("run", "seed"))
    ck = _resume(args.out, "cgan", args.resume)
    models, start, opts = None, 0, None
    if ck is not None:
        old = cgan_config(ck.config)
        if old.size != size:
            raise Incompatible(f"checkpoint size {old.size} vs data {size}")
        gan = CGANConfig(**{**old.__dict__, "steps": steps})
        models = build_models(gan)
        for prefix, m in zip(("G", "D1", "D2"), models):
            m.load_state_dict({k[len(prefix) + 1:]: v for k, v in ck.state.items()
                               if k.startswith(prefix + ".")})
        start = ck.meta.get("steps_done", 0)
        if ck.optimizer is not None:
            import torch
            betas = (gan.beta1, 0.999)
            opts = (torch.optim.Adam(models[0].parameters(), lr=gan.lr, betas=betas),
                    torch.optim.Adam([*models[1].parameters(), *models[2].parameters()],
                                     lr=gan.lr, betas=betas))
            opts[0].load_state_dict(ck.optimizer["g"])
            opts[1].load_state_dict(ck.optimizer["d"])
    log = _Log(Path(args.out) / "log.tsv", ("step", "d1_loss", "d2_loss", "g_adv_loss", "g_l1_loss", "g_total"))
    state = {}

    def on_step(row, _models, optimizers):
        log.write(row)
        state["opts"] = optimizers

    G, D1, D2, hist = train_cgan(pairs, gan, models, on_step, start, opts)
    opt_state = None
    if "opts" in state:
        opt_state = {"g": state["opts"][0].state_dict(), "d": state["opts"][1].state_dict()}
    digest = save_cgan(args.out, gan, G, D1, D2, {"steps_done": start + len(hist), "seed": gan.seed},
                       opt_state)
    return digest, hist


def _branch_models(args):
    from .checkpoint import CheckpointError, load_cgan, load_convlstm
    if not args.convlstm or not args.cgan:
        raise UsageError("--convlstm and --cgan checkpoints are required")
    try:
        cl, ck1 = load_convlstm(args.convlstm)
        _, (G, _, _), ck2 = load_cgan(args.cgan)
    except CheckpointError as exc:
        raise Incompatible(str(exc)) from None
    return cl, G, ck1, ck2


def _train_head(args, cfg, index):
    from .checkpoint import head_config, save_head
    from .head import HeadConfig, PLFMHead, train_head
    from .pipeline import head_triples

    c = cfg["head"]
    cl, G, _, _ = _branch_models(args)
    series = _series(index, index.rois_in("train"))
    _check_dims(cl, G, None, series[0].optical[0].shape[:2])
    triples = head_triples(series, cl, G, cl.cfg.n_frames, c["augment"])
    hc = HeadConfig(n_classes=c["classes"], depth=c["depth"], filters=c["filters"],
                    batch_size=c["batch_size"], lr=c["lr"],
                    epochs=args.max_epochs if args.max_epochs is not None else c["epochs"],
                    shared=c["shared"], seed=cfg.get("run", "seed"))
    ck = _resume(args.out, "head", args.resume)
    model, start, opt_state = None, 0, None
    if ck is not None:
        old = head_config(ck.config)
        if old.n_classes != hc.n_classes:
            raise Incompatible(f"checkpoint has {old.n_classes} classes, config asks {hc.n_classes}")
        model = PLFMHead(old)
        model.load_state_dict(ck.state)
        start, opt_state = ck.meta.get("epochs_done", 0), ck.optimizer
    log = _Log(Path(args.out) / "log.tsv", ("epoch", "loss", "accuracy"))
    state = {}

    def on_epoch(row, m, opt):
        log.write(row)
        state["opt"] = opt

    model, hist = train_head(triples, hc, model, on_epoch, start, opt_state)
    digest = save_head(args.out, model, {"epochs_done": start + len(hist), "seed": hc.seed},
                       state["opt"].state_dict() if "opt" in state else opt_state)
    return digest, hist


def cmd_train(args, cfg):
    index = _index(args.root, need_split=True)
    fn = {"convlstm": _train_convlstm, "cgan": _train_cgan, "head": _train_head}[args.branch]
    digest, hist = fn(args, cfg, index)
    print(f"checkpoint\t{args.out}\tsha256={digest}\trows={len(hist)}\tseed={cfg.get('run', 'seed')}")


# ---------------------------------------------------------------- infer

def _check_dims(cl, G, head, hw):
    from .head import IncompatibleModels
    h, w = cl.cfg.size
    if (h, w) != tuple(hw):
        raise IncompatibleModels("H,W", (h, w), tuple(hw))
    if G.size != h:
        raise IncompatibleModels("W", h, G.size)


def _load_all(args, cfg):
    from .checkpoint import CheckpointError, load_head
    from .head import IncompatibleModels, PLFMModels

    cl, G, ck1, ck2 = _branch_models(args)
    if not args.head:
        raise UsageError("--head checkpoint is required")
    try:
        head, ck3 = load_head(args.head)
    except CheckpointError as exc:
        raise Incompatible(str(exc)) from None
    want = getattr(args, "classes", None)
    if want is not None and want != head.n_classes:
        raise IncompatibleModels("classes", want, head.n_classes)
    models = PLFMModels(cl, G, head)
    models.check()
    hashes = {"convlstm_sha256": ck1.sha256, "cgan_sha256": ck2.sha256, "head_sha256": ck3.sha256}
    return models, hashes


def cmd_infer(args, cfg):
    from .data_model import export_rgb, load_image, save_image, write_tensor
    from .head import plfm_infer
    from .data_model import TemporalSequence

    models, hashes = _load_all(args, cfg)
    jobs = []
    if args.frames:
        if not args.sar or not args.out_file:
            raise UsageError("--frames needs --sar and --out-file")
        seq = TemporalSequence(tuple(load_image(p) for p in args.frames))
        jobs.append((seq, load_image(args.sar), Path(args.out_file)))
    else:
        if not args.root or not args.out:
            raise UsageError("give --root and --out, or --frames/--sar/--out-file")
        index = _index(args.root, need_split=args.set != "all")
        rois = index.rois() if args.set == "all" else (
            index.rois_in("val") + index.rois_in("test") if args.set == "heldout" else index.rois_in(args.set))
        n = models.convlstm.cfg.n_frames
        for series in _series(index, rois):
            t = len(series.cloudy) - 1
            if t < n:
                raise DataError(f"{series.roi_id}: needs {n + 1} frames")
            seq = TemporalSequence(tuple(series.cloudy[t - n:t]))
            jobs.append((seq, series.sar[t], Path(args.out) / series.roi_id / f"t{t}" / "pred.f32"))
    for seq, sar, path in jobs:
        out, y_hat, z_hat = plfm_infer(seq, sar, models, return_intermediates=True)
        write_tensor(path, out.values, range_tag="unit", sensor="S2-estimate", **hashes)
        if args.dump_intermediates:
            save_image(path.with_name(path.stem + "_y_hat.f32"), y_hat, sensor="convlstm")
            save_image(path.with_name(path.stem + "_z_hat.f32"), z_hat, sensor="cgan")
        if args.rgb:
            export_rgb(path.with_suffix(".png"), out)
    print(f"wrote {len(jobs)} prediction(s)")


# ---------------------------------------------------------------- evaluate

def cmd_evaluate(args, cfg):
    from .data_model import load_image, read_tensor
    from .dataset import estimate_coverage
    from .metrics import EvalConfig, MetricsReport, bucket_means, evaluate

    ec = cfg["eval"]
    ecfg = EvalConfig(csc=ec["csc"] and not args.no_csc, radius=ec["csc_radius"], degrees=ec["degrees"])
    pred_root, gt_root = Path(args.pred), Path(args.gt)
    if not pred_root.is_dir() or not gt_root.is_dir():
        raise DataError("prediction and ground-truth roots must be directories")
    preds = sorted(pred_root.glob(f"*/t*/{args.name}.f32"))
    if not preds:
        raise DataError(f"no {args.name}.f32 files under {pred_root}")
    rows = []
    out = open(args.out, "w", encoding="utf-8") if args.out else None
    try:
        header = MetricsReport.tsv_header() + "\tcoverage"
        print(header, file=out or sys.stdout)
        for p in preds:
            rel = p.parent.relative_to(pred_root)
            gt_path = gt_root / rel / "gt.f32"
            if not gt_path.exists():
                raise DataError(f"unpaired prediction {p}: no {gt_path}")
            pred, gt = load_image(p), load_image(gt_path)
            if pred.shape != gt.shape:
                raise DataError(f"{p}: shape {pred.shape} vs ground truth {gt.shape}")
            mask = gt_root / rel / "mask.f32"
            if mask.exists() and not args.white_pixels:
                cov = float((read_tensor(mask)[0] > 0.5).mean())
            else:
                obs = gt_root / rel / "s2.f32"
                src = load_image(obs).values if obs.exists() else pred.values
                cov = estimate_coverage(src, ec["white_threshold"])
            rep = evaluate(pred, gt, ecfg)
            rows.append((cov, rep))
            print(rep.tsv_row(rel.as_posix()) + f"\t{cov!r}", file=out or sys.stdout)
    finally:
        if out:
            out.close()
    summary = sys.stdout if args.out else sys.stderr
    _print_buckets(bucket_means(rows), summary)


def _print_buckets(buckets, fh):
    from .metrics import METRIC_ORDER
    print("\t".join(("coverage", "count") + METRIC_ORDER), file=fh)
    for label, count, means in buckets:
        print("\t".join([label, str(count)] + [f"{means[k]:.6g}" for k in METRIC_ORDER]), file=fh)


# ---------------------------------------------------------------- report

def read_metrics_tsv(path):
    from .metrics import METRIC_ORDER
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing metrics file {path}")
    text = path.read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return []
    head = lines[0].split("\t")
    need = ("image_id",) + METRIC_ORDER + ("coverage",)
    if any(c not in head for c in need):
        raise DataError(f"{path}: header lacks {[c for c in need if c not in head]}")
    rows = []
    for n, ln in enumerate(lines[1:], 2):
        cells = ln.split("\t")
        if len(cells) != len(head):
            raise DataError(f"{path}:{n}: expected {len(head)} columns, got {len(cells)}")
        rec = dict(zip(head, cells))
        try:
            rows.append({"image_id": rec["image_id"], "coverage": float(rec["coverage"]),
                         **{k: float(rec[k]) for k in METRIC_ORDER}})
        except ValueError:
            raise DataError(f"{path}:{n}: non-numeric metric") from None
    return rows


def _plot_setup():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams.update({"svg.hashsalt": "plfm", "figure.dpi": 100})
    return plt


def _save(fig, path):
    fig.savefig(path, format="png", metadata={"Software": None})


def cmd_report(args, cfg):
    from .metrics import METRIC_ORDER, bucket_means

    rows = read_metrics_tsv(args.metrics)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    buckets = bucket_means((r["coverage"], r) for r in rows)
    with open(out / "buckets.tsv", "w", encoding="utf-8") as fh:
        _print_buckets(buckets, fh)
    plots = []
    if rows:
        plt = _plot_setup()
        fig, axes = plt.subplots(2, 4, figsize=(12, 5))
        for ax, k in zip(axes.ravel(), METRIC_ORDER):
            ax.hist([r[k] for r in rows], bins=min(20, max(1, len(rows))), color="0.3")
            ax.set_title(k)
        fig.tight_layout()
        _save(fig, out / "metric_distributions.png")
        plt.close(fig)
        plots.append("metric_distributions.png")
        for log in args.log or []:
            name = _loss_plot(plt, Path(log), out)
            if name:
                plots.append(name)
    _print_buckets(buckets, sys.stdout)
    print(f"plots\t{len(plots)}")


def _loss_plot(plt, log: Path, out: Path):
    if not log.exists():
        raise DataError(f"missing log {log}")
    with open(log, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    if not rows:
        return None
    xkey = "epoch" if "epoch" in rows[0] else "step"
    ykeys = [k for k in rows[0] if k not in (xkey, "lr", "accuracy")]
    fig, ax = plt.subplots(figsize=(6, 4))
    x = [float(r[xkey]) for r in rows]
    for k in ykeys:
        ax.plot(x, [float(r[k]) for r in rows], label=k)
    ax.set_xlabel(xkey)
    ax.set_yscale("log" if all(float(r[k]) > 0 for r in rows for k in ykeys) else "linear")
    ax.legend()
    fig.tight_layout()
    name = f"loss_{log.parent.name or 'run'}.png"
    _save(fig, out / name)
    plt.close(fig)
    return name


# ---------------------------------------------------------------- parser

def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="sectioned key: value file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--size", type=int, default=argparse.SUPPRESS)
    common.add_argument("--classes", type=int, default=argparse.SUPPRESS)
    common.add_argument("--csc-radius", type=int, default=argparse.SUPPRESS)
    common.add_argument("--degrees", action="store_true", default=argparse.SUPPRESS)

    p = _Parser(prog="plfm", parents=[common], description="Cloud removal by merging temporal and SAR estimates.")
    p.add_argument("--version", action="version", version=f"plfm {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ds = sub.add_parser("dataset", help="synthesize, split or index a dataset")
    dsub = ds.add_subparsers(dest="action", required=True, parser_class=_Parser)
    s = dsub.add_parser("synth", parents=[common])
    s.add_argument("--out", required=True)
    s.add_argument("--rois", type=int)
    s.set_defaults(fn=cmd_dataset_synth)
    s = dsub.add_parser("split", parents=[common])
    s.add_argument("--root", required=True)
    s.add_argument("--iters", type=int)
    s.add_argument("--n", type=int)
    s.add_argument("--bins", type=int)
    s.set_defaults(fn=cmd_dataset_split)
    s = dsub.add_parser("index", parents=[common])
    s.add_argument("--root", required=True)
    s.set_defaults(fn=cmd_dataset_index)

    t = sub.add_parser("train", parents=[common], help="train one branch")
    t.add_argument("branch", choices=("convlstm", "cgan", "head"))
    t.add_argument("--root", required=True)
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--max-epochs", type=int)
    t.add_argument("--steps", type=int, help="cgan only")
    t.add_argument("--resume", action="store_true")
    t.add_argument("--convlstm", help="branch checkpoint (head training)")
    t.add_argument("--cgan", help="branch checkpoint (head training)")
    t.set_defaults(fn=cmd_train)

    i = sub.add_parser("infer", parents=[common], help="end-to-end prediction")
    i.add_argument("--convlstm", required=True)
    i.add_argument("--cgan", required=True)
    i.add_argument("--head", required=True)
    i.add_argument("--root")
    i.add_argument("--set", default="heldout", choices=("heldout", "train", "val", "test", "all"))
    i.add_argument("--out")
    i.add_argument("--frames", nargs="+", help="explicit optical sequence files")
    i.add_argument("--sar")
    i.add_argument("--out-file")
    i.add_argument("--dump-intermediates", action="store_true")
    i.add_argument("--rgb", action="store_true")
    i.set_defaults(fn=cmd_infer)

    e = sub.add_parser("evaluate", parents=[common], help="metrics per pair and per coverage bucket")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True, help="dataset root holding gt.f32")
    e.add_argument("--name", default="pred", help="prediction file stem (s2 scores the cloudy input)")
    e.add_argument("--out")
    e.add_argument("--no-csc", action="store_true")
    e.add_argument("--white-pixels", action="store_true", help="estimate coverage from white pixels")
    e.set_defaults(fn=cmd_evaluate)

    r = sub.add_parser("report", parents=[common], help="tables and plots from a metrics TSV")
    r.add_argument("--metrics", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--log", nargs="*", help="training log TSVs to plot")
    r.set_defaults(fn=cmd_report)
    return p


def _fail(code, kind, msg):
    msg = " ".join(str(msg).split())
    print(f"error\t{kind}\t{msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    from .checkpoint import CheckpointError
    from .data_model import RangeError, ShapeError
    from .dataset import DatasetError
    from .head import IncompatibleModels

    try:
        args = build_parser().parse_args(argv)
        cfg = _config(args)
        args.fn(args, cfg)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except ConfigError as exc:
        return _fail(EXIT_USAGE, "config", exc)
    except (IncompatibleModels, Incompatible) as exc:
        return _fail(EXIT_INCOMPATIBLE, "incompatible", exc)
    except (DataError, DatasetError, CheckpointError, ShapeError, RangeError,
            FileNotFoundError, ValueError) as exc:
        return _fail(EXIT_DATA, "data", exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
