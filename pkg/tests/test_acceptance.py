"""Acceptance suite: one test and one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they
are also repeated in the terminal summary.
"""

import time

import numpy as np
import pytest
import torch

from plfm import metrics as M
from plfm.cgan import (CGANConfig, DiscriminatorConfig, GeneratorConfig, discriminator_forward,
                       generator_forward, generator_l1, train_cgan)
from plfm.cli import main
from plfm.convlstm import (ConvLSTMCell, ConvLSTMConfig, HuberConfig, TrainConfig, convlstm_forward, huber_grad,
                           huber_loss, train_convlstm)
from plfm.data_model import OpticalImage
from plfm.dataset import SceneConfig, apply_clouds, cumulative_histogram, dissimilarity, split_rois, synth_scene
from plfm.head import HeadConfig, PLFMModels, cross_entropy_grad, pixel_accuracy, train_head
from plfm.pipeline import cgan_pairs, convlstm_pairs, head_triples, infer_series

from oracles import (METRIC_REFS, central_diff, convlstm_step_ref, huber_ref, lstm_scalar_ref,
                     rel_error, softmax_ce_ref)

GATES = "fcio"


# ---------------------------------------------------------------- 1. metric oracles

def test_criterion_1_metric_oracles(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(200):
        a = rng.uniform(0.05, 1.0, (8, 8, 3))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0.01, 1.0)
        for name, ref in METRIC_REFS.items():
            worst = max(worst, abs(M.METRICS[name](a, b) - ref(a, b)))
    a = rng.uniform(0.1, 1.0, (8, 8, 3))
    ideal = {"psnr": M.PSNR_CAP, "ssim": 1.0, "sam": 0.0, "mse": 0.0, "rmse": 0.0,
             "cc": 1.0, "dd": 0.0, "uqi": 1.0}
    fixed = all(M.METRICS[k](a, a) == v for k, v in ideal.items())
    dt = time.perf_counter() - t0
    ok = worst < 1e-10 and fixed and dt < 10
    assert verdict(1, "metric oracle suite", ok,
                   f"max|err|={worst:.2e} fixed_points={fixed} time={dt:.1f}s")


# ---------------------------------------------------------------- 2. CSC recovery

def test_criterion_2_csc_recovery(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(102)
    shift_ok = ssim_ok = raw_ok = True
    worst = 0.0
    for _ in range(50):
        ref = rng.uniform(0.05, 1.0, (16, 16, 3))
        s1, s2 = (int(v) for v in rng.integers(-2, 3, size=2))
        pred = np.roll(ref, (s1, s2), axis=(0, 1))
        v, shift = M.with_csc("ssim", ref, pred, radius=2)
        worst = max(worst, abs(v - 1.0))
        ssim_ok &= abs(v - 1.0) <= 1e-9
        shift_ok &= shift == (-s1, -s2)
        v, shift = M.with_csc("psnr", ref, pred, radius=2)
        shift_ok &= shift == (-s1, -s2) and v == M.PSNR_CAP
        noisy = np.clip(pred + rng.normal(0, 0.05, pred.shape), 0.01, 1.0)
        for name in M.METRIC_ORDER:
            raw_ok &= M.with_csc(name, ref, noisy, radius=0)[0] == M.METRICS[name](ref, noisy)
    dt = time.perf_counter() - t0
    ok = shift_ok and ssim_ok and raw_ok and dt < 30
    assert verdict(2, "CSC recovery", ok,
                   f"shifts={shift_ok} max|ssim-1|={worst:.1e} E0_bitexact={raw_ok} time={dt:.1f}s")


# ---------------------------------------------------------------- 3. gradient checks

def _random_cell(rng, seed):
    torch.manual_seed(seed)
    cell = ConvLSTMCell(2, 2, 3, (3, 3)).double()
    with torch.no_grad():
        for p in cell.parameters():
            p.uniform_(-0.5, 0.5)
    return cell


def _cell_params(cell):
    p = {}
    for g in GATES:
        p["Wx" + g] = cell.kernel("x" + g).detach().numpy().copy()
        p["Wh" + g] = cell.kernel("h" + g).detach().numpy().copy()
        p["b" + g] = cell.bias(g).detach().numpy().copy()
    for g in "fio":
        p["peep_" + g] = cell.peep(g).detach().numpy().copy()
    return p


def _cell_worst_error(rng, seed):
    cell = _random_cell(rng, seed)
    x, h, c, w = (rng.normal(size=(2, 3, 3)) for _ in range(4))
    ts = [torch.from_numpy(v)[None].requires_grad_() for v in (x, h, c)]
    h1, c1 = cell(ts[0], (ts[1], ts[2]))
    ((h1[0] * torch.from_numpy(w)).sum() + c1.sum()).backward()
    p = _cell_params(cell)
    state = {"x": x, "h": h, "c": c}

    def loss(key, value):
        q, s = dict(p), dict(state)
        (s if key in s else q)[key] = value
        rh, rc = convlstm_step_ref(s["x"], s["h"], s["c"], q)
        return float((rh * w).sum() + rc.sum())

    analytic = {"x": ts[0].grad[0], "h": ts[1].grad[0], "c": ts[2].grad[0]}
    for g in GATES:
        sl = cell._slice(g)
        analytic["Wx" + g] = cell.conv_x.weight.grad[sl]
        analytic["Wh" + g] = cell.conv_h.weight.grad[sl]
        analytic["b" + g] = cell.conv_x.bias.grad[sl]
    for k, g in enumerate("fio"):
        analytic["peep_" + g] = cell.w_peep.grad[k]
    worst = 0.0
    for key, grad in analytic.items():
        start = (state[key] if key in state else p[key]).copy()
        num = central_diff(lambda v, key=key: loss(key, v), start)
        worst = max(worst, rel_error(grad.numpy(), num))
    return worst


def test_criterion_3_gradient_checks(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(103)
    huber = ce = cell = 0.0
    for trial in range(20):
        delta = float(rng.uniform(0.3, 2.0))
        a, b = rng.normal(0, 2, (3, 4)), rng.normal(0, 2, (3, 4))
        num = central_diff(lambda v: huber_ref(v, b, delta), a.copy())
        huber = max(huber, rel_error(huber_grad(a, b, HuberConfig(delta)), num))

        z = rng.normal(0, 2, (2, 3, 16))
        t = rng.integers(0, 16, (2, 3))
        num = central_diff(lambda v: softmax_ce_ref(v, t), z.copy())
        ce = max(ce, rel_error(cross_entropy_grad(z, t), num))

        cell = max(cell, _cell_worst_error(rng, trial))
    dt = time.perf_counter() - t0
    ok = max(huber, ce, cell) < 1e-4 and dt < 120
    assert verdict(3, "gradient checks", ok,
                   f"huber={huber:.1e} ce={ce:.1e} convlstm_cell={cell:.1e} (20 each) time={dt:.1f}s")


# ---------------------------------------------------------------- 4. LSTM degeneracy

def test_criterion_4_lstm_degeneracy(verdict):
    torch.manual_seed(104)
    cell = ConvLSTMCell(1, 1, 1, (1, 1), peephole=True).double()
    with torch.no_grad():
        for p in cell.parameters():
            p.uniform_(-1, 1)
        cell.w_peep.zero_()
    wx = {g: float(cell.kernel("x" + g).item()) for g in GATES}
    wh = {g: float(cell.kernel("h" + g).item()) for g in GATES}
    b = {g: float(cell.bias(g).item()) for g in GATES}
    xs = np.random.default_rng(104).normal(size=100)
    ref = lstm_scalar_ref(xs, wx, wh, b)
    h, c = cell.init_state(1, dtype=torch.float64)
    worst = 0.0
    with torch.no_grad():
        for x, (rh, rc) in zip(xs, ref):
            h, c = cell(torch.full((1, 1, 1, 1), x, dtype=torch.float64), (h, c))
            worst = max(worst, abs(h.item() - rh), abs(c.item() - rc))
    assert verdict(4, "ConvLSTM to scalar LSTM degeneracy", worst <= 1e-12,
                   f"max|err|={worst:.1e} over 100 steps")


# ---------------------------------------------------------------- 5. split

def test_criterion_5_split(verdict):
    t0 = time.perf_counter()
    corpus = {}
    for i in range(20):
        rng = np.random.default_rng(i)
        level = 0.2 if i % 2 else 0.7
        corpus[f"r{i:02d}"] = [np.clip(rng.normal(level, 0.05, (8, 8, 3)), 0, 1) for _ in range(2)]
    res = split_rois(corpus, iterations=200, n=8, bins=20, seed=5)
    h = cumulative_histogram(corpus["r00"] + corpus["r01"], 20)
    d_same = dissimilarity(h, h, 4)
    dt = time.perf_counter() - t0
    is_min = res.dissimilarity == res.trace.min() and res.test_dissimilarity == res.test_trace.min()
    below = res.dissimilarity < np.median(res.trace)
    ok = is_min and below and d_same == 0.0 and dt < 60
    assert verdict(5, "histogram split", ok,
                   f"d={res.dissimilarity:.4g} min={res.trace.min():.4g} median={np.median(res.trace):.4g} "
                   f"d_identical={d_same} time={dt:.1f}s")


# ---------------------------------------------------------------- 6. overfit contracts

def _overfit_convlstm():
    s = synth_scene(3, SceneConfig(size=32, coverage=0.2))
    pairs = [(np.stack([f.values for f in s.cloudy[:3]]), s.optical[3].values)]
    model, _ = train_convlstm(pairs, TrainConfig(max_epochs=500, early_stop_patience=500))
    return huber_loss(convlstm_forward(pairs[0][0], model).values, pairs[0][1])


def _overfit_cgan():
    pairs = []
    for seed in range(2):
        s = synth_scene(seed, SceneConfig(size=32))
        pairs += [(s.sar[t].values, s.optical[t].values) for t in range(4)]
    cfg = CGANConfig(size=32, steps=800, generator=GeneratorConfig(base_filters=32),
                     discriminator=DiscriminatorConfig(base_filters=32))
    G, D1, D2, _ = train_cgan(pairs, cfg)
    l1 = generator_l1(G, pairs)
    real = fake = 0.0
    for sar, opt in pairs:
        gen = generator_forward(sar, G).values
        for D in (D1, D2):
            real += discriminator_forward(sar, opt, D).mean()
            fake += discriminator_forward(sar, gen, D).mean()
    n = 2 * len(pairs)
    return l1, real / n, fake / n


def _overfit_head():
    data = []
    for seed in range(4):
        v = synth_scene(seed, SceneConfig(size=32)).optical[3].values
        data.append((v, v, v))
    model, _ = train_head(data, HeadConfig(n_classes=16, epochs=400, lr=2e-4, batch_size=4))
    return pixel_accuracy(model, data)


def test_criterion_6_overfit_contracts(verdict):
    t0 = time.perf_counter()
    conv = _overfit_convlstm()
    l1, d_real, d_fake = _overfit_cgan()
    acc = _overfit_head()
    dt = time.perf_counter() - t0
    ok = conv < 1e-3 and l1 < 0.05 and d_real > d_fake and acc > 0.95 and dt < 20 * 60
    assert verdict(6, "branch overfit contracts", ok,
                   f"convlstm_huber={conv:.2e} cgan_l1={l1:.4f} D(real)={d_real:.3f}>D(fake)={d_fake:.3f} "
                   f"head_acc={acc:.4f} time={dt:.0f}s")


# ---------------------------------------------------------------- 7. end-to-end desk run

def test_criterion_7_end_to_end(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    series = [synth_scene(100 + i, SceneConfig(size=64, coverage=list(rng.uniform(0.5, 0.8, 4))),
                          f"roi{i:02d}") for i in range(16)]
    by_id = {s.roi_id: s for s in series}
    split = split_rois({s.roi_id: s.optical for s in series}, iterations=200, n=16)
    train = [by_id[r] for r in split.train_ids]
    held = [by_id[r] for r in split.val_ids + split.test_ids]

    convlstm, _ = train_convlstm(convlstm_pairs(train, augment=True),
                                 TrainConfig(max_epochs=30, early_stop_patience=30),
                                 model_cfg=ConvLSTMConfig(hidden=(16, 16, 16)))
    G, _, _, _ = train_cgan(cgan_pairs(train, augment=True),
                            CGANConfig(size=64, steps=300, batch_size=16,
                                       generator=GeneratorConfig(base_filters=32),
                                       discriminator=DiscriminatorConfig(base_filters=32)))
    triples = head_triples(train, convlstm, G, augment=True)
    head, _ = train_head(triples, HeadConfig(n_classes=16, epochs=30, batch_size=16))
    models = PLFMModels(convlstm, G, head)

    gains, csc_ok = [], True
    for s in held:
        out = infer_series(s, models)
        gt, cloudy = s.optical[3], s.cloudy[3]
        gains.append((M.psnr(gt.values, out.values) - M.psnr(gt.values, cloudy.values),
                      M.ssim(gt.values, out.values) - M.ssim(gt.values, cloudy.values)))
        raw = M.evaluate(out.values, gt.values, M.EvalConfig(csc=False))
        csc = M.evaluate(out.values, gt.values, M.EvalConfig(csc=True, radius=2))
        csc_ok &= all(getattr(csc, k) >= getattr(raw, k) for k in M.MAXIMIZE)
        csc_ok &= all(getattr(csc, k) <= getattr(raw, k) for k in M.MINIMIZE)
    dt = time.perf_counter() - t0
    d_psnr = min(g[0] for g in gains)
    d_ssim = min(g[1] for g in gains)
    ok = d_psnr >= 6.0 and d_ssim >= 0.1 and csc_ok and dt < 45 * 60
    assert verdict(7, "end-to-end desk run", ok,
                   f"held_out={len(held)} min_dPSNR={d_psnr:.2f}dB min_dSSIM={d_ssim:.3f} "
                   f"mean_dPSNR={np.mean([g[0] for g in gains]):.2f}dB csc>=raw={csc_ok} time={dt:.0f}s")


# ---------------------------------------------------------------- 8. coverage buckets

def test_criterion_8_buckets(verdict, tmp_path):
    rng = np.random.default_rng(108)
    lines = [M.MetricsReport.tsv_header() + "\tcoverage"]
    rows = []
    for i, cov in enumerate([0.05, 0.1, 0.3, 0.4, 0.6, 0.7, 0.9, 0.95]):
        gt = OpticalImage(rng.uniform(0.05, 0.6, (32, 32, 3)))
        cloudy, mask = apply_clouds(gt, cov, 0.8, seed=i)
        rep = M.evaluate(cloudy.values, gt.values, M.EvalConfig(csc=False))
        rows.append((float(mask.mean()), rep))
        lines.append(rep.tsv_row(f"img{i}") + f"\t{mask.mean()}")
    (tmp_path / "m.tsv").write_text("\n".join(lines) + "\n")
    means = M.bucket_means(rows)
    assert main(["report", "--metrics", str(tmp_path / "m.tsv"), "--out", str(tmp_path / "r")]) == 0
    header, *body = (tmp_path / "r" / "buckets.tsv").read_text().splitlines()
    table = [r.split("\t") for r in body]
    edges = [(b[1], b[2]) for b in M.BUCKETS] == [(0.0, 20.0), (20.0, 50.0), (50.0, 80.0), (80.0, 100.0)]
    labels = [m[0] for m in means] == [r[0] for r in table] == ["<=20", "20-50", "50-80", "80-100"]
    counts = [m[1] for m in means] == [int(r[1]) for r in table] and sum(m[1] for m in means) == 8
    cols = header.split("\t")
    agree = all(float(r[cols.index(k)]) == pytest.approx(m[2][k], rel=1e-5, abs=1e-9)
                for r, m in zip(table, means) for k in M.METRIC_ORDER)
    ok = edges and labels and counts and agree
    assert verdict(8, "coverage bucketing", ok,
                   f"buckets={[m[0] for m in means]} counts={[m[1] for m in means]} report_agrees={agree}")
