"""Acceptance checks, one test per criterion, each reporting a pass/fail line.

The lines are collected into the terminal summary ("acceptance criteria").
Run just this module with ``pytest tests/test_acceptance.py -v``.
"""
import csv
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from levembed import channel as C
from levembed import evaluation as E
from levembed import metric as M
from levembed import montecarlo as MC
from levembed import nets as N
from levembed import tensor as T
from levembed import trainer as TR
from levembed.cli import main as cli_main
from levembed.seq import levenshtein, levenshtein_dp, one_hot_batch
from levembed.special import ln_gamma, make_rng, probit
from oracles import (all_strings, edit_graph_distances, golden_section_min, ln_gamma_recurrence,
                     probit_bisect)
from test_tensor import UNARY, param, readout

# desk-scale training run shared by the last three criteria
E2E = dict(refs=200, split=0.75, ref_len=64, pad=64, reads_per_ref=10, rates="0.006,0.006,0.008",
           arch="cnn-ed-5", epochs=20, batch_size=1024, lr=2e-3, seed=0)


def report(number: int, ok: bool, detail: str, seconds: float) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail} ({seconds:.1f}s)")


# -- 1 -------------------------------------------------------------------------

def test_criterion_1_levenshtein_matches_edit_script_search():
    t0 = time.perf_counter()
    strings = all_strings("AC", 5)
    mismatches = 0
    for s in strings:
        truth = edit_graph_distances(s, "AC", 5)
        for t in strings:
            if not levenshtein_dp(s, t) == levenshtein(s, t) == truth[t]:
                mismatches += 1
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and dt < 30
    report(1, ok, f"{len(strings) ** 2} pairs, {mismatches} mismatches", dt)
    assert ok


# -- 2 -------------------------------------------------------------------------

H, TOL = 1e-3, 1e-4


def _op_cases():
    cases = {name: (lambda f=f: (lambda x: readout(f(x)), param((3, 4), 1))) for name, f in UNARY.items()}
    cases["sqrt"] = lambda: (lambda x: readout(T.sqrt(x)), param((3, 4), 2, 0.2, 2.0))
    cases["log"] = lambda: (lambda x: readout(T.log(x)), param((3, 4), 2, 0.2, 2.0))
    for name, op in (("add", T.add), ("sub", T.sub), ("mul", T.mul)):
        b = param((4,), 4)
        cases[name] = lambda op=op, b=b: (lambda x: readout(op(x, b)), param((3, 4), 3))
        cases[name + "_rhs"] = lambda op=op, b=b: (lambda y: readout(op(param((3, 4), 3), y)), b)
    w = param((4, 5), 6)
    cases["matmul"] = lambda: (lambda x: readout(T.matmul(x, w)), param((2, 3, 4), 5))
    cases["matmul_w"] = lambda: (lambda y: readout(T.matmul(param((2, 3, 4), 5), y)), w)
    cw, cb = param((4, 3, 3), 8), param((4,), 9)
    cases["conv1d"] = lambda: (lambda x: readout(T.conv1d(x, cw, cb, pad=1)), param((2, 3, 9), 7))
    cases["conv1d_w"] = lambda: (lambda y: readout(T.conv1d(param((2, 3, 9), 7), y, cb, stride=2)), cw)
    cases["batchnorm1d"] = lambda: (
        lambda x: readout(T.batchnorm1d(x, T.BatchNormState(4), train=True)), param((6, 4), 10))
    return cases


def _model_errors(arch, B=16, h=H, seed=0):
    rng = np.random.default_rng(seed)
    spec = N.ModelSpec(arch, input_len=32, embed_dim=8, fc_hidden=16, hidden_size=8)
    model = N.build(spec, 1)
    x = np.eye(5)[rng.integers(0, 5, size=(2 * B, 32))]
    d = rng.integers(1, 10, size=B).astype(float)
    worst = {}
    for kind in M.SPACES:
        for loss in M.LOSSES:
            space, lk = M.EmbeddingSpace(kind, 8), M.LossKind(loss)

            def f(_):
                y = M.rescaled_embed(space, model.forward(x, train=True))
                return M.loss(lk, M.distance(space, y[:B], y[B:]), d).mean()

            for name, p in model.params.items():
                idx = rng.choice(p.data.size, min(4, p.data.size), replace=False)
                err = T.grad_check(f, p, h, indices=idx, atol=1e-9)
                key = (kind, loss)
                if err > worst.get(key, (0.0, ""))[0]:
                    worst[key] = (err, name)
    return worst


def test_criterion_2_gradients_match_central_differences():
    t0 = time.perf_counter()
    op_worst = {}
    for name, make in _op_cases().items():
        f, x = make()
        op_worst[name] = T.grad_check(f, x, H)
    model_worst = {arch: _model_errors(arch) for arch in N.ARCHS}
    dt = time.perf_counter() - t0
    bad_ops = {k: v for k, v in op_worst.items() if v >= TOL}
    bad_models = {(a, *k): v for a, w in model_worst.items() for k, v in w.items() if v[0] >= TOL}
    top = max(v[0] for w in model_worst.values() for v in w.values())
    ok = not bad_ops and not bad_models and dt < 120
    detail = (f"{len(op_worst)} ops (worst {max(op_worst.values()):.1e}), "
              f"{len(N.ARCHS) * 9} architecture/space/loss combinations (worst {top:.1e}), h={H}")
    if bad_models:
        detail += "; over tolerance: " + ", ".join(
            f"{a}/{s}/{l} {n} {e:.1e}" for (a, s, l), (e, n) in sorted(bad_models.items()))
    report(2, ok, detail, dt)
    # same sampled entries with a smaller step, to separate truncation error from a wrong gradient
    t1 = time.perf_counter()
    fine = max(v[0] for a in N.ARCHS for v in _model_errors(a, h=1e-4).values())
    ACCEPTANCE_LINES.append(f"       criterion 2 (info): same entries at h=1e-4, worst {fine:.1e} "
                            f"({time.perf_counter() - t1:.1f}s)")
    assert ok


# -- 3 -------------------------------------------------------------------------

def test_criterion_3_rechi2_shape():
    t0 = time.perf_counter()
    worst = 0.0
    for d in range(3, 51):
        m = golden_section_min(lambda x: M.rechi2_value(x, d), 1e-9, 200.0, tol=1e-10)
        worst = max(worst, abs(m - (d - 2)))
    x = np.geomspace(1e-6, 200, 200001)
    monotone = all(
        np.all(np.diff(M.loss(M.LossKind("rechi2"), x, np.full(x.size, float(d))).data) > 0) for d in (1, 2))
    dt = time.perf_counter() - t0
    ok = worst < 1e-3 and monotone and dt < 10
    report(3, ok, f"max |argmin - (d-2)| = {worst:.1e} over d=3..50; strictly increasing for d=1,2: {monotone}",
           dt)
    assert ok


# -- 4 -------------------------------------------------------------------------

def test_criterion_4_rescaled_gaussian_pairs():
    t0 = time.perf_counter()
    out = {}
    for i, kind in enumerate(M.SPACES):
        dist = MC.independent_pair_distances(M.EmbeddingSpace(kind, 80), 10 ** 5, make_rng(4, i))
        out[kind] = (dist.mean(), dist.var(ddof=1))
    dt = time.perf_counter() - t0
    rel = {k: abs(m / 80 - 1) for k, (m, _) in out.items()}
    var_rel = abs(out["sqeuclid"][1] / 160 - 1)
    ok = max(rel.values()) < 0.005 and var_rel < 0.05 and dt < 30
    report(4, ok, ", ".join(f"mean {k} {out[k][0]:.3f}" for k in M.SPACES)
           + f", var sqeuclid {out['sqeuclid'][1]:.2f}", dt)
    assert ok


# -- 5 -------------------------------------------------------------------------

def test_criterion_5_degree_of_freedom_sweeps():
    t0 = time.perf_counter()
    ds = tuple(range(1, 81))
    haar = MC.sweep_expected_distance(MC.SimConfig(d_values=ds, trials=20000, ortho="haar", seed=5))
    sp = MC.sweep_expected_distance(MC.SimConfig(d_values=ds, trials=20000, ortho="signedperm", seed=5))
    resc = MC.sweep_expected_distance(MC.SimConfig(d_values=ds, trials=20000, ortho="haar",
                                                   rescale_at_80=True, seed=6))
    d = np.array(ds, float)
    a = int(np.sum(np.abs(haar.mean["sqeuclid"] - d) < 3 * haar.stderr["sqeuclid"]))
    chi = np.array([MC.chi_mean_analytic(v) for v in ds])
    b = int(np.sum(np.abs(haar.mean["l2"] - chi) < 3 * haar.stderr["l2"]))
    slope, _, r2 = MC.linear_fit(d, sp.mean["l1"])
    c = abs(slope / math.sqrt(2 / math.pi) - 1) < 0.01 and r2 > 0.9999
    j = ds.index(40)
    gap = abs(resc.mean["l1"][j] - 40)
    e = gap > 3 * resc.stderr["l1"][j]
    dt = time.perf_counter() - t0
    ok = a >= 77 and b >= 77 and c and e and dt < 300
    report(5, ok, f"(a) {a}/80 (b) {b}/80 (c) slope {slope:.5f} R2 {r2:.6f} "
                  f"(d) l1 at d=40 is {resc.mean['l1'][j]:.2f} ({gap / resc.stderr['l1'][j]:.0f} SE from 40)", dt)
    assert ok


# -- 6 -------------------------------------------------------------------------

def test_criterion_6_special_functions():
    t0 = time.perf_counter()
    xs = np.arange(1, 201) / 2
    lg_err = max(abs(ln_gamma(x) - ln_gamma_recurrence(x)) / max(abs(ln_gamma_recurrence(x)), 1e-300)
                 for x in xs if ln_gamma_recurrence(x) != 0)
    zero_ok = all(abs(ln_gamma(x)) < 1e-14 for x in (1.0, 2.0))
    ps = np.arange(1, 100) / 100
    pr_err = max(abs(probit(p) - probit_bisect(p)) for p in ps)
    dt = time.perf_counter() - t0
    ok = lg_err < 1e-10 and zero_ok and pr_err < 1e-8 and dt < 5
    report(6, ok, f"ln_gamma max rel err {lg_err:.1e} on 0.5..100; probit max abs err {pr_err:.1e}", dt)
    assert ok


# -- 7, 8, 9: the desk-scale run -------------------------------------------------

def _run_pipeline(root):
    argv_common = ["--threads", "1"]
    data, ckpt, ev = root / "data", root / "model.ckpt", root / "eval"
    t0 = time.perf_counter()
    rc = cli_main(["gen-data", "--refs", str(E2E["refs"]), "--ref-len", str(E2E["ref_len"]),
                   "--pad", str(E2E["pad"]), "--reads-per-ref", str(E2E["reads_per_ref"]),
                   "--rates", E2E["rates"], "--split", str(E2E["split"]), "--seed", str(E2E["seed"]),
                   "--out", str(data), *argv_common])
    assert rc == 0
    rc = cli_main(["train", "--data", str(data), "--arch", E2E["arch"], "--space", "sqeuclid", "--loss", "rechi2",
                   "--dim", "auto", "--epochs", str(E2E["epochs"]), "--batch-size", str(E2E["batch_size"]),
                   "--lr", str(E2E["lr"]), "--seed", str(E2E["seed"]), "--out", str(ckpt), *argv_common])
    assert rc == 0
    rc = cli_main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--out", str(ev), *argv_common])
    assert rc == 0
    return {"data": data, "ckpt": ckpt, "eval": ev, "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    return _run_pipeline(tmp_path_factory.mktemp("desk_run"))


def _metrics(path):
    with open(path, newline="") as fh:
        return {row["metric"]: float(row["value"]) for row in csv.DictReader(fh)}


def test_criterion_7_desk_scale_training(desk_run):
    with open(desk_run["ckpt"].with_suffix(".epochs.csv"), newline="") as fh:
        losses = [float(r["loss"]) for r in csv.DictReader(fh)]
    m = _metrics(desk_run["eval"] / "metrics.csv")
    ratio = losses[-1] / losses[0]
    dim = N.read_checkpoint_meta(desk_run["ckpt"])["dim"]
    ok = (ratio < 0.6 and m["oa_best"] >= 95 and m["ae_h"] <= 5 and len(losses) <= 20
          and desk_run["seconds"] < 1200)
    report(7, ok, f"{E2E['arch']} n={dim}: loss {losses[0]:.3f} -> {losses[-1]:.3f} (ratio {ratio:.3f}), "
                  f"OA_best {m['oa_best']:.2f}%, AE_h {m['ae_h']:.3f}", desk_run["seconds"])
    assert ok


def test_criterion_8_embedding_normality(desk_run):
    t0 = time.perf_counter()
    model = N.load_checkpoint(desk_run["ckpt"])
    test = C.load_dataset(desk_run["data"] / "test.csv")
    seqs = sorted({p.s for p in test.samples} | {p.t for p in test.samples})
    space = M.EmbeddingSpace("sqeuclid", model.spec.embed_dim)
    emb = TR.embed_batch(model, seqs, space)
    r = M.rescale_factor(space)
    mean, std = E.elementwise_stats(emb)
    mean_raw = mean / r
    good = (np.abs(mean_raw) < 0.15) & (np.abs(std / r - 1) < 0.15)
    frac = good.mean()
    pcc, undefined = E.pcc_matrix(emb)
    sym = float(np.max(np.abs(pcc - pcc.T))) if not undefined.any() else math.inf
    diag = float(np.max(np.abs(np.diag(pcc) - 1))) if not undefined.any() else math.inf
    dt = time.perf_counter() - t0
    ok = frac >= 0.9 and sym <= 1e-12 and diag <= 1e-12
    report(8, ok, f"{good.sum()}/{good.size} elements within 0.15 (mean and std), "
                  f"max |mean| {np.max(np.abs(mean_raw)):.3f}, max |std/r-1| {np.max(np.abs(std / r - 1)):.3f}, "
                  f"{len(seqs)} test sequences; PCC asymmetry {sym:.0e}, diagonal error {diag:.0e}", dt)
    # what ideal i.i.d. N(0, 1) embeddings would score with one independent point per test reference
    n_refs = len((desk_run["data"] / "test_refs.txt").read_text().split())
    z = np.random.default_rng(8).standard_normal((4000, n_refs, good.size))
    ideal = (np.abs(z.mean(axis=1)) < 0.15) & (np.abs(z.std(axis=1, ddof=1) - 1) < 0.15)
    ACCEPTANCE_LINES.append(
        f"       criterion 8 (info): ideal normal embeddings of {n_refs} independent references pass "
        f"{ideal.mean():.2f} of elements; P(>= 90%) = {np.mean(ideal.mean(axis=1) >= 0.9):.3f}")
    assert ok


def test_criterion_9_bit_identical_rerun(desk_run, tmp_path):
    again = _run_pipeline(tmp_path)
    same_ckpt = again["ckpt"].read_bytes() == desk_run["ckpt"].read_bytes()
    same_metrics = (again["eval"] / "metrics.csv").read_bytes() == (desk_run["eval"] / "metrics.csv").read_bytes()
    ok = same_ckpt and same_metrics
    report(9, ok, f"checkpoint identical: {same_ckpt}, metrics CSV identical: {same_metrics}", again["seconds"])
    assert ok
