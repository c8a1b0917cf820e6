"""Command-line front end: gen-data, train, eval, diagnose, montecarlo.

Every subcommand writes ``manifest.json`` (resolved config, seeds, paths,
version, wall time, status) next to its outputs, also when it fails.
Settings resolve as: command-line flag > ``--config`` JSON file > default.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import channel as C
from . import evaluation as E
from . import metric as M
from . import montecarlo as MC
from . import nets as N
from . import trainer as TR

log = logging.getLogger("levembed")

OUT_ENV = "LEVEMBED_OUT"

DEFAULTS = {
    "gen-data": {"refs": 200, "ref_len": 152, "reads_per_ref": 10, "rates": "0.003,0.003,0.004,0",
                 "pad": None, "split": 0.8, "seed": 0, "max_dup": 50, "out": None},
    "train": {"data": None, "arch": "cnn-ed-5", "space": "sqeuclid", "loss": "rechi2", "dim": "80",
              "epochs": 10, "batch_size": 128, "optimizer": "adam", "lr": 1e-3, "beta1": 0.9,
              "beta2": 0.999, "adam_eps": 1e-8, "fc_hidden": 256, "hidden_size": 64, "shuffle": True,
              "seed": 0, "runs": 1, "validate": False, "k": None, "out": None},
    "eval": {"ckpt": None, "data": None, "pairs": None, "space": None, "k": None, "out": None},
    "diagnose": {"ckpt": None, "data": None, "embeddings": None, "space": None, "out": None},
    "montecarlo": {"n": 80, "dmin": 1, "dmax": 80, "trials": 20000, "ortho": "haar",
                   "rescale_at_80": False, "seed": 0, "out": None},
}


class UsageError(ValueError):
    """Invalid configuration; reported with exit status 2."""


def _default_out(sub: str) -> Path:
    return Path(os.environ.get(OUT_ENV, "runs")) / sub


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="levembed", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file of settings (flags override it)")
        sp.add_argument("--threads", type=int, default=None, help="BLAS threads; 1 gives bit-exact reruns")
        sp.add_argument("-v", "--verbose", action="store_true")

    g = sub.add_parser("gen-data", help="simulate references and reads, write train/test datasets")
    g.add_argument("--refs", type=int)
    g.add_argument("--ref-len", type=int)
    g.add_argument("--reads-per-ref", type=int)
    g.add_argument("--rates", help="p_sub,p_ins,p_del[,p_fail]")
    g.add_argument("--pad", type=int, help="padded length (default: ref length rounded up to 32)")
    g.add_argument("--split", type=float, help="fraction of references used for training")
    g.add_argument("--max-dup", type=int, help="cap on per-sample duplication when balancing")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory")
    common(g)

    t = sub.add_parser("train", help="train an embedding network")
    t.add_argument("--data", help="directory holding train.csv (and test.csv for --validate)")
    t.add_argument("--arch", choices=N.ARCHS)
    t.add_argument("--space", choices=M.SPACES)
    t.add_argument("--loss", choices=M.LOSSES)
    t.add_argument("--dim", help="embedding dimension, or 'auto' for the mean non-homologous distance")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--optimizer", choices=TR.OPTIMIZERS)
    t.add_argument("--lr", type=float)
    t.add_argument("--beta1", type=float)
    t.add_argument("--beta2", type=float)
    t.add_argument("--adam-eps", type=float)
    t.add_argument("--fc-hidden", type=int)
    t.add_argument("--hidden-size", type=int)
    t.add_argument("--no-shuffle", dest="shuffle", action="store_const", const=False)
    t.add_argument("--seed", type=int)
    t.add_argument("--runs", type=int, help="repeat with seeds seed, seed+1, ...")
    t.add_argument("--validate", action="store_const", const=True, help="score test.csv after every epoch")
    t.add_argument("--k", type=float, help="OA threshold for validation (default n/2)")
    t.add_argument("--out", help="checkpoint path")
    common(t)

    e = sub.add_parser("eval", help="AE, AE_h and OA of a checkpoint on a dataset")
    e.add_argument("--ckpt")
    e.add_argument("--data", help="directory holding test.csv, or a dataset CSV")
    e.add_argument("--pairs", help="CSV of d,d_hat,homologous to score instead of a model")
    e.add_argument("--space", choices=M.SPACES, help="override the checkpoint's space")
    e.add_argument("--k", type=float)
    e.add_argument("--out")
    common(e)

    d = sub.add_parser("diagnose", help="per-element statistics, QQ and PCC data of embeddings")
    d.add_argument("--ckpt")
    d.add_argument("--data")
    d.add_argument("--embeddings", help="CSV of embedding rows to analyse instead of a model")
    d.add_argument("--space", choices=M.SPACES)
    d.add_argument("--out")
    common(d)

    m = sub.add_parser("montecarlo", help="expected distances versus degree of freedom")
    m.add_argument("--n", type=int)
    m.add_argument("--dmin", type=int)
    m.add_argument("--dmax", type=int)
    m.add_argument("--trials", type=int)
    m.add_argument("--ortho", choices=MC.ORTHOS)
    m.add_argument("--rescale-at-80", action="store_const", const=True)
    m.add_argument("--seed", type=int)
    m.add_argument("--out")
    common(m)
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the optional JSON config file and explicit flags."""
    defaults = DEFAULTS[args.cmd]
    cfg = dict(defaults)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys for {args.cmd}: {', '.join(sorted(unknown))}")
        cfg.update(loaded)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg.get("out") is None:
        cfg["out"] = str(_default_out(args.cmd) / ("model.ckpt" if args.cmd == "train" else ""))
    return cfg


def _parse_rates(text: str) -> C.ChannelParams:
    try:
        vals = [float(v) for v in str(text).split(",")]
    except ValueError:
        raise UsageError(f"--rates expects comma-separated numbers, got {text!r}") from None
    if len(vals) not in (3, 4):
        raise UsageError("--rates expects p_sub,p_ins,p_del[,p_fail]")
    try:
        return C.ChannelParams(*vals)
    except ValueError as exc:
        raise UsageError(f"invalid rates: {exc}") from None


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(cfg: dict, man: dict) -> list[Path]:
    ch = _parse_rates(cfg["rates"])
    for key in ("refs", "ref_len", "reads_per_ref"):
        if cfg[key] < 1:
            raise UsageError(f"{key} must be >= 1")
    if not 0.0 <= cfg["split"] <= 1.0:
        raise UsageError("--split must lie in [0, 1]")
    pad = cfg["pad"] or C.default_padded_len(cfg["ref_len"])
    if pad < cfg["ref_len"]:
        raise UsageError(f"--pad {pad} is shorter than --ref-len {cfg['ref_len']}")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"]
    refs = C.gen_references(cfg["refs"], cfg["ref_len"], seed)
    reads = C.simulate_reads(refs, cfg["reads_per_ref"], ch, seed)
    reads, dropped = C.drop_overlong(reads, pad)
    if dropped:
        log.warning("dropped %d read(s) longer than the padded length %d", dropped, pad)
    k = int(round(cfg["split"] * len(refs)))
    train_refs, test_refs = C.split_by_reference(refs, cfg["split"])
    man["seeds"] = {"references": seed, "reads": seed, "pairs": seed}
    outputs = []
    for role, rr, rd, pair_seed in (("train", train_refs, reads[:k], seed),
                                    ("test", test_refs, reads[k:], seed + 1)):
        path = out / f"{role}.csv"
        if len(rr) < 2:
            log.warning("%s split has %d reference(s); writing an empty %s", role, len(rr), path.name)
            ds = C.Dataset([], pad, role)
        else:
            ds = C.build_pairs(rr, cfg["reads_per_ref"], ch, pad, seed=pair_seed, role=role,
                               max_dup=cfg["max_dup"], reads=rd)
        C.save_dataset(ds, path)
        outputs += [path, path.with_suffix(".meta.json")]
        log.info("%s: %d samples (%d homologous)", role, len(ds), ds.n_homologous)
    for role, rr in (("train", train_refs), ("test", test_refs)):
        path = out / f"{role}_refs.txt"
        path.write_text("".join(r + "\n" for r in rr))
        outputs.append(path)
    for path in outputs[:4:2]:
        C.load_dataset(path)
    return outputs


def _dataset_path(data: str, role: str) -> Path:
    p = Path(data)
    return p / f"{role}.csv" if p.is_dir() else p


def _auto_dim(ds: C.Dataset) -> int:
    non = [p.d for p in ds.samples if not p.homologous]
    if not non:
        raise UsageError("--dim auto needs non-homologous pairs in the training set")
    return max(1, int(round(float(np.mean(non)))))


def cmd_train(cfg: dict, man: dict) -> list[Path]:
    if cfg["data"] is None:
        raise UsageError("train needs --data")
    train_ds = C.load_dataset(_dataset_path(cfg["data"], "train"))
    dim = _auto_dim(train_ds) if str(cfg["dim"]) == "auto" else int(cfg["dim"])
    cfg["dim_resolved"] = dim
    if cfg["runs"] < 1:
        raise UsageError("--runs must be >= 1")
    try:
        space = M.EmbeddingSpace(cfg["space"], dim)
        loss = M.LossKind(cfg["loss"])
        spec = N.ModelSpec(cfg["arch"], input_len=train_ds.padded_len, embed_dim=dim,
                           fc_hidden=cfg["fc_hidden"], hidden_size=cfg["hidden_size"])
        spec.validate()
        tcfg = [TR.TrainConfig(space, loss, epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                               optimizer=cfg["optimizer"], lr=cfg["lr"], beta1=cfg["beta1"],
                               beta2=cfg["beta2"], adam_eps=cfg["adam_eps"], seed=cfg["seed"] + r,
                               shuffle=cfg["shuffle"]) for r in range(cfg["runs"])]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    val = C.load_dataset(_dataset_path(cfg["data"], "test")) if cfg["validate"] else None
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    man["seeds"] = {"runs": [c.seed for c in tcfg]}
    outputs = []
    for r, c in enumerate(tcfg):
        ckpt = out if cfg["runs"] == 1 else out.with_name(f"{out.stem}.run{r}{out.suffix}")
        epochs_csv = ckpt.with_suffix(".epochs.csv")
        model = N.build(spec, seed=c.seed)
        with open(epochs_csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "seconds", "ae", "ae_h", "oa"])

            def record(rep: TR.EpochReport):
                w.writerow([rep.epoch, repr(rep.loss), f"{rep.seconds:.3f}",
                            *("" if x is None else repr(x) for x in (rep.ae, rep.ae_h, rep.oa))])
                fh.flush()

            TR.train(model, train_ds, c, validation=val, k=cfg["k"], on_epoch=record)
        meta = {"space": space.kind, "loss": loss.kind, "dim": dim, "seed": c.seed, "epochs": c.epochs}
        N.save_checkpoint(model, ckpt, meta)
        N.load_checkpoint(ckpt, expect=spec)
        outputs += [ckpt, epochs_csv]
    return outputs


def _load_model(cfg: dict):
    if cfg["ckpt"] is None:
        raise UsageError("need --ckpt (or a fixture file)")
    model = N.load_checkpoint(cfg["ckpt"])
    meta = N.read_checkpoint_meta(cfg["ckpt"])
    kind = cfg["space"] or meta.get("space", "sqeuclid")
    return model, M.EmbeddingSpace(kind, model.spec.embed_dim)


def _load_test(cfg: dict, model) -> C.Dataset:
    if cfg["data"] is None:
        raise UsageError("need --data")
    ds = C.load_dataset(_dataset_path(cfg["data"], "test"))
    if ds.padded_len != model.spec.input_len:
        raise UsageError(
            f"dataset padded length {ds.padded_len} does not match checkpoint input length {model.spec.input_len}"
        )
    return ds


def _read_pairs(path: str):
    d, d_hat, hom = [], [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), 2):
            try:
                d.append(float(row["d"]))
                d_hat.append(float(row["d_hat"]))
                hom.append(row["homologous"].strip() in ("1", "true", "True"))
            except (KeyError, TypeError, ValueError) as exc:
                raise UsageError(f"{path}:{lineno}: bad pairs row ({exc})") from None
    return np.array(d), np.array(d_hat), np.array(hom)


def cmd_eval(cfg: dict, man: dict) -> list[Path]:
    if cfg["pairs"]:
        d, d_hat, hom = _read_pairs(cfg["pairs"])
        k = cfg["k"] if cfg["k"] is not None else 0.0
        if cfg["k"] is None:
            log.warning("no --k given for a pairs fixture; using K=0")
    else:
        model, space = _load_model(cfg)
        ds = _load_test(cfg, model)
        if not ds.samples:
            raise UsageError("test dataset is empty")
        d_hat = E.predict_distances(model, ds, space)
        d = np.array([p.d for p in ds.samples], float)
        hom = np.array([p.homologous for p in ds.samples])
        k = space.n / 2 if cfg["k"] is None else cfg["k"]
    cfg["k_resolved"] = k
    report = E.evaluate_pairs(d, d_hat, hom, k)
    paths = E.write_metrics(report, cfg["out"])
    pred = Path(cfg["out"]) / "predictions.csv"
    with open(pred, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["d", "d_hat", "homologous"])
        for a, b, c in zip(d, d_hat, hom):
            w.writerow([repr(float(a)), repr(float(b)), int(c)])
    return paths + [pred]


def cmd_diagnose(cfg: dict, man: dict) -> list[Path]:
    if cfg["embeddings"]:
        try:
            emb = np.loadtxt(cfg["embeddings"], delimiter=",", ndmin=2)
        except ValueError as exc:
            raise UsageError(f"{cfg['embeddings']}: {exc}") from None
        scale = 1.0
    else:
        model, space = _load_model(cfg)
        ds = _load_test(cfg, model)
        seqs = sorted({p.s for p in ds.samples} | {p.t for p in ds.samples})
        emb = TR.embed_batch(model, seqs, space)
        scale = M.rescale_factor(space)
    rep = E.diagnose(emb)
    return E.write_diagnostics(rep, cfg["out"], scale)


def cmd_montecarlo(cfg: dict, man: dict) -> list[Path]:
    try:
        sim = MC.SimConfig(n=cfg["n"], d_values=tuple(range(cfg["dmin"], cfg["dmax"] + 1)),
                           trials=cfg["trials"], ortho=cfg["ortho"], rescale_at_80=cfg["rescale_at_80"],
                           seed=cfg["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    man["seeds"] = {"sweep": cfg["seed"]}
    res = MC.sweep_expected_distance(sim)
    out = Path(cfg["out"])
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "sweep.csv"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    MC.write_sweep_csv(res, out)
    if res.scale:
        log.info("rescale factors at d=%d: %s", sim.n, res.scale)
    return [out]


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "diagnose": cmd_diagnose, "montecarlo": cmd_montecarlo}


def _manifest_path(cmd: str, out: str) -> Path:
    p = Path(out)
    if cmd == "train" or p.suffix == ".csv":
        return p.with_name(p.stem + ".manifest.json")
    return p / "manifest.json"


def _threads(n: int | None):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.time()
    man = {"subcommand": args.cmd, "version": __version__, "argv": list(sys.argv[1:] if argv is None else argv),
           "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "threads": args.threads}
    status = 0
    cfg = None
    try:
        cfg = resolve(args)
        man["config"] = cfg
        with _threads(args.threads):
            outputs = COMMANDS[args.cmd](cfg, man)
        man["outputs"] = [str(p) for p in outputs]
        missing = [str(p) for p in outputs if not Path(p).exists()]
        if missing:
            raise RuntimeError(f"declared outputs missing: {missing}")
        man["status"] = "ok"
    except UsageError as exc:
        status, man["status"], man["error"] = 2, "error", str(exc)
        print(f"levembed {args.cmd}: error: {exc}", file=sys.stderr)
    except (ValueError, OSError, RuntimeError) as exc:
        status, man["status"], man["error"] = 1, "error", f"{type(exc).__name__}: {exc}"
        print(f"levembed {args.cmd}: {type(exc).__name__}: {exc}", file=sys.stderr)
    man["wall_time"] = round(time.time() - t0, 3)
    out = (cfg or {}).get("out") or getattr(args, "out", None)
    if out is None:
        out = str(_default_out(args.cmd) / ("model.ckpt" if args.cmd == "train" else ""))
    mpath = _manifest_path(args.cmd, out)
    try:
        mpath.parent.mkdir(parents=True, exist_ok=True)
        mpath.write_text(json.dumps(man, indent=2, default=str) + "\n")
    except OSError as exc:
        print(f"levembed: could not write manifest {mpath}: {exc}", file=sys.stderr)
        status = status or 1
    return status


if __name__ == "__main__":
    raise SystemExit(main())
