"""Command-line experiment driver.

Subcommands: generate, ph, dist, vectorize, train, eval, bench.  Each
reads an optional JSON config, applies flag overrides and writes the
resolved config beside its outputs.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from .complex import MAX_DIM, build_rips
from .data import (PointCloud, ManifestEntry, gen_synthetic, load_csv, read_manifest,
                   save_csv, write_manifest)
from .errors import CohoflowError, InvalidInputError, NumericalOverflowError, ParseError
from .metrics import bottleneck_distance, metrics_report, wasserstein_distance
from .persistence import PersistenceDiagram, betti_curve, compute_persistence
from .training import (CompositeLossConfig, ComplexParams, FlowModel, OptimizerState, batch_diagrams,
                       f1_macro, load_checkpoint, prepare_samples, train, write_log_csv)
from .vectorize import ImageParams, vectorize

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULT_CONFIG = {
    "dataset": {
        "structures": ["circle", "two-circles"],
        "n_samples": 200,
        "n_points": 24,
        "ambient_dim": 2,
        "sigmas": [0.05],
    },
    "complex": {"max_dim": 2, "max_scale": 1.0, "operator": "hodge"},
    "vectorization": {"grid_w": 8, "grid_h": 8, "margin": 0.05, "bandwidth_fraction": 0.05},
    "model": {"n_layers": 2, "channels": 4, "alpha": 0.0, "step_h": 0.1, "steps_T": 10,
              "w_scale": 0.1, "shared_alpha": True},
    "loss": {"lam": 0.1, "beta": 1e-4, "q": 1.0, "task": "classification", "topo_dims": [0, 1, 2]},
    "optimizer": {"lr": 0.01, "batch_size": 16, "epochs": 50},
    "eval": {"topo_dims": [0, 1]},
    "seed": None,
}


class UsageError(Exception):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def load_config(path, overrides: dict) -> dict:
    cfg = DEFAULT_CONFIG
    if path:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = _merge(cfg, doc)
    cfg = _merge(cfg, {k: v for k, v in overrides.items() if v is not None})
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    ds = cfg["dataset"]
    if any((not math.isfinite(s)) or s < 0 for s in ds["sigmas"]):
        raise UsageError("noise levels must be finite and >= 0")
    if ds["n_samples"] < 1 or ds["n_points"] < 1:
        raise UsageError("n_samples and n_points must be positive")
    if not 1 <= cfg["complex"]["max_dim"] <= MAX_DIM:
        raise UsageError(f"complex max_dim must be in 1..{MAX_DIM}")
    opt = cfg["optimizer"]
    if opt["lr"] < 0 or opt["batch_size"] < 1 or opt["epochs"] < 0:
        raise UsageError("need lr >= 0, batch_size >= 1, epochs >= 0")
    if cfg["model"]["channels"] < 2 or cfg["model"]["n_layers"] < 1:
        raise UsageError("model needs >= 2 channels and >= 1 layer")
    try:
        CompositeLossConfig(**_loss_kw(cfg))
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None


def _loss_kw(cfg: dict) -> dict:
    d = dict(cfg["loss"])
    d["topo_dims"] = tuple(d.get("topo_dims", (0, 1, 2)))
    return d


def write_config(out: Path, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True), encoding="utf-8")


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")


# datasets

def sample_seed(seed: int, sigma_index: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, sigma_index, index]).generate_state(1)[0])


def dataset_specs(cfg: dict, seed: int) -> list[dict]:
    ds = cfg["dataset"]
    specs = []
    for si, sigma in enumerate(ds["sigmas"]):
        for i in range(ds["n_samples"]):
            label = i % len(ds["structures"])
            specs.append({"structure": ds["structures"][label], "label": label, "sigma": float(sigma),
                          "n": ds["n_points"], "d": ds["ambient_dim"], "seed": sample_seed(seed, si, i),
                          "index": i})
    return specs


def _generate(spec: dict, sigma: float | None = None) -> PointCloud:
    s = spec["sigma"] if sigma is None else sigma
    return gen_synthetic(spec["structure"], spec["n"], spec["d"], s, spec["seed"], label=spec["label"])


def load_dataset(cfg: dict, seed: int, manifest: str | None):
    """Point clouds + specs, from a manifest or generated from the config."""
    if manifest is None:
        specs = dataset_specs(cfg, seed)
        return [_generate(s) for s in specs], specs
    entries, _ = read_manifest(manifest)
    root = Path(manifest).parent
    clouds, specs = [], []
    for e in entries:
        if e.kind != "points":
            raise InvalidInputError(f"manifest entry {e.path} is {e.kind!r}; training uses point clouds")
        clouds.append(load_csv(root / e.path, "points", label=e.label))
        specs.append({**e.meta, "label": e.label})
    return clouds, specs


def cmd_generate(args, cfg: dict) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for spec in dataset_specs(cfg, args.seed):
        pc = _generate(spec)
        name = f"{spec['structure']}_s{spec['sigma']:g}_{spec['index']:05d}.csv"
        save_csv(out / name, pc.points)
        entries.append(ManifestEntry("points", name, spec["label"], [], spec))
    write_manifest(out / "manifest.json", entries, {"seed": args.seed})
    write_config(out, cfg)
    print(f"wrote {len(entries)} samples to {out}")
    return EXIT_OK


# ph / dist / vectorize

def _read_input(path: str, kind: str):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"input {path} not found")
    if p.stat().st_size == 0 or not p.read_text(encoding="utf-8").strip():
        raise UsageError(f"input {path} is empty")
    obj = load_csv(p, kind)
    return obj.distances() if kind == "points" else obj.weights


def cmd_ph(args, cfg: dict) -> int:
    dims = args.dims
    if not dims or min(dims) < 0 or max(dims) + 1 > MAX_DIM:
        raise UsageError(f"dims must lie in 0..{MAX_DIM - 1}")
    dist = _read_input(args.input, args.kind)
    max_scale = math.inf if args.max_scale is None else args.max_scale
    cx = build_rips(dist, max_dim=max(dims) + 1, max_scale=max_scale)
    res = compute_persistence(cx, max_p=max(dims))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    finite_vals = cx.values(1) if cx.count(1) else np.zeros(1)
    grid = np.linspace(0.0, float(finite_vals.max()) or 1.0, args.grid)
    for p in dims:
        d = res.diagrams[p]
        _dump(out / f"diagram_{p}.json", d.to_json())
        (out / f"betti_{p}.csv").write_text(betti_curve(d, grid).to_csv(), encoding="utf-8")
    write_config(out, {**cfg, "ph": {"input": args.input, "kind": args.kind, "dims": dims,
                                     "max_scale": None if math.isinf(max_scale) else max_scale, "grid": args.grid}})
    print(f"wrote diagrams for dims {dims} to {out}")
    return EXIT_OK


def _read_diagram(path: str) -> PersistenceDiagram:
    try:
        return PersistenceDiagram.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
    except FileNotFoundError:
        raise UsageError(f"diagram {path} not found") from None
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"malformed diagram file {path}: {exc}") from None


def cmd_dist(args, cfg: dict) -> int:
    a, b = _read_diagram(args.diagram_a), _read_diagram(args.diagram_b)
    report = metrics_report([a], [b])[str(a.dim)]
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(text, encoding="utf-8")
        write_config(out, {**cfg, "dist": {"a": args.diagram_a, "b": args.diagram_b}})
    print(text)
    return EXIT_OK


def cmd_vectorize(args, cfg: dict) -> int:
    diagrams = [_read_diagram(p) for p in args.diagrams]
    diagrams = [d.truncated() if d.n_essential() else d for d in diagrams]
    vc = cfg["vectorization"]
    if args.params:
        params = ImageParams.from_json(json.loads(Path(args.params).read_text(encoding="utf-8")))
    else:
        params = ImageParams.fit(diagrams, vc["grid_w"], vc["grid_h"], vc["margin"], vc["bandwidth_fraction"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(out / "vectors.csv", np.vstack([vectorize(d, params) for d in diagrams]))
    _dump(out / "image_params.json", params.to_json())
    write_config(out, {**cfg, "vectorize": {"diagrams": args.diagrams}})
    print(f"wrote {len(diagrams)} vectors of length {params.k} to {out}")
    return EXIT_OK


# train / eval

def _targets(specs, task: str):
    if task == "classification":
        return [int(s["label"]) for s in specs]
    return [float(s["sigma"]) for s in specs]


def build_training(cfg: dict, seed: int, manifest: str | None):
    clouds, specs = load_dataset(cfg, seed, manifest)
    task = cfg["loss"]["task"]
    cp = ComplexParams(cfg["complex"]["max_dim"], cfg["complex"]["max_scale"], cfg["complex"]["operator"])
    vc = cfg["vectorization"]
    samples, params = prepare_samples(clouds, _targets(specs, task), cp, cfg["model"]["channels"],
                                      grid_w=vc["grid_w"], grid_h=vc["grid_h"], margin=vc["margin"],
                                      bandwidth_fraction=vc["bandwidth_fraction"])
    return samples, params, specs


def cmd_train(args, cfg: dict) -> int:
    out = Path(args.out)
    cfg = _merge(cfg, {"seed": args.seed})
    write_config(out, cfg)
    samples, params, specs = build_training(cfg, args.seed, args.data)
    loss_cfg = CompositeLossConfig(**_loss_kw(cfg))
    n_out = len(cfg["dataset"]["structures"]) if loss_cfg.task == "classification" else 1
    if loss_cfg.task == "classification" and args.data:
        n_out = max(int(s["label"]) for s in specs) + 1
    oc = cfg["optimizer"]
    history, best = None, math.inf
    if args.resume and (out / "last.json").exists():
        model, opt, _, history, best = load_checkpoint(out / "last.json")
    else:
        mc = cfg["model"]
        model = FlowModel.create(mc["channels"], mc["n_layers"], params, n_out, args.seed, mc["w_scale"],
                                 mc["alpha"], mc["shared_alpha"], mc["step_h"], mc["steps_T"],
                                 cfg["complex"]["operator"])
        opt = OptimizerState(oc["lr"], oc["batch_size"], 0, args.seed)
    model, history = train(samples, model, loss_cfg, opt, oc["epochs"], checkpoint_dir=out,
                           history=history, best=best)
    if oc["epochs"] == 0:
        (out / "last.json").write_text((out / "best.json").read_text(encoding="utf-8"), encoding="utf-8")
    write_log_csv(out / "log.csv", history)
    _dump(out / "history.json", history)
    last = history[-1]
    print(f"epoch {last['epoch']}: total {last['total']:.6g}"
          + (f", accuracy {last['accuracy']:.4f}" if "accuracy" in last else ""))
    return EXIT_OK


def topology_report(Z: np.ndarray, X: np.ndarray, dims) -> dict:
    """Embedding-vs-input diagram distances for one group of samples."""
    _, pz = batch_diagrams(Z, dims)
    _, px = batch_diagrams(X, dims)
    return metrics_report([pz.diagrams[p] for p in dims], [px.diagrams[p] for p in dims])


def noise_report(specs, clouds, dims) -> dict:
    """Mean per-sample distances between each noisy input's diagrams and its noiseless signal's (full scale)."""
    rows = {p: {"bottleneck": [], "wasserstein_q1": [], "betti_rho": []} for p in dims}
    for spec, pc in zip(specs, clouds):
        clean = _generate(spec, sigma=0.0)
        da = compute_persistence(build_rips(pc.distances(), max(dims) + 1), max(dims)).diagrams
        db = compute_persistence(build_rips(clean.distances(), max(dims) + 1), max(dims)).diagrams
        for m, vals in metrics_report([da[p] for p in dims], [db[p] for p in dims]).items():
            for key in rows[int(m)]:
                if vals.get(key) is not None:
                    rows[int(m)][key].append(vals[key])
    return {str(p): {k: (float(np.mean(v)) if v else None) for k, v in r.items()} for p, r in rows.items()}


def evaluate_groups(model: FlowModel, samples, specs, cfg: dict, clouds=None):
    dims = tuple(cfg["eval"]["topo_dims"])
    Z = np.vstack([model.embed(s) for s in samples])
    X = np.vstack([s.input_vector for s in samples])
    out = model.head(Z)
    sigmas = sorted({float(s.get("sigma", 0.0)) for s in specs})
    rows = []
    for sigma in sigmas:
        idx = [i for i, s in enumerate(specs) if float(s.get("sigma", 0.0)) == sigma]
        row = {"sigma": sigma, "n": len(idx)}
        targets = [samples[i].target for i in idx]
        if cfg["loss"]["task"] == "classification":
            pred = np.argmax(out[idx], axis=1)
            row["accuracy"] = float(np.mean(pred == np.asarray(targets)))
            row["f1"] = f1_macro(pred, targets)
        else:
            row["mse"] = float(np.mean((out[idx, 0] - np.asarray(targets, dtype=np.float64)) ** 2))
        row["embedding_vs_input"] = topology_report(Z[idx], X[idx], dims)
        if clouds is not None and all("structure" in specs[i] for i in idx):
            row["input_vs_clean"] = noise_report([specs[i] for i in idx], [clouds[i] for i in idx], dims)
        rows.append(row)
    return {"rows": rows}, Z


def cmd_eval(args, cfg: dict) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise UsageError(f"checkpoint {ckpt} not found")
    if args.config is None and (ckpt.parent / "config.json").exists():
        cfg = load_config(ckpt.parent / "config.json", _overrides(args))
    model, *_ = load_checkpoint(ckpt)
    seed = args.seed if args.seed is not None else cfg.get("seed") or 0
    clouds, specs = load_dataset(cfg, seed, args.data)
    cp = ComplexParams(cfg["complex"]["max_dim"], cfg["complex"]["max_scale"], cfg["complex"]["operator"])
    samples, _ = prepare_samples(clouds, _targets(specs, cfg["loss"]["task"]), cp, model.channels,
                                 image_params=model.image_params)
    report, Z = evaluate_groups(model, samples, specs, cfg, clouds if args.noise_report else None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "report.json", report)
    labels = np.array([[float(s.get("label") if s.get("label") is not None else -1), float(s.get("sigma", 0.0))]
                       for s in specs])
    header = ["label", "sigma"] + [f"z{i}" for i in range(Z.shape[1])]
    save_csv(out / "embeddings.csv", np.hstack([labels, Z]), header)
    write_config(out, {**cfg, "eval": {**cfg["eval"], "checkpoint": str(ckpt)}})
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


# bench

def bench(sizes, repeats: int, seed: int, max_dim: int = 2) -> dict:
    rows = []
    for n in sizes:
        pc = gen_synthetic("circle", n, 2, 0.05, seed)
        other = gen_synthetic("circle", n, 2, 0.05, seed + 1)
        timings = {"rips": [], "persistence": [], "distances": [], "total": []}
        for _ in range(repeats):
            t0 = time.perf_counter()
            cx = build_rips(pc.distances(), max_dim)
            t1 = time.perf_counter()
            d1 = compute_persistence(cx, max_p=max_dim - 1).diagrams
            t2 = time.perf_counter()
            d2 = compute_persistence(build_rips(other.distances(), max_dim), max_p=max_dim - 1).diagrams
            t3 = time.perf_counter()
            for a, b in zip(d1, d2):
                bottleneck_distance(a, b)
                wasserstein_distance(a, b, 1.0)
            t4 = time.perf_counter()
            timings["rips"].append(t1 - t0)
            timings["persistence"].append(t2 - t1)
            timings["distances"].append(t4 - t3)
            timings["total"].append((t2 - t0) + (t4 - t3))
        rows.append({"n": n, "n_simplices": len(cx),
                     **{k: {"min": min(v), "median": statistics.median(v)} for k, v in timings.items()}})
    return {"max_dim": max_dim, "repeats": repeats, "sizes": list(sizes), "rows": rows}


def cmd_bench(args, cfg: dict) -> int:
    if args.repeats < 1 or not args.sizes or min(args.sizes) < 2:
        raise UsageError("need repeats >= 1 and sizes >= 2")
    table = bench(args.sizes, args.repeats, args.seed if args.seed is not None else 0)
    text = json.dumps(table, indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(text, encoding="utf-8")
        write_config(out, {**cfg, "bench": {"sizes": args.sizes, "repeats": args.repeats}})
    print(text)
    return EXIT_OK


# entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cohoflow", description="Cohomological flow experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed_required=False):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--seed", type=int, required=seed_required)
        return p

    def dataset_flags(p):
        p.add_argument("--structures", type=lambda s: s.split(","))
        p.add_argument("--n-samples", type=int)
        p.add_argument("--n-points", type=int)
        p.add_argument("--ambient-dim", type=int)
        p.add_argument("--sigmas", type=_float_list)

    g = common(sub.add_parser("generate", help="write a synthetic dataset and manifest"), seed_required=True)
    dataset_flags(g)
    g.add_argument("--out", required=True)

    p = common(sub.add_parser("ph", help="persistence diagrams and Betti curves of one input"))
    p.add_argument("input")
    p.add_argument("--kind", choices=["points", "matrix"], default="points")
    p.add_argument("--dims", type=_int_list, default=[0, 1])
    p.add_argument("--max-scale", type=float)
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--out", required=True)

    d = common(sub.add_parser("dist", help="bottleneck, Wasserstein and Betti correlation of two diagrams"))
    d.add_argument("diagram_a")
    d.add_argument("diagram_b")
    d.add_argument("--out")

    v = common(sub.add_parser("vectorize", help="persistence images of diagram files"))
    v.add_argument("diagrams", nargs="+")
    v.add_argument("--params", help="ImageParams JSON; fitted on the inputs if omitted")
    v.add_argument("--out", required=True)

    t = common(sub.add_parser("train", help="train a flow model"), seed_required=True)
    t.add_argument("--data", help="dataset manifest; generated from the config if omitted")
    dataset_flags(t)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lam", type=float)
    t.add_argument("--beta", type=float)
    t.add_argument("--resume", action="store_true", help="continue from OUT/last.json")
    t.add_argument("--out", required=True)

    e = common(sub.add_parser("eval", help="evaluate a checkpoint"))
    e.add_argument("checkpoint")
    e.add_argument("--data")
    dataset_flags(e)
    e.add_argument("--noise-report", action="store_true", help="also compare inputs with their noiseless signal")
    e.add_argument("--out", required=True)

    b = common(sub.add_parser("bench", help="timing table across sizes"))
    b.add_argument("--sizes", type=_int_list, default=[50, 100, 200])
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--out")
    return ap


def _overrides(args) -> dict:
    ds = {"structures": getattr(args, "structures", None), "n_samples": getattr(args, "n_samples", None),
          "n_points": getattr(args, "n_points", None), "ambient_dim": getattr(args, "ambient_dim", None),
          "sigmas": getattr(args, "sigmas", None)}
    opt = {"epochs": getattr(args, "epochs", None), "lr": getattr(args, "lr", None),
           "batch_size": getattr(args, "batch_size", None)}
    loss = {"lam": getattr(args, "lam", None), "beta": getattr(args, "beta", None)}
    out = {}
    for key, part in (("dataset", ds), ("optimizer", opt), ("loss", loss)):
        part = {k: v for k, v in part.items() if v is not None}
        if part:
            out[key] = part
    return out


COMMANDS = {"generate": cmd_generate, "ph": cmd_ph, "dist": cmd_dist, "vectorize": cmd_vectorize,
            "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalOverflowError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CohoflowError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
