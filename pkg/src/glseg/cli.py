"""Command-line entry point: ``glseg generate | segment | evaluate``.

``segment`` is driven by a JSON run configuration; see README.md for the
schema. Exit codes: 0 success, 1 validation error, 2 runtime/numeric error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import datasets as ds
from . import io
from .errors import ConfigurationError, DegenerateScaleError, DivergenceError, FormatError
from .evaluation import aggregate, confusion, error_rate, format_confusion
from .graph import GraphConfig, NeighborGraph, build_graph
from .segmenter import AnnealedEps, FidelityData, FixedEps, SolverConfig, run

logger = logging.getLogger("glseg")

FORMAT_VERSION = 1

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class ConfigError(ConfigurationError):
    """Run configuration problem, reported with the offending field."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

_DATASET_KINDS = ("three-moons", "synthetic-image", "image", "features", "idx")


def _get(d: dict, key: str, where: str, typ, default=None, required=False, check=None, why=""):
    name = f"{where}.{key}"
    if key not in d or d[key] is None:
        if required:
            raise ConfigError(name, "required")
        return default
    v = d[key]
    if typ is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if typ is int and isinstance(v, bool) or not isinstance(v, typ):
        raise ConfigError(name, f"expected {typ.__name__}, got {type(v).__name__}")
    if check is not None and not check(v):
        raise ConfigError(name, why or f"invalid value {v!r}")
    return v


def _path(d: dict, key: str, where: str, base: Path, required=True) -> Path | None:
    p = _get(d, key, where, str, required=required)
    if p is None:
        return None
    path = (base / p) if not Path(p).is_absolute() else Path(p)
    if not path.exists():
        raise ConfigError(f"{where}.{key}", f"file not found: {path}")
    return path


@dataclass
class RunConfig:
    dataset: dict
    graph: GraphConfig
    solver: SolverConfig
    fidelity: dict
    output: Path
    seed: int = 0
    repeat: int = 1
    workers: int = 1
    cache_dir: Path | None = None
    export_graph: bool = False
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict, base: Path = Path(".")) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "expected a JSON object")
        dsec = _get(raw, "dataset", "<root>", dict, required=True)
        kind = _get(dsec, "kind", "dataset", str, required=True,
                    check=lambda k: k in _DATASET_KINDS, why=f"must be one of {_DATASET_KINDS}")
        dataset = {"kind": kind}
        if kind == "three-moons":
            dataset["points_per_moon"] = _get(dsec, "points_per_moon", "dataset", int, 500, check=lambda v: v > 0)
            dataset["ambient_dim"] = _get(dsec, "ambient_dim", "dataset", int, 100, check=lambda v: v >= 2)
            dataset["noise_variance"] = _get(dsec, "noise_variance", "dataset", float, 0.02, check=lambda v: v >= 0)
            dataset["seed"] = _get(dsec, "seed", "dataset", int, 0, check=lambda v: v >= 0)
        elif kind == "synthetic-image":
            dataset["width"] = _get(dsec, "width", "dataset", int, 100, check=lambda v: v >= 50)
            dataset["height"] = _get(dsec, "height", "dataset", int, 100, check=lambda v: v >= 50)
        elif kind == "image":
            dataset["path"] = _path(dsec, "path", "dataset", base)
            dataset["labels"] = _path(dsec, "labels", "dataset", base, required=False)
        elif kind == "features":
            dataset["path"] = _path(dsec, "path", "dataset", base)
            dataset["labels"] = _path(dsec, "labels", "dataset", base, required=False)
        else:
            dataset["images"] = _path(dsec, "images", "dataset", base)
            dataset["labels"] = _path(dsec, "labels", "dataset", base)
            dataset["per_class"] = _get(dsec, "per_class", "dataset", int, None, check=lambda v: v > 0)
            dataset["subsample_seed"] = _get(dsec, "subsample_seed", "dataset", int, 0, check=lambda v: v >= 0)
        if kind in ("features", "idx"):
            dataset["pca"] = _get(dsec, "pca", "dataset", int, None, check=lambda v: v > 0)

        gsec = _get(raw, "graph", "<root>", dict, {})
        graph = GraphConfig(
            _get(gsec, "n_neighbors", "graph", int, 10, check=lambda v: v >= 1),
            _get(gsec, "scale_rank", "graph", int, 10, check=lambda v: v >= 1),
        )
        if graph.scale_rank > graph.n_neighbors:
            raise ConfigError("graph.scale_rank", "must not exceed graph.n_neighbors")

        ssec = _get(raw, "solver", "<root>", dict, required=True)
        schedule_sec = _get(ssec, "schedule", "solver", dict, {"kind": "fixed"})
        skind = _get(schedule_sec, "kind", "solver.schedule", str, "fixed",
                     check=lambda k: k in ("fixed", "annealed"), why="must be 'fixed' or 'annealed'")
        where = "solver.schedule"
        m_max = 0
        if skind == "fixed":
            schedule = FixedEps(_get(schedule_sec, "eps", where, float, 1.0, check=lambda v: v > 0))
            m_max = _get(schedule_sec, "m_max", where, int, 800, check=lambda v: v >= 0)
        else:
            schedule = AnnealedEps(
                _get(schedule_sec, "eps0", where, float, 2.0, check=lambda v: v > 0),
                _get(schedule_sec, "eps_final", where, float, 0.1, check=lambda v: v > 0),
                _get(schedule_sec, "decrement", where, float, 0.1, check=lambda v: 0 < v < 1,
                     why="must lie in (0, 1)"),
                _get(schedule_sec, "sweeps_per_stage", where, int, 40, check=lambda v: v >= 1),
            )
            if schedule.eps0 <= schedule.eps_final:
                raise ConfigError(f"{where}.eps0", "must exceed eps_final")
        seed = _get(raw, "seed", "<root>", int, 0, check=lambda v: 0 <= v < 2**64)
        solver = SolverConfig(
            n_classes=_get(ssec, "n_classes", "solver", int, required=True, check=lambda v: v >= 2),
            dt=_get(ssec, "dt", "solver", float, 0.01, check=lambda v: v > 0),
            m_max=m_max,
            schedule=schedule,
            seed=seed,
            init_fidelity=_get(ssec, "init_fidelity", "solver", bool, True),
        )

        fsec = _get(raw, "fidelity", "<root>", dict, {})
        fidelity = {
            "lambda": _get(fsec, "lambda", "fidelity", float, 30.0, check=lambda v: v > 0),
            "seed": _get(fsec, "seed", "fidelity", int, 0, check=lambda v: v >= 0),
            "sets": _get(fsec, "sets", "fidelity", int, 1, check=lambda v: v >= 1),
            "per_class": _get(fsec, "per_class", "fidelity", int, None, check=lambda v: v >= 1),
            "fraction": _get(fsec, "fraction", "fidelity", float, None, check=lambda v: 0 < v <= 1,
                             why="must lie in (0, 1]"),
            "path": _path(fsec, "path", "fidelity", base, required=False),
        }
        chosen = [k for k in ("per_class", "fraction", "path") if fidelity[k] is not None]
        if len(chosen) > 1:
            raise ConfigError("fidelity", f"give only one of per_class, fraction, path (got {chosen})")

        out = _get(raw, "output", "<root>", str, "runs")
        cache = _get(raw, "cache_dir", "<root>", str, None)
        return cls(
            dataset=dataset,
            graph=graph,
            solver=solver,
            fidelity=fidelity,
            output=Path(out) if Path(out).is_absolute() else base / out,
            seed=seed,
            repeat=_get(raw, "repeat", "<root>", int, 1, check=lambda v: v >= 1),
            workers=_get(raw, "workers", "<root>", int, 1, check=lambda v: v >= 1),
            cache_dir=None if cache is None else (Path(cache) if Path(cache).is_absolute() else base / cache),
            export_graph=_get(raw, "export_graph", "<root>", bool, False),
            raw=raw,
        )

    def echo(self) -> dict:
        """Fully resolved configuration, JSON-serializable."""
        def conv(v):
            if isinstance(v, Path):
                return str(v)
            if isinstance(v, dict):
                return {k: conv(x) for k, x in v.items()}
            return v
        s = self.solver.schedule
        schedule = ({"kind": "fixed", "eps": s.eps, "m_max": self.solver.m_max} if isinstance(s, FixedEps) else
                    {"kind": "annealed", "eps0": s.eps0, "eps_final": s.eps_final,
                     "decrement": s.decrement, "sweeps_per_stage": s.sweeps_per_stage})
        return {
            "dataset": conv(self.dataset),
            "graph": {"n_neighbors": self.graph.n_neighbors, "scale_rank": self.graph.scale_rank},
            "solver": {"n_classes": self.solver.n_classes, "dt": self.solver.dt, "schedule": schedule,
                       "init_fidelity": self.solver.init_fidelity},
            "fidelity": conv(self.fidelity),
            "seed": self.seed,
            "repeat": self.repeat,
            "workers": self.workers,
            "output": str(self.output),
            "cache_dir": None if self.cache_dir is None else str(self.cache_dir),
            "export_graph": self.export_graph,
        }


# ---------------------------------------------------------------------------
# dataset loading and graph caching
# ---------------------------------------------------------------------------


@dataclass
class LoadedData:
    features: np.ndarray
    truth: np.ndarray | None
    image_shape: tuple[int, int] | None = None


def load_dataset(dataset: dict) -> LoadedData:
    kind = dataset["kind"]
    if kind == "three-moons":
        X, y = ds.three_moons(ds.ThreeMoonsParams(
            points_per_moon=dataset["points_per_moon"], ambient_dim=dataset["ambient_dim"],
            noise_variance=dataset["noise_variance"], seed=dataset["seed"]))
        return LoadedData(X, y)
    if kind == "synthetic-image":
        im = ds.synthetic_five_class_image(dataset["width"], dataset["height"])
        return LoadedData(im.features, im.ground_truth, (im.height, im.width))
    if kind == "image":
        im = ds.featurize_image(io.read_pgm(dataset["path"]))
        truth = io.read_label_vector(dataset["labels"]) if dataset.get("labels") else None
        if truth is not None and truth.size != im.n:
            raise ConfigError("dataset.labels", f"{truth.size} labels for {im.n} pixels")
        return LoadedData(im.features, truth, (im.height, im.width))
    if kind == "features":
        X = io.read_features(dataset["path"])
        truth = io.read_label_vector(dataset["labels"]) if dataset.get("labels") else None
        if truth is not None and truth.size != X.shape[0]:
            raise ConfigError("dataset.labels", f"{truth.size} labels for {X.shape[0]} points")
    else:
        pixels, truth = io.read_mnist(dataset["images"], dataset["labels"])
        if dataset.get("per_class"):
            sel = ds.subsample_per_class(truth, dataset["per_class"], dataset["subsample_seed"])
            pixels, truth = pixels[sel], truth[sel]
        X = pixels.astype(np.float64) / 255.0
    if dataset.get("pca"):
        X = ds.pca_project(ds.pca_fit(X, dataset["pca"]), X)
    return LoadedData(X, truth)


def _graph_key(X: np.ndarray, cfg: GraphConfig) -> str:
    h = hashlib.sha256(np.ascontiguousarray(X, dtype="<f8").tobytes())
    h.update(f"{X.shape}|{cfg.n_neighbors}|{cfg.scale_rank}".encode())
    return h.hexdigest()[:32]


def graph_for(X: np.ndarray, cfg: GraphConfig, cache_dir: Path | None) -> NeighborGraph:
    if cache_dir is None:
        return build_graph(X, cfg)
    path = Path(cache_dir) / f"graph-{_graph_key(X, cfg)}.npz"
    if path.exists():
        z = np.load(path)
        logger.info("graph cache hit %s", path)
        return NeighborGraph(z["indptr"], z["indices"], z["weights"], z["degrees"], z["normalized"])
    g = build_graph(X, cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, indptr=g.indptr, indices=g.indices, weights=g.weights, degrees=g.degrees, normalized=g.normalized)
    return g


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.dataset == "three-moons":
        params = ds.ThreeMoonsParams(points_per_moon=args.points_per_moon, ambient_dim=args.ambient_dim,
                                     noise_variance=args.noise_variance, seed=args.seed)
        X, y = ds.three_moons(params)
        if args.format == "binary":
            feat_path = out / "features.bin"
            io.write_features_binary(feat_path, X)
        else:
            feat_path = out / "features.csv"
            io.write_features_csv(feat_path, X)
        io.write_labels_csv(out / "labels.csv", y)
        info = {"dataset": "three-moons", "seed": args.seed, "n": int(X.shape[0]), "d": int(X.shape[1]),
                "features": str(feat_path), "labels": str(out / "labels.csv")}
    else:
        lab = ds.synthetic_five_class_label_map(args.width, args.height)
        io.write_pgm(out / "image.pgm", ds.label_map_to_image(lab))
        io.write_labels_csv(out / "labels.csv", lab.reshape(-1))
        info = {"dataset": "image", "width": args.width, "height": args.height,
                "image": str(out / "image.pgm"), "labels": str(out / "labels.csv")}
    print(json.dumps(info))
    return EXIT_OK


def _fidelity_sets(cfg: RunConfig, truth: np.ndarray | None, n: int) -> list[tuple[int | None, FidelityData]]:
    f = cfg.fidelity
    lam = f["lambda"]
    if f["path"] is not None:
        idx, lab = io.read_index_label_csv(f["path"])
        return [(None, FidelityData(idx, lab, lam))]
    if f["per_class"] is None and f["fraction"] is None:
        return [(None, FidelityData.empty())]
    if truth is None:
        raise ConfigError("fidelity", "sampling fidelity points needs ground-truth labels (dataset.labels)")
    sets = []
    for s in range(f["sets"]):
        seed = f["seed"] + s
        idx = ds.sample_fidelity(truth, per_class=f["per_class"], fraction=f["fraction"], seed=seed)
        sets.append((seed, FidelityData(idx, truth[idx], lam)))
    return sets


def segment(cfg: RunConfig) -> dict:
    """Run a full experiment described by ``cfg`` and write its outputs."""
    data = load_dataset(cfg.dataset)
    X, truth = data.features, data.truth
    K = cfg.solver.n_classes
    if truth is not None and (truth.min() < 0 or truth.max() >= K):
        raise ConfigError("solver.n_classes", f"ground truth has labels outside [0, {K - 1}]")
    cfg.graph.validate(X.shape[0])
    graph = graph_for(X, cfg.graph, cfg.cache_dir)
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    if cfg.export_graph:
        io.write_edges_csv(out / "graph_edges.csv", graph)
    fsets = _fidelity_sets(cfg, truth, X.shape[0])
    for s, (fseed, fid) in enumerate(fsets):
        fid.validate(X.shape[0], K)
        io.write_labels_csv(out / f"fidelity_{s}.csv", fid.labels, fid.indices)

    summary_runs = []
    errors_all, errors_unlabeled, confusions = [], [], []
    for r in range(cfg.repeat):
        s = r % len(fsets)
        fseed, fid = fsets[s]
        run_seed = (cfg.seed + r) % 2**64
        solver = SolverConfig(K, cfg.solver.dt, cfg.solver.m_max, cfg.solver.schedule, run_seed,
                              cfg.solver.init_fidelity)
        res = run(graph, fid, solver, workers=cfg.workers)
        rdir = out / f"run_{r:03d}"
        rdir.mkdir(exist_ok=True)
        io.write_result_csv(rdir / "labels.csv", res.labels, res.final_state)
        io.write_energy_csv(rdir / "energy.csv", res.energy_trace, res.eps_trace)
        meta = {
            "format_version": FORMAT_VERSION,
            "glseg_version": __version__,
            "config": cfg.echo(),
            "run": r,
            "init_seed": run_seed,
            "fidelity_set": s,
            "fidelity_seed": fseed,
            "fidelity_count": len(fid),
            "iterations_run": res.iterations_run,
            "wall_time": res.wall_time,
            "warnings": res.warnings,
            "n": int(X.shape[0]),
            "n_edges": graph.n_edges,
        }
        if truth is not None:
            meta["error_all"] = error_rate(res.labels, truth)
            meta["error_unlabeled"] = error_rate(res.labels, truth, exclude=fid.indices) if len(fid) < truth.size else None
            errors_all.append(meta["error_all"])
            if meta["error_unlabeled"] is not None:
                errors_unlabeled.append(meta["error_unlabeled"])
            cm = confusion(res.labels, truth, K)
            confusions.append(cm)
            io.write_confusion_csv(rdir / "confusion.csv", cm)
        if data.image_shape is not None:
            h, w = data.image_shape
            lab_img = res.labels.reshape(h, w)
            for k in range(K):
                io.write_pgm(rdir / f"class_{k}.pgm", np.where(lab_img == k, 255, 0).astype(np.uint8))
        (rdir / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        logger.info("run %d: %s", r, {k: meta[k] for k in ("error_all", "wall_time") if k in meta})
        summary_runs.append({"run": r, "dir": rdir.name, "error_all": meta.get("error_all"),
                             "error_unlabeled": meta.get("error_unlabeled"), "wall_time": res.wall_time})

    summary = {"format_version": FORMAT_VERSION, "config": cfg.echo(), "runs": summary_runs}
    if errors_all:
        summary["all_points"] = aggregate(errors_all).to_dict()
        best = int(np.argmin(errors_all))
        summary["best_run"] = best
        summary["best_confusion"] = confusions[best].tolist()
        if errors_unlabeled:
            summary["unlabeled_points"] = aggregate(errors_unlabeled).to_dict()
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _load_config(path: Path) -> dict:
    if not path.exists():
        raise ConfigError("config", f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path}: invalid JSON ({exc})") from None


def cmd_segment(args) -> int:
    path = Path(args.config)
    raw = _load_config(path)
    for key in ("seed", "repeat", "workers", "output"):
        v = getattr(args, key)
        if v is not None:
            raw[key] = v
    cfg = RunConfig.from_dict(raw, base=path.parent)
    summary = segment(cfg)
    if "all_points" in summary:
        st = summary["all_points"]
        print(f"runs={st['count']} mean_error={st['mean']:.4f} std={st['std']:.4f} best={st['best']:.4f}")
        print(f"confusion of best run ({summary['runs'][summary['best_run']]['dir']}), rows = obtained:")
        print(format_confusion(np.asarray(summary["best_confusion"])))
    print(f"outputs written to {cfg.output}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pi, pl = io.read_index_label_csv(args.predicted)
    ti, tl = io.read_index_label_csv(args.truth)
    if pi.size != ti.size:
        raise ConfigError("predicted", f"{pi.size} predictions but {ti.size} truth labels")
    if not (np.array_equal(np.sort(pi), np.arange(pi.size)) and np.array_equal(np.sort(ti), np.arange(ti.size))):
        raise ConfigError("predicted", "indices must cover 0..n-1 exactly once in both files")
    pred = np.empty(pi.size, np.int64)
    pred[pi] = pl
    truth = np.empty(ti.size, np.int64)
    truth[ti] = tl
    K = args.classes
    m = confusion(pred, truth, K)
    report = {"n": int(pred.size), "error_all": error_rate(pred, truth)}
    if args.fidelity:
        fi, _ = io.read_index_label_csv(args.fidelity)
        report["error_unlabeled"] = error_rate(pred, truth, exclude=fi)
    print(json.dumps(report))
    print(format_confusion(m))
    if args.confusion:
        io.write_confusion_csv(args.confusion, m)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glseg", description="Multiclass diffuse-interface segmentation on graphs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset to disk")
    g.add_argument("dataset", choices=["three-moons", "image"])
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--points-per-moon", type=int, default=500)
    g.add_argument("--ambient-dim", type=int, default=100)
    g.add_argument("--noise-variance", type=float, default=0.02)
    g.add_argument("--format", choices=["csv", "binary"], default="csv", help="feature file format")
    g.add_argument("--width", type=int, default=100)
    g.add_argument("--height", type=int, default=100)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("segment", help="run the solver as described by a JSON config")
    s.add_argument("config")
    s.add_argument("--seed", type=int, default=None, help="override the base initialization seed")
    s.add_argument("--repeat", type=int, default=None)
    s.add_argument("--workers", type=int, default=None, help="threads per sweep")
    s.add_argument("--output", default=None, help="override the output directory")
    s.set_defaults(func=cmd_segment)

    e = sub.add_parser("evaluate", help="score predicted labels against ground truth")
    e.add_argument("predicted", help="CSV index,label[,u]")
    e.add_argument("truth", help="CSV index,label")
    e.add_argument("--classes", "-K", type=int, required=True)
    e.add_argument("--fidelity", help="CSV of labeled points to exclude for the second error figure")
    e.add_argument("--confusion", help="write the confusion matrix CSV here")
    e.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DegenerateScaleError, DivergenceError, FloatingPointError, MemoryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
