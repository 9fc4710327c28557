"""End-to-end acceptance checks, one PASS/FAIL line per criterion.

Criteria 1-4 drive the full pipeline through the command line (``glseg
segment`` with a JSON config) and read back the files it writes. Criterion 5
runs the property suites against the independent oracles in ``oracles.py``.

The experiments use fixed seeds: dataset seed 0, fidelity sets 0..3 and
initialization seeds 0..19 (run ``r`` pairs init seed ``r`` with fidelity
set ``r % 4``).
"""

import itertools
import json
import time

import numpy as np
import pytest

from glseg import io
from glseg import potential as pot
from glseg.cli import main
from glseg.graph import GraphConfig, build_graph, laplacian
from glseg.segmenter import FidelityData, FixedEps, SolverConfig, energy, gradient, run
from oracles import (
    dense_normalized,
    kink_free_state,
    oracle_energy,
    oracle_gradient_fd,
    random_instance,
    thresholded_energy,
    two_triangles,
)

pytestmark = pytest.mark.slow

MOONS = {
    "dataset": {"kind": "three-moons", "points_per_moon": 500, "ambient_dim": 100,
                "noise_variance": 0.02, "seed": 0},
    "graph": {"n_neighbors": 10, "scale_rank": 10},
    "fidelity": {"per_class": 25, "lambda": 30.0, "seed": 0, "sets": 4},
    "seed": 0,
    "repeat": 20,
}


def segment(tmp_path, cfg):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    t0 = time.perf_counter()
    assert main(["segment", str(path)]) == 0
    elapsed = time.perf_counter() - t0
    out = tmp_path / cfg["output"]
    summary = json.loads((out / "summary.json").read_text())
    metas = [json.loads((out / r["dir"] / "metadata.json").read_text()) for r in summary["runs"]]
    return out, summary, metas, elapsed


def fmt_stats(s):
    return f"mean {100 * s['mean']:.2f}% (sd {100 * s['std']:.2f}%), best {100 * s['best']:.2f}%, {s['count']} runs"


# ---------------------------------------------------------------------------
# criteria 1-4: experiments
# ---------------------------------------------------------------------------


def test_criterion_1_three_moons_fixed_eps(tmp_path, report):
    cfg = dict(MOONS, output="moons_fixed",
               solver={"n_classes": 3, "dt": 0.01, "schedule": {"kind": "fixed", "eps": 1.0, "m_max": 800}})
    _, summary, metas, _ = segment(tmp_path, cfg)
    s = summary["all_points"]
    slowest = max(m["wall_time"] for m in metas)
    sets = {m["fidelity_set"] for m in metas}
    ok = 0.02 <= s["mean"] <= 0.075 and s["count"] >= 20 and len(sets) >= 4 and slowest <= 60
    report("criterion 1 (three moons, fixed eps)", ok,
           f"{fmt_stats(s)}, {len(sets)} fidelity sets; target mean in [2%, 7.5%]; slowest run {slowest:.2f}s <= 60s")


def test_criterion_2_three_moons_annealed_eps(tmp_path, report):
    cfg = dict(MOONS, output="moons_annealed",
               solver={"n_classes": 3, "dt": 0.01,
                       "schedule": {"kind": "annealed", "eps0": 2.0, "eps_final": 0.1, "decrement": 0.1,
                                    "sweeps_per_stage": 40}})
    _, summary, metas, _ = segment(tmp_path, cfg)
    s = summary["all_points"]
    slowest = max(m["wall_time"] for m in metas)
    ok = s["mean"] <= 0.04 and s["best"] <= 0.03 and s["count"] >= 20 and slowest <= 30
    assert all(m["iterations_run"] == 1200 for m in metas)
    report("criterion 2 (three moons, annealed eps)", ok,
           f"{fmt_stats(s)}; target mean <= 4.0%, best <= 3.0%; slowest run {slowest:.2f}s <= 30s")


def test_criterion_3_synthetic_image(tmp_path, report):
    cfg = {
        "dataset": {"kind": "synthetic-image", "width": 100, "height": 100},
        "graph": {"n_neighbors": 30, "scale_rank": 30},
        "solver": {"n_classes": 5, "dt": 0.01, "schedule": {"kind": "fixed", "eps": 1.0, "m_max": 800}},
        "fidelity": {"fraction": 0.04, "lambda": 30.0, "seed": 0},
        "seed": 0,
        "output": "image",
    }
    out, summary, metas, elapsed = segment(tmp_path, cfg)
    accuracy = 1.0 - summary["all_points"]["mean"]
    run_dir = out / "run_000"
    labels = io.read_label_vector(run_dir / "labels.csv").reshape(100, 100)
    masks_ok = all(
        np.array_equal(io.read_pgm(run_dir / f"class_{k}.pgm") == 255, labels == k) for k in range(5)
    )
    ok = accuracy >= 0.995 and masks_ok and elapsed <= 300
    report("criterion 3 (synthetic five-class image)", ok,
           f"accuracy {100 * accuracy:.2f}% (target >= 99.5%), 5 masks emitted={masks_ok}, "
           f"{elapsed:.1f}s end to end <= 300s")


@pytest.fixture(scope="module")
def mnist_idx(tmp_path_factory):
    """The 5,000-image MNIST sample bundled with mlxtend, written out as IDX files."""
    mlxtend_data = pytest.importorskip("mlxtend.data")
    X, y = mlxtend_data.mnist_data()
    d = tmp_path_factory.mktemp("mnist")
    io.write_idx(d / "images-idx3-ubyte.gz", X.reshape(-1, 28, 28).astype(np.uint8))
    io.write_idx(d / "labels-idx1-ubyte.gz", y.astype(np.uint8))
    return d


def test_criterion_4_mnist_desk_scale(tmp_path, mnist_idx, report):
    cfg = {
        "dataset": {"kind": "idx", "images": str(mnist_idx / "images-idx3-ubyte.gz"),
                    "labels": str(mnist_idx / "labels-idx1-ubyte.gz"), "per_class": 300,
                    "subsample_seed": 0, "pca": 50},
        "graph": {"n_neighbors": 10, "scale_rank": 10},
        "solver": {"n_classes": 10, "dt": 0.01,
                   "schedule": {"kind": "annealed", "eps0": 2.0, "eps_final": 0.01, "decrement": 0.1,
                                "sweeps_per_stage": 40}},
        "fidelity": {"fraction": 0.1, "lambda": 30.0, "seed": 0, "sets": 5},
        "seed": 0,
        "repeat": 5,
        "output": "mnist",
    }
    out, summary, metas, _ = segment(tmp_path, cfg)
    s = summary["all_points"]
    worst = max(s["errors"])
    slowest = max(m["wall_time"] for m in metas)
    conf_ok = True
    for r in summary["runs"]:
        text = (out / r["dir"] / "confusion.csv").read_text().splitlines()
        conf_ok &= text[0] == "obtained/true," + ",".join(map(str, range(10))) and len(text) == 11
    rows = np.array([[int(v) for v in line.split(",")[1:]] for line in text[1:]])
    conf_ok &= rows.sum() == 3000 and np.array_equal(rows.sum(axis=0), [300] * 10)
    ok = worst <= 0.15 and s["count"] >= 5 and metas[0]["n"] == 3000 and conf_ok and slowest <= 600
    report("criterion 4 (MNIST, 3,000 digits)", ok,
           f"{fmt_stats(s)}, worst {100 * worst:.2f}% (target <= 15%); confusion emitted={conf_ok}; "
           f"slowest run {slowest:.1f}s <= 600s")


# ---------------------------------------------------------------------------
# criterion 5: property suites
# ---------------------------------------------------------------------------


def test_criterion_5a_gradient_matches_finite_differences(report):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        K = int(rng.integers(2, 6))
        n = int(rng.integers(4, 12))
        g = random_instance(rng, n=n)
        u = kink_free_state(rng, n, K)
        fid = FidelityData([0], [int(rng.integers(K))], 30.0)
        eps = float(rng.uniform(0.1, 2.0))
        grad = gradient(u, g, fid, eps)
        fd = oracle_gradient_fd(u, lambda v: energy(v, g, fid, eps).total)
        worst = max(worst, np.linalg.norm(fd - grad) / np.linalg.norm(grad))
    report("criterion 5a (gradient vs central differences)", worst <= 1e-5,
           f"1000 kink-avoiding states, worst relative error {worst:.2e} <= 1e-5")


def test_criterion_5b_label_permutation_invariance(report):
    worst = 0.0
    for K in (2, 3, 5):
        rng = np.random.default_rng(K)
        g = build_graph(rng.normal(size=(150, 4)), GraphConfig(10, 10))
        for _ in range(100):
            u = rng.uniform(-0.5, K - 0.5, size=150)
            perm = rng.permutation(K)
            lab = pot.clamp_labels(pot.label_of(u), K)
            v = perm[lab] + (u - lab)
            a = energy(u, g, FidelityData.empty(), 1.0).smoothing
            b = energy(v, g, FidelityData.empty(), 1.0).smoothing
            worst = max(worst, abs(a - b))
    report("criterion 5b (label permutation invariance)", worst <= 1e-12,
           f"K in {{2,3,5}} x 100 states, worst deviation {worst:.1e} <= 1e-12")


def test_criterion_5c_laplacian_spectrum(report):
    rng = np.random.default_rng(7)
    lo, hi, kernel = np.inf, -np.inf, 0.0
    for _ in range(50):
        n = int(rng.integers(5, 201))
        N = int(rng.integers(1, min(15, n - 1) + 1))
        M = int(rng.integers(1, N + 1))
        X = rng.normal(size=(n, int(rng.integers(1, 6)))) * rng.uniform(0.1, 10)
        g = build_graph(X, GraphConfig(N, M))
        L = laplacian(g).toarray()
        ev = np.linalg.eigvalsh(L)
        lo, hi = min(lo, ev.min()), max(hi, ev.max())
        kernel = max(kernel, np.abs(L @ np.sqrt(g.degrees)).max())
    ok = lo >= -1e-10 and hi <= 2 + 1e-10 and kernel <= 1e-10
    report("criterion 5c (Laplacian spectrum)", ok,
           f"50 graphs n<=200, eigenvalues in [{lo:.1e}, {hi:.12f}], max |L D^1/2 1| = {kernel:.1e}")


def test_criterion_5d_two_triangles(report):
    g = two_triangles()
    fid = FidelityData([0, 5], [0, 1], 30.0)
    target = (0, 0, 0, 1, 1, 1)
    What = dense_normalized(g)
    energies = {lab: thresholded_energy(lab, What, {0: 0, 5: 1}, 30.0, 1.0)
                for lab in itertools.product((0, 1), repeat=6)}
    best = min(energies.values())
    oracle_ok = energies[target] == best and sum(e == best for e in energies.values()) == 1
    hits = 0
    for seed in range(100):
        res = run(g, fid, SolverConfig(2, dt=0.01, m_max=500, schedule=FixedEps(1.0), seed=seed))
        hits += tuple(res.labels.tolist()) == target
    report("criterion 5d (two-triangle recovery)", hits >= 95 and oracle_ok,
           f"{hits}/100 seeds recover the partition (target >= 95); "
           f"brute force over 64 labelings: target is the unique minimum={oracle_ok}")


def test_criterion_5e_energy_oracle(report):
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(50):
        g = random_instance(rng, n=8)
        K = int(rng.integers(2, 6))
        u = rng.uniform(-0.5, K - 0.5, size=8)
        idx = rng.choice(8, size=int(rng.integers(0, 4)), replace=False)
        labels = rng.integers(0, K, size=idx.size)
        lam = float(rng.uniform(1, 50))
        eps = float(rng.uniform(0.05, 3))
        e = energy(u, g, FidelityData(idx, labels, lam), eps).total
        ref = sum(oracle_energy(u, dense_normalized(g), dict(zip(idx.tolist(), labels.tolist())), lam, eps))
        worst = max(worst, abs(e - ref) / abs(ref))
    report("criterion 5e (energy vs direct summation)", worst <= 1e-12,
           f"50 random 8-vertex instances, worst relative deviation {worst:.1e} <= 1e-12")


def test_criterion_5f_determinism_across_workers(tmp_path, report):
    base = dict(MOONS, repeat=2, cache_dir=str(tmp_path / "cache"),
                solver={"n_classes": 3, "schedule": {"kind": "fixed", "eps": 1.0, "m_max": 800}})
    outputs = {}
    for workers, attempt in itertools.product((1, 8), ("a", "b")):
        cfg = dict(base, workers=workers, output=f"w{workers}{attempt}")
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert main(["segment", str(path)]) == 0
        outputs[(workers, attempt)] = [
            (tmp_path / cfg["output"] / f"run_{r:03d}" / "labels.csv").read_bytes() for r in range(2)
        ]
    ok = len({tuple(v) for v in outputs.values()}) == 1
    report("criterion 5f (determinism, 1 and 8 workers)", ok,
           "label files byte-identical across two runs each with 1 and 8 worker threads" if ok
           else "label files differ")
