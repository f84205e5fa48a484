"""Acceptance suite: one PASS/FAIL line per criterion C1..C9.

Runs at desk scale (about 15-20 minutes on one core). Lines are printed as each
criterion finishes and repeated in the terminal summary.
"""

import itertools
import time

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE_LINES
from qecbench.bench import SweepConfig, evaluate, run_sweep, welch_t_test
from qecbench.checks import TOLERANCE, run_suite
from qecbench.dataset import Dataset, Mode, dumps, generate_eval_set, generate_training_set, loads
from qecbench.decoders import TrivialDecoder, build_lookup_decoder
from qecbench.decoders.checkpoint import dumps as ckpt_dumps
from qecbench.decoders.config import ModelConfig
from qecbench.lattice import build_code
from qecbench.noise import ErrorPattern, extract_syndrome, sample_error_patterns, syndrome_batch
from qecbench.training import TrainConfig, train

D3 = build_code(3)


def verdict(capsys, n, ok, detail):
    line = f"C{n} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


# --- independent geometry, written from the lattice description only --------

def oracle_syndrome(d, x_on, z_on):
    """Fired ancilla ids from explicit grid geometry: ancillas in even rows
    count Z errors on their 4-neighbours, the rest count X errors."""
    side = 2 * d - 1
    fired = []
    for k in range(2, side * side + 1, 2):
        r, c = divmod(k - 1, side)
        watched = z_on if r % 2 == 0 else x_on
        parity = 0
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < side and 0 <= cc < side and rr * side + cc + 1 in watched:
                parity ^= 1
        if parity:
            fired.append(k)
    return fired


def x_type_neighbours(d, k):
    side = 2 * d - 1
    r, c = divmod(k - 1, side)
    out = set()
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        rr, cc = r + dr, c + dc
        if 0 <= rr < side and 0 <= cc < side and rr % 2 == 0:
            out.add(rr * side + cc + 1)
    return out


def pattern_from(flags):
    """flags: iterable of (data id, 'X'|'Z') single flips."""
    errors = {}
    for k, kind in flags:
        errors[k] = "".join(sorted(set(errors.get(k, "")) | {kind}))
    return ErrorPattern.from_errors(D3, {k: ("XZ" if v == "XZ" else v) for k, v in errors.items()})


def test_c1_syndrome_oracle(capsys):
    start = time.perf_counter()
    data = D3.data_ids.tolist()
    flags = [(k, kind) for k in data for kind in "XZ"]
    assert len(flags) == 26
    checked = mismatches = 0
    for w in range(3):
        for combo in itertools.combinations(flags, w):
            x_on = {k for k, kind in combo if kind == "X"}
            z_on = {k for k, kind in combo if kind == "Z"}
            got = extract_syndrome(D3, pattern_from(combo)).fired_ids(D3)
            mismatches += got != oracle_syndrome(3, x_on, z_on)
            checked += 1
    elapsed = time.perf_counter() - start
    ok = checked == 1 + 26 + 325 and mismatches == 0 and elapsed < 10
    verdict(capsys, 1, ok, f"{checked} patterns, {mismatches} mismatches, {elapsed:.2f}s (<10s)")


def test_c2_figure_semantics(capsys):
    data = D3.data_ids.tolist()
    problems = []
    interior = 0  # odd-row qubits (4) plus even-row qubits in the middle column (3)
    for k in data:
        expected = x_type_neighbours(3, k)
        fired = set(extract_syndrome(D3, ErrorPattern.from_errors(D3, {k: "Z"})).fired_ids(D3))
        if fired != expected:
            problems.append(("single", k))
        if len(expected) == 2:
            interior += 1
    shared_pairs = 0
    for a, b in itertools.combinations(data, 2):
        shared = x_type_neighbours(3, a) & x_type_neighbours(3, b)
        if not shared:
            continue
        shared_pairs += 1
        fired = set(extract_syndrome(D3, ErrorPattern.from_errors(D3, {a: "Z", b: "Z"})).fired_ids(D3))
        if fired & shared or fired != x_type_neighbours(3, a) ^ x_type_neighbours(3, b):
            problems.append(("pair", a, b))
    centre = set(extract_syndrome(D3, ErrorPattern.from_errors(D3, {13: "Z"})).fired_ids(D3))
    pair_13 = extract_syndrome(D3, ErrorPattern.from_errors(D3, {1: "Z", 3: "Z"})).fired_ids(D3)
    ok = not problems and centre == {12, 14} and 2 not in pair_13 and interior == 7 and shared_pairs > 0
    verdict(capsys, 2, ok, f"{interior} two-neighbour qubits, {shared_pairs} shared-stabilizer pairs, "
                           f"{len(problems)} violations")


def test_c3_gradcheck(capsys):
    start = time.perf_counter()
    results = run_suite()
    elapsed = time.perf_counter() - start
    worst = max(results, key=lambda r: r.max_rel_error)
    n_arch = sum(r.name.startswith("arch:") for r in results)
    ok = all(r.passed for r in results) and n_arch == 7 and elapsed < 120
    verdict(capsys, 3, ok, f"{len(results)} cases ({n_arch} architectures), worst {worst.name} "
                           f"{worst.max_rel_error:.1e} (<{TOLERANCE:g}), {elapsed:.0f}s (<120s)")


@pytest.fixture(scope="module")
def headline():
    """d=3, p=0.01, pool 1e6, eval 1e5, 200 epochs, 5 seeds (C4 reads seeds 0-2)."""
    cfg = SweepConfig(architectures=("CNN", "UNet", "GCN", "GCNII"), probs=(0.01,), seeds=5,
                      pool_size=1_000_000, val_size=100_000, eval_size=100_000, epochs=200)
    start = time.perf_counter()
    report = run_sweep(cfg)
    return report, time.perf_counter() - start


@pytest.mark.slow
def test_c4_headline_ordering(capsys, headline):
    report, elapsed = headline
    rows = [r for r in report.rows if r["seed"] < 3]
    assert not any(r["error"] for r in rows)
    ecr = {a: np.mean([r["ecr"] for r in rows if r["architecture"] == a]) for a in ("CNN", "UNet", "GCN", "GCNII")}
    acc = {a: np.mean([r["overall_accuracy"] for r in rows if r["architecture"] == a]) for a in ecr}
    gap_unet = 100 * (ecr["UNet"] - ecr["CNN"])
    gap_gcnii = 100 * (ecr["GCNII"] - ecr["CNN"])
    worst_run = min(r["overall_accuracy"] for r in rows)
    ok = gap_unet >= 30 and gap_gcnii >= 30 and worst_run >= 0.98 and max(acc.values()) >= 0.995
    detail = ", ".join(f"{a} ECR {100 * ecr[a]:.2f} acc {100 * acc[a]:.2f}" for a in ecr)
    verdict(capsys, 4, ok, f"{detail}; gaps UNet +{gap_unet:.1f} GCNII +{gap_gcnii:.1f} (>=30); "
                           f"min run acc {100 * worst_run:.2f} (>=98); sweep {elapsed / 60:.1f} min")


@pytest.mark.slow
def test_c5_oversmoothing(capsys):
    base = dict(probs=(0.005,), pool_size=1_000_000, val_size=100_000, eval_size=100_000, epochs=200)
    gcn = run_sweep(SweepConfig(architectures=("GCN",), depths=(2, 4, 8, 16, 32), **base)).rows
    gcnii = run_sweep(SweepConfig(architectures=("GCNII",), depths=(32,), **base)).rows
    assert not any(r["error"] for r in gcn + gcnii)
    by_depth = {r["layers"]: r["ecr"] for r in gcn}
    best_depth = max(by_depth, key=lambda L: (by_depth[L], -L))
    ok = by_depth[32] < 0.10 and gcnii[0]["ecr"] >= 0.60 and best_depth <= 8
    curve = " ".join(f"L{L}:{100 * v:.1f}" for L, v in sorted(by_depth.items()))
    verdict(capsys, 5, ok, f"GCN ECR {curve}; GCN-32 <10, GCNII-32 {100 * gcnii[0]['ecr']:.1f} (>=60); "
                           f"best GCN depth {best_depth} (<=8)")


def independent_rescan(code, p, pool, seed):
    """Minimal pattern per syndrome using the geometric oracle's check matrix."""
    x, z = sample_error_patterns(code, p, pool, seed)
    side = code.side
    data = code.data_ids.tolist()
    anc = code.ancilla_ids.tolist()
    h = np.zeros((len(data), len(anc)), np.int64)
    for j, a in enumerate(anc):
        r, c = divmod(a - 1, side)
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < side and 0 <= cc < side:
                h[data.index(rr * side + cc + 1), j] = 1
    even = np.array([((a - 1) // side) % 2 == 0 for a in anc])
    hit = x.any(axis=1) | z.any(axis=1)
    x, z = x[hit].astype(np.int64), z[hit].astype(np.int64)
    syn = np.where(even, z @ h, x @ h) & 1
    weights = x.sum(1) + z.sum(1)
    keys = syn @ (1 << np.arange(len(anc), dtype=np.int64))
    best = {0: (0, (0,) * (2 * len(data)))} if (~hit).any() else {}
    order = np.lexsort((weights, keys))
    for i in order:
        k = int(keys[i])
        cand = (int(weights[i]), tuple(x[i].tolist() + z[i].tolist()))
        cur = best.get(k)
        if cur is None or cand[0] < cur[0] or (cand[0] == cur[0] and cand[1] < cur[1]):
            best[k] = cand
    return best, keys


@pytest.mark.slow
def test_c6_degeneracy_pipeline(capsys):
    checks = []
    for p, pool, seed in [(0.005, 10_000_000, 1), (0.05, 200_000, 2), (0.3, 200_000, 3)]:
        ds = generate_training_set(D3, p, pool, seed)
        best, _ = independent_rescan(D3, p, pool, seed)
        bits = 1 << np.arange(D3.n_ancilla, dtype=np.int64)
        keys = (ds.syndromes.astype(np.int64) @ bits).tolist()
        unique = len(set(keys)) == len(keys)
        minimal = len(best) == len(ds) and all(
            best[k] == (int(xi.sum() + zi.sum()), tuple(xi.tolist() + zi.tolist()))
            for k, xi, zi in zip(keys, ds.x_flags, ds.z_flags))
        checks.append((p, pool, len(ds), unique, minimal))
    big = checks[0][2]
    ok = all(n <= 4096 and u and m for _, _, n, u, m in checks) and 500 <= big <= 2000
    detail = "; ".join(f"p={p} pool={pool:.0e}: {n} records unique={u} minimal={m}" for p, pool, n, u, m in checks)
    verdict(capsys, 6, ok, f"{detail}; p=0.005 count {big} in [500, 2000]")


@pytest.mark.slow
def test_c7_trivial_vs_lookup(capsys):
    p = 0.005
    test_set = generate_eval_set(D3, p, 100_000, 77)
    trivial = evaluate(TrivialDecoder(distance=3).fit(), D3, test_set)
    lookup = evaluate(build_lookup_decoder(generate_training_set(D3, p, 1_000_000, 78)), D3, test_set)
    target = 100 * (1 - p) ** 2
    acc = 100 * trivial.overall_accuracy
    ok = abs(acc - target) <= 0.2 and trivial.error_correction_rate == 0 and lookup.error_correction_rate > 0.5
    verdict(capsys, 7, ok, f"Trivial acc {acc:.3f} vs {target:.3f} (+-0.2), ECR {trivial.error_correction_rate}; "
                           f"Lookup ECR {100 * lookup.error_correction_rate:.1f} (>50)")


def test_c8_determinism(capsys):
    same_data = all(
        dumps(gen(D3, p, n, s)) == dumps(gen(D3, p, n, s))
        for gen, p, n, s in [(generate_training_set, 0.05, 50_000, 9), (generate_eval_set, 0.01, 5000, 9)]
    )
    train_set = generate_training_set(D3, 0.05, 20_000, 3)
    val_set = generate_eval_set(D3, 0.05, 500, 4)
    blobs = []
    for arch in ("GCN", "UNet", "GraphTransformer"):
        pair = [ckpt_dumps(train(ModelConfig.default(arch, seed=11), TrainConfig(3, 0.01, 64, None, 1, 11),
                                 train_set, val_set)) for _ in range(2)]
        blobs.append(pair[0] == pair[1])
    rng = np.random.default_rng(8)
    round_trips = 0
    for _ in range(100):
        d = int(rng.integers(2, 7))
        code = build_code(d)
        n = int(rng.integers(0, 60))
        x = rng.integers(0, 2, (n, code.n_data), dtype=np.uint8)
        z = rng.integers(0, 2, (n, code.n_data), dtype=np.uint8)
        ds = Dataset(d, float(rng.random()), Mode(int(rng.integers(0, 2))), int(rng.integers(0, 2**63)),
                     syndrome_batch(code, x, z), x, z)
        raw = dumps(ds)
        back = loads(raw)
        round_trips += back == ds and dumps(back) == raw
    ok = same_data and all(blobs) and round_trips == 100
    verdict(capsys, 8, ok, f"datasets identical={same_data}, checkpoints identical={blobs}, "
                           f"round trips {round_trips}/100 bit-exact")


@pytest.mark.slow
def test_c9_statistics(capsys, headline):
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(1000):
        a = rng.normal(rng.normal(), rng.uniform(0.1, 3), int(rng.integers(2, 30)))
        b = rng.normal(rng.normal(), rng.uniform(0.1, 3), int(rng.integers(2, 30)))
        ref = stats.ttest_ind(a, b, equal_var=False).pvalue
        worst = max(worst, abs(welch_t_test(a, b)[1] - ref))
    report, _ = headline
    unet = next(c for c in report.summary()["cells"] if c["architecture"] == "UNet")
    test = unet["ttest_vs_cnn"]
    ok = worst < 1e-6 and unet["n_seeds"] == 5 and test["significant"] and test["p_value"] < 0.05
    verdict(capsys, 9, ok, f"max |p - scipy| {worst:.1e} over 1000 pairs (<1e-6); "
                           f"UNet vs CNN ECR p={test['p_value']:.2e} over 5 seeds, significant={test['significant']}")
