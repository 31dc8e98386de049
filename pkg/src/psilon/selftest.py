"""Built-in invariant checks behind `psilon selftest`.

A condensed version of the property suites: each check prints one
pass/fail line so a deployed install can be sanity-checked without the
test tree.
"""

from __future__ import annotations

import itertools

import numpy as np

from .data import SplitSpec, apply_stats, split, standardize, synth_task
from .linalg import make_rng
from .metrics import near_sparsity
from .nets import NetSpec, backward, effective_weights, forward, init_network, resnet_effective_parts
from .pathnorm import (
    empirical_lipschitz,
    improved_bound_crelu,
    naive_crelu_path_norm,
    path_norm_enumerate,
    path_norm_mlp,
    product_bound,
    psilon_closed_form_mlp,
    psilon_closed_form_resnet,
)
from .reparam import L1WN, NONE, proj_l1_sphere
from .training import Regularizer, Splits, TrainPlan, rows_to_csv, train


def _jitter(net, rng, scale=0.5):
    for _, p in net.slots():
        p += scale * rng.standard_normal(p.shape)
    net.touch()


def check_oracle_equivalence(fast: bool):
    rng = make_rng(0)
    n = 40 if fast else 200
    for _ in range(n):
        n_layers = int(rng.integers(1, 5))
        dims = [int(rng.integers(2, 7)) for _ in range(n_layers + 1)]
        ws = [rng.standard_normal((dims[i + 1], dims[i])) for i in range(n_layers)]
        a, b = path_norm_mlp(ws), path_norm_enumerate(ws)
        if abs(a - b) > 1e-10 * max(1.0, abs(b)):
            return False, f"mismatch {a} vs {b}"
    return True, f"{n} nets"


def check_mlp_bound_chain(fast: bool):
    rng = make_rng(1)
    n = 20 if fast else 100
    for trial in range(n):
        spec = NetSpec(
            kind="mlp",
            d_in=int(rng.integers(2, 8)),
            d_out=1,
            hidden=[int(rng.integers(2, 8)) for _ in range(int(rng.integers(1, 3)))],
            mode=NONE,
            out_nonlinearity="sigmoid" if trial % 2 else "identity",
        )
        net = init_network(spec, rng)
        _jitter(net, rng)
        ws = effective_weights(net)
        p1 = path_norm_mlp(ws)
        prod, exact = product_bound(ws)
        lip = empirical_lipschitz(net, 2000, 2.0, make_rng(trial))
        if not (exact and lip <= p1 * (1 + 1e-9) and p1 <= prod * (1 + 1e-12)):
            return False, f"violation at trial {trial}: {lip} / {p1} / {prod}"
    return True, f"{n} nets"


def check_resnet_bound_chain(fast: bool):
    rng = make_rng(2)
    n = 20 if fast else 100
    for trial in range(n):
        width = int(rng.integers(2, 7))
        spec = NetSpec(
            kind="crelu_resnet",
            d_in=int(rng.integers(2, 7)),
            d_out=int(rng.integers(1, 4)),
            hidden=[width] * int(rng.integers(1, 5)),
            mode=NONE,
        )
        net = init_network(spec, rng)
        _jitter(net, rng)
        first, blocks, last = resnet_effective_parts(net)
        improved = improved_bound_crelu(first, blocks, last)
        naive = naive_crelu_path_norm(first, blocks, last)
        lip = empirical_lipschitz(net, 2000, 2.0, make_rng(trial))
        if not (lip <= improved * (1 + 1e-9) and improved <= naive * (1 + 1e-12)):
            return False, f"violation at trial {trial}: {lip} / {improved} / {naive}"
    return True, f"{n} nets"


def check_closed_form_collapse(fast: bool):
    rng = make_rng(3)
    n = 20 if fast else 100
    for _ in range(n):
        spec = NetSpec(kind="mlp", d_in=3, d_out=2, hidden=[4, 5], mode=L1WN)
        net = init_network(spec, rng)
        _jitter(net, rng, 0.7)
        got = path_norm_mlp(effective_weights(net))
        want = psilon_closed_form_mlp([l.g[0] for l in net.layers()[:-1]], net.last.g)
        if abs(got - want) > 1e-10 * max(1.0, abs(want)):
            return False, f"mlp collapse off: {got} vs {want}"
        spec = NetSpec(kind="crelu_resnet", d_in=3, d_out=2, hidden=[4, 4], mode=L1WN)
        net = init_network(spec, rng)
        _jitter(net, rng, 0.7)
        got = improved_bound_crelu(*resnet_effective_parts(net))
        want = psilon_closed_form_resnet(net.first.g[0], [b.g[0] for b in net.hidden], net.last.g)
        if abs(got - want) > 1e-10 * max(1.0, abs(want)):
            return False, f"resnet collapse off: {got} vs {want}"
    return True, f"{n} draws each"


def check_projection(fast: bool):
    rng = make_rng(4)
    n = 100 if fast else 500
    p = proj_l1_sphere(np.array([3.0, 1.0]))
    if not np.allclose(p, [1.0, 0.0]):
        return False, "worked example failed"
    for _ in range(n):
        w = rng.standard_normal(int(rng.integers(2, 9))) * rng.uniform(0.2, 3.0)
        p = proj_l1_sphere(w)
        if abs(np.sum(np.abs(p)) - 1.0) > 1e-12:
            return False, "projection missed the sphere"
        if not np.allclose(proj_l1_sphere(p), p, atol=1e-12):
            return False, "projection not idempotent"
        best, best_d = None, np.inf
        d = w.size
        for r in range(1, d + 1):
            for sup in itertools.combinations(range(d), r):
                s = np.array(sup)
                tau = (np.sum(np.abs(w[s])) - 1.0) / r
                mags = np.abs(w[s]) - tau
                if np.any(mags < 0):
                    continue
                cand = np.zeros(d)
                cand[s] = np.sign(w[s] + 1e-8) * mags
                dist = np.sum((cand - w) ** 2)
                if dist < best_d:
                    best, best_d = cand, dist
        if np.max(np.abs(p - best)) > 1e-8:
            return False, "disagrees with support-enumeration oracle"
    return True, f"{n} vectors"


def check_gradients(fast: bool):
    rng = make_rng(5)
    n = 10 if fast else 50
    h = 1e-6
    for kind in ("mlp", "crelu_resnet"):
        for trial in range(n):
            spec = NetSpec(kind=kind, d_in=3, d_out=2, hidden=[4, 4], mode=L1WN)
            net = init_network(spec, rng)
            _jitter(net, rng, 0.4)
            x = rng.standard_normal((3, 3))
            for _ in range(50):
                _, tr = forward(net, x)
                if all(np.all(np.abs(a) > 1e-3) for a in tr.pres):
                    break
                x = x + 0.02 * rng.standard_normal(x.shape)
            target = rng.standard_normal((3, 2))
            out, tr = forward(net, x)
            grads = backward(net, tr, out - target)

            def loss():
                o, _ = forward(net, x)
                return 0.5 * float(np.sum((o - target) ** 2))

            for name, p in net.slots():
                flat = p.reshape(-1)
                idx = rng.integers(0, flat.size)
                old = flat[idx]
                flat[idx] = old + h
                net.touch()
                up = loss()
                flat[idx] = old - h
                net.touch()
                down = loss()
                flat[idx] = old
                net.touch()
                fd = (up - down) / (2 * h)
                g = grads[name].reshape(-1)[idx]
                if abs(g - fd) > 1e-4 * max(abs(fd), abs(g)) + 1e-7:
                    return False, f"{kind} {name}: {g} vs {fd}"
    return True, f"{n} jittered configurations per architecture"


def check_metric_definitions(fast: bool):
    if near_sparsity(np.zeros(4)) != 1.0:
        return False, "zero vector"
    if abs(near_sparsity(np.array([1.0, 1.0, 0.0, 0.0])) - 0.5) > 1e-15:
        return False, "bit vector"
    if abs(near_sparsity(np.full(4, 0.3))) > 1e-12:
        return False, "uniform vector"
    return True, "definition cases"


def check_training_determinism(fast: bool):
    ds = synth_task("two_gaussians", 120, 4, 0.4, seed=6)
    tr, va, te = split(ds, SplitSpec(train_n=80, seed=7))
    trs = standardize(tr)
    splits = Splits(trs, apply_stats(va, trs), apply_stats(te, trs))
    logs = []
    for _ in range(2):
        spec = NetSpec(kind="mlp", d_in=4, d_out=1, hidden=[6], mode=L1WN)
        net = init_network(spec, make_rng(8))
        plan = TrainPlan(steps=40, batches_per_epoch=5, loss="cross_entropy",
                         regularizer=Regularizer("path_closed_form", 1e-3), seed=9)
        _, rows = train(net, splits, plan)
        logs.append(rows_to_csv(rows))
    return (logs[0] == logs[1]), "byte-identical metrics"


CHECKS = [
    ("oracle equivalence", check_oracle_equivalence),
    ("mlp bound chain", check_mlp_bound_chain),
    ("resnet bound chain", check_resnet_bound_chain),
    ("closed-form collapse", check_closed_form_collapse),
    ("sphere projection", check_projection),
    ("gradient checks", check_gradients),
    ("metric definitions", check_metric_definitions),
    ("training determinism", check_training_determinism),
]


def run(fast: bool = False) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        try:
            ok, detail = fn(fast)
        except Exception as e:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(e).__name__}: {e}"
        all_ok &= ok
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok
