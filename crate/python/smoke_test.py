#!/usr/bin/env python3
"""Smoke test for the sdpo_py extension module.

Builds nothing itself: run `cargo build -p sdpo-py` first, then
`python3 python/smoke_test.py`. The script locates the cdylib in the
cargo target directory and loads it as the module `sdpo_py`.
"""

import importlib.util
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        ROOT / "target" / profile / name
        for profile in ("debug", "release")
        for name in ("libsdpo_py.so", "libsdpo_py.dylib", "sdpo_py.dll")
    ]
    lib = next((p for p in candidates if p.exists()), None)
    if lib is None:
        sys.exit("extension not found; run `cargo build -p sdpo-py` first")
    tmp = tempfile.mkdtemp(prefix="sdpo_py_")
    target = pathlib.Path(tmp) / "sdpo_py.so"
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("sdpo_py", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def approx(a, b, eps=1e-9):
    assert abs(a - b) < eps, f"{a} != {b} (eps {eps})"


def main():
    sdpo = load_module()

    # Divergences.
    approx(sdpo.kl_divergence([0.5, 0.5], [0.5, 0.5]), 0.0)
    approx(sdpo.kl_divergence([0.5, 0.5], [0.9, 0.1]), 0.510826, 1e-6)
    approx(sdpo.jsd([0.8, 0.2], [0.2, 0.8]), 0.192745, 1e-6)

    # Truncation.
    indices, mass, tail = sdpo.truncate_top_k([0.5, 0.3, 0.1, 0.1], 2)
    assert indices == [0, 1] and mass == [0.5, 0.3]
    approx(tail, 0.2)

    # Advantages and the magnitude identity.
    adv = sdpo.grpo_advantages([True, True, False, False])
    assert adv == [1.0, 1.0, -1.0, -1.0]
    for g in (4, 8, 12):
        for k in range(g + 1):
            rewards = [i < k for i in range(g)]
            p = k / g
            approx(
                sdpo.total_update_magnitude(rewards),
                2 * g * math.sqrt(p * (1 - p)),
            )

    # Weights: symmetric, unimodal, unit mean over the active set.
    approx(sdpo.raw_weight(0.5, 0.5), 0.5)
    approx(sdpo.raw_weight(0.25, 0.5), sdpo.raw_weight(0.75, 0.5))
    w = sdpo.normalize_weights([0.25, 0.165, 0.0], 0.5)
    active = [x for x in w if x > 0]
    approx(sum(active) / len(active), 1.0, 1e-12)

    # Learnability bounds.
    approx(sdpo.exact_kl_normalized(0.5, 10.0), math.log(math.cosh(0.1)), 1e-12)
    approx(sdpo.leading_term(10.0), 0.005)
    assert sdpo.residual_slope(0.5) < -3.5
    assert sdpo.residual_slope(0.2) < -2.5
    for p in (0.1, 0.3, 0.7):
        scaled = sdpo.exact_kl_normalized(p, 100.0) * 2 * 100.0**2
        assert 0.95 < scaled < 1.05

    # Task + policy round trips.
    task = sdpo.Task.generate(seed=7, num_questions=8)
    assert task.num_questions == 8 and task.vocab_size == 8
    again = sdpo.Task.from_json(task.to_json())
    assert again.to_json() == task.to_json()

    policy = sdpo.Policy()
    uniform = policy.student_dist(task, 0, [])
    # Fresh weights are zero, so only the difficulty bias shapes the dist.
    bias = task.difficulty_biases()[0]
    expected_max = math.exp(bias) / (math.exp(bias) + 7)
    approx(max(uniform), expected_max, 1e-12)
    teacher = policy.teacher_dist(task, 0, [])
    assert max(teacher) >= max(uniform)  # feedback bonus concentrates mass

    # Training: short run, deterministic, improves pass rate on average.
    config = '{"method": "sc_sdpo", "steps": 30, "seed": 1}'
    csv_a, trained = sdpo.run_training(config, task)
    csv_b, _ = sdpo.run_training(config, task)
    assert csv_a == csv_b, "training must be deterministic"
    rows = csv_a.strip().split("\n")
    assert len(rows) == 31 and rows[0].startswith("step,mean_pass_rate")
    before = sum(policy.pass_rates(task, 16, 0)) / task.num_questions
    after = sum(trained.pass_rates(task, 16, 0)) / task.num_questions
    assert after >= before, f"pass rate fell: {before:.3f} -> {after:.3f}"

    # Gradient oracle and the flat-advantage table.
    assert sdpo.gradcheck_max_error(0, 2) < 1e-5
    table = sdpo.flat_advantage_csv(policy, task, rollouts=8, seed=0)
    assert table.startswith("p_hat,questions,rollouts,kl_mean")

    print("smoke test: all checks passed")


if __name__ == "__main__":
    main()
