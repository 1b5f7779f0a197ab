"""Smoke test for the kme_py extension.

Build and install first:  pip install --no-build-isolation ./crates/python
"""

import json
import math

import kme_py


def main():
    two = kme_py.RewardEngine.from_centers([[0.0], [1.0]], [1, 1], alpha=0.5, kappa=0.0)
    clone = kme_py.RewardEngine.from_json(two.to_json())
    assert clone.state_hash() == two.state_hash()
    before = two.state_hash()
    peek = two.peek_reward([2.0])
    assert two.state_hash() == before
    assert abs(peek - (2 * math.sqrt(1.5) - 2)) < 1e-12, peek
    assert two.commit_reward([2.0]) == peek
    assert two.centers == [[0.0], [1.5]]

    square = json.dumps({"kind": "uniform_box", "lower": [0, 0], "upper": [1, 1]})
    pts = kme_py.sample(square, 2000, 1)
    assert len(pts) == 2000 and all(0 <= x <= 1 for p in pts for x in p)
    assert kme_py.true_entropy(square) == 0.0

    eng = kme_py.RewardEngine(k=30, d=2, init="first_points")
    start = eng.objective()
    total = sum(eng.commit_reward(p) for p in pts)
    assert abs(total - (eng.objective() - start)) < 1e-6
    frac = eng.pathological_fraction()
    assert frac is not None and frac < 0.05
    print("bound", eng.entropy_lower_bound(), "pathological", frac)

    try:
        eng.peek_reward([1.0])
    except ValueError as e:
        print("dimension error:", e)
    else:
        raise AssertionError("expected a ValueError")

    cfg = json.dumps({"batch_size": 256, "t_max": 3, "k": 20, "seed": 1})
    rec = kme_py.explore(cfg)
    base = kme_py.explore(json.dumps({"batch_size": 256, "t_max": 3, "k": 20, "seed": 1, "beta": 0.0}), with_engine=False)
    assert len(rec) == 3 and len(base) == 3
    print("coverage", rec[-1][4], "baseline", base[-1][4])
    print("ok")


if __name__ == "__main__":
    main()
