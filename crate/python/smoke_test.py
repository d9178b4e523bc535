"""Smoke test for the feddm Python bindings.

Build and install first:
    pip install --no-build-isolation -e crates/python
"""

import math
import tempfile

import feddm


def main():
    assert feddm.score_transe([1.0, 2.0], [0.0, 1.0], [0.0, 0.0]) == -4.0
    assert feddm.score_transe([0.0, 0.0], [0.0, 0.0], [3.0, -4.0], norm="l2") == -5.0
    assert feddm.score_complex([1.0, 1.0], [2.0, 0.0], [0.0, 1.0]) == 2.0
    dh, dr, dt = feddm.grad_score("complex", [1.0, 0.0], [1.0, 0.0], [1.0, 0.0])
    assert dh == [1.0, 0.0]

    s = feddm.Schedule(3, 0.1, 0.3)
    assert math.isclose(s.alpha_bar(3), 0.504)
    assert math.isclose(feddm.Schedule(1, 0.25, 0.25).forward_step([2.0], 1, [1.0])[0], 2.23205, abs_tol=1e-5)

    assert math.isclose(feddm.mrr([1.0, 2.0, 4.0]), 7 / 12)
    assert math.isclose(feddm.hits_at_n([1.0, 2.0, 4.0], 3), 2 / 3)

    try:
        feddm.RunConfig().set("no_such_key", "1")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown key accepted")

    with tempfile.TemporaryDirectory() as root:
        cfg = feddm.RunConfig()
        for key, value in [
            ("synthetic", "entities=60,relations=6,triples=400"),
            ("rounds", "3"),
            ("dim", "8"),
            ("diffusion_train_steps", "20"),
            ("diffusion_steps", "10"),
            ("run_dir", root),
        ]:
            cfg.set(key, value)
        arms = feddm.run(cfg)
        assert arms == ["raw", "retrained", "unlearned"], arms
        rows = feddm.evaluate(root, cfg.seed)
        assert len(rows) == 12
        assert all(0.0 < r.mrr <= 1.0 and r.hits1 <= r.mrr for r in rows)
        median, n = feddm.median_report(root)
        assert n == 1
        assert all(math.isclose(a.mrr, b.mrr, abs_tol=1e-6) for a, b in zip(median, rows))

    print("python smoke test passed")


if __name__ == "__main__":
    main()
