"""Smoke test of the Python bindings.

Build and install first:

    cd crates/py && maturin build --release -o dist && pip install dist/mobjam-*.whl

then run `python python/smoke_test.py`.
"""

import json
import math
import tempfile
from pathlib import Path

import mobjam


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    assert close(mobjam.value(10.0, 50.0, 2.0), 16.0)
    assert mobjam.channel_gain_db(10.0, 2.0) < 0.0

    ne = mobjam.nash_noiseless(10.0, 50.0, 2.0)
    assert close(ne["jammer_pos"], 50.0 / 3.0)
    assert close(ne["probs"][0], 1.0 / 6.0)
    assert close(ne["value"], 4.0 / 9.0)

    noiseless = mobjam.ScenarioConfig.noiseless(10.0, 50.0, 2.0)
    assert close(noiseless.snjr(20.0, 30.0, 0.0, 0.0), 0.25)
    lead_j = mobjam.stackelberg("j", noiseless)
    assert lead_j["value"] == ne["value"]
    assert mobjam.stackelberg("r", noiseless)["value"] == 0.0

    noisy = mobjam.nash_with_noise(mobjam.ScenarioConfig.vehicular(10.0, 1000.0, 3.0))
    assert noisy["support"][1] < 1000.0
    assert noisy["jammer_pos"] < 2 * 10.0 * 1000.0 / 1010.0

    pennies = mobjam.fictitious_play([[1.0, -1.0], [-1.0, 1.0]], 100_000)
    assert abs(pennies["value"]) < 0.01
    assert pennies["lower"] <= pennies["value"] <= pennies["upper"]
    assert close(mobjam.solve_matrix_game([[3.0, 1.0], [2.0, 2.5]])["value"], 2.2, 1e-9)

    g1 = mobjam.alternating_minimax_vi(average_steps=200_000)
    assert len(g1["receiver_to_move"]) == 9
    assert abs(g1["long_run_average"] - 13.0 / 144.0) < 0.01
    g2 = mobjam.shapley_vi(n_positions=5, gamma=0.9)
    assert all(b <= a for a, b in zip(g2["residuals"], g2["residuals"][1:]))

    assert mobjam.moving_average([1.0, 2.0, 3.0], 2) == [1.0, 1.5, 2.5]
    occ = mobjam.joint_occupancy([(0, 1), (0, 1)], 2)
    assert occ == [[0.0, 1.0], [0.0, 0.0]]

    cfg = mobjam.ExperimentConfig(game="g3", steps=20_000, seed=3)
    assert cfg.to_dict()["game"] == "g3"
    run = cfg.run()
    assert len(run.rewards) == 20_000
    assert math.isclose(sum(map(sum, run.occupancy)), 1.0, abs_tol=1e-9)
    summary = run.summary()
    with tempfile.TemporaryDirectory() as d:
        run.export(d, "csv")
        (written,) = run.export(d, "json")
        report = json.loads(Path(written).read_text())
        assert report["summary"]["late_mean"] == summary["late_mean"]
        assert "occupancy.csv" in report["files"]

    try:
        mobjam.ExperimentConfig(agent_r="greedy")
    except ValueError:
        pass
    else:
        raise AssertionError("a jammer-only policy was accepted for the receiver")

    net = mobjam.DuelingNet(18, [16, 16], 3, seed=1)
    x = [1.0 if i in (2, 9 + 5) else 0.0 for i in range(18)]
    q = net.forward(x)
    v, adv = net.value_and_advantages(x)
    assert abs(sum(qa - v for qa in q) / len(q)) < 1e-10
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "net.txt"
        net.save(path)
        assert mobjam.DuelingNet.load(path).params == net.params

    gain = mobjam.strategic_gain_experiment(alphas=[2.0], runs=1, steps=20_000)
    assert gain[0]["random_se"] <= gain[0]["strategic_se"]

    print("python smoke test passed")


if __name__ == "__main__":
    main()
