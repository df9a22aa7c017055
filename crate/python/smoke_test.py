"""Smoke test for the twinbridge_py extension.

Build first:  pip install --no-build-isolation -e crates/py
Run:          python python/smoke_test.py
"""
import math
import pathlib

import twinbridge_py as tb

ROOT = pathlib.Path(__file__).resolve().parent.parent


def main():
    d = tb.haversine_m(0.0, 0.0, 0.01, 0.01)
    assert abs(d - 1572.5337292863) < 1e-6, d

    frame = tb.encode_envelope("/robot0/cmd_vel", b"\x01\x02\x03", tier="critical", seq=42, kind="command")
    assert len(frame) == 34 + len("/robot0/cmd_vel") + 3, len(frame)
    assert tb.decode_envelope(frame) == ("/robot0/cmd_vel", b"\x01\x02\x03", "critical", 42)
    bad = bytearray(frame)
    bad[10] ^= 0xFF
    try:
        tb.decode_envelope(bytes(bad))
    except ValueError as e:
        assert "crc" in str(e)
    else:
        raise AssertionError("corrupted frame accepted")

    ranges = tb.project_scan([(2.0, 0.1, 0.0), (1.5, 0.1, 0.2), (0.5, 0.1, 5.0)], n_bins=4)
    assert ranges == [None, None, 1.5, None], ranges

    cost = tb.mmcf_cost((0.1, 0.05, 0.002, 5000.0), (0.0, 0.2, 0.0, 0.1, 0.004, 10000.0), (0.4, 0.3, 0.2, 0.1))
    assert math.isclose(cost, 0.4 * 0.5 + 0.3 * 0.5 + 0.2 * 0.5 + 0.1 * 0.5), cost

    scenario = str(ROOT / "scenarios" / "loss25.toml")
    a = tb.run_scenario(scenario, seed=3)
    b = tb.run_scenario(scenario, seed=3)
    assert a == b
    base = tb.run_scenario(scenario, baseline=True, seed=3)
    tiers = a["loss25.prioritized.tiers.csv"].splitlines()
    print(tiers[0])
    print(next(l for l in tiers if l.startswith("critical")))
    print(next(l for l in base["loss25.baseline.tiers.csv"].splitlines() if l.startswith("critical")))
    print("smoke test ok")


if __name__ == "__main__":
    main()
