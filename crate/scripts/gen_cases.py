#!/usr/bin/env python3
"""Generates the bundled network case fixtures in ../cases/.

The 5-bus feeder mirrors the published study layout (radial feeder, four
three-phase loads, flexibility connected at bus 3); its line constants are
calibrated constants chosen for this repository, see README. The 221-bus
feeder is a synthetic UK-style LV network: a seeded random radial tree with
single-phase loads scaled to exact per-phase totals.

Run from anywhere: python3 scripts/gen_cases.py
"""

import json
import math
import os
import random

import numpy as np

OUT = os.path.join(os.path.dirname(__file__), "..", "cases")

PF = 0.91
TAN_PHI = math.tan(math.acos(PF))


def phase_impedance_matrix(z_self, z_mutual):
    z = np.full((3, 3), z_mutual, dtype=complex)
    np.fill_diagonal(z, z_self)
    return z


def y_entries(y):
    return [[[y[i][j].real, y[i][j].imag] for j in range(3)] for i in range(3)]


def line(from_bus, to_bus, z_self, z_mutual, s_max_kva=None):
    y = np.linalg.inv(phase_impedance_matrix(z_self, z_mutual))
    entry = {
        "from": from_bus,
        "to": to_bus,
        "y_series": y_entries(y),
        "units": "siemens",
    }
    if s_max_kva is not None:
        entry["s_max_kva"] = [s_max_kva] * 3
    return entry


def load(bus, p_by_phase):
    p = {ph: round(v, 6) for ph, v in p_by_phase.items()}
    q = {ph: round(v * TAN_PHI, 6) for ph, v in p_by_phase.items()}
    return {"bus": bus, "p_kw": p, "q_kvar": q}


# ---------------------------------------------------------------------------
# 5-bus feeder
# ---------------------------------------------------------------------------

# Calibrated feeder constants (ohms per segment).
Z_SELF = 0.12 + 0.09j
Z_MUTUAL = 0.04 + 0.045j
V_MIN = 0.95
V_MAX = 1.05
S_MAX_KVA = 60.0


def case5(balanced_loads, flex_kind):
    buses = []
    for i in range(1, 6):
        buses.append(
            {
                "id": str(i),
                "phases": ["a", "b", "c"],
                "v_min": V_MIN,
                "v_max": V_MAX,
                "is_reference": i == 1,
            }
        )
    lines = [
        line("1", "2", Z_SELF, Z_MUTUAL, S_MAX_KVA),
        line("2", "3", Z_SELF, Z_MUTUAL, S_MAX_KVA),
        line("3", "4", Z_SELF, Z_MUTUAL, S_MAX_KVA),
        line("4", "5", Z_SELF, Z_MUTUAL, S_MAX_KVA),
    ]
    loads = []
    for i in range(2, 6):
        if i == 2 and not balanced_loads:
            loads.append(load("2", {"a": 7.0, "b": 4.5, "c": 3.5}))
        else:
            loads.append(load(str(i), {"a": 5.0, "b": 5.0, "c": 5.0}))
    if flex_kind == "balanced":
        flex = [
            {
                "id": "F1",
                "bus": "3",
                "phases": ["a", "b", "c"],
                "p_min_kw": -8.0,
                "p_max_kw": 8.0,
                "q_min_kvar": -8.0,
                "q_max_kvar": 8.0,
                "balanced": True,
            }
        ]
    else:
        flex = [
            {
                "id": "F1%s" % ph,
                "bus": "3",
                "phases": [ph],
                "p_min_kw": -8.0,
                "p_max_kw": 8.0,
                "q_min_kvar": -8.0,
                "q_max_kvar": 8.0,
                "balanced": False,
            }
            for ph in ("a", "b", "c")
        ]
    return {
        "base_mva": 1.0,
        "base_kv": 0.4,
        "buses": buses,
        "lines": lines,
        "loads": loads,
        "generators": [],
        "flex_units": flex,
        "vu_monitored": [str(i) for i in range(1, 6)],
    }


# ---------------------------------------------------------------------------
# 221-bus feeder
# ---------------------------------------------------------------------------

N_BUS = 221
P_TOTALS = {"a": 37.00, "b": 24.00, "c": 21.00}
Q_TOTALS = {"a": 31.41, "b": 17.06, "c": 16.08}
# Ohms per segment of the synthetic feeder.
Z221_SELF = 0.035 + 0.012j
Z221_MUTUAL = 0.011 + 0.006j


def case221():
    rng = random.Random(221)
    parents = {}
    depth = {1: 0}
    recent = [1]
    for i in range(2, N_BUS + 1):
        # Mostly chain onto recently added buses so the tree is feeder-like.
        if rng.random() < 0.72:
            parent = recent[-1 - rng.randrange(min(6, len(recent)))]
        else:
            parent = rng.randrange(1, i)
        parents[i] = parent
        depth[i] = depth[parent] + 1
        recent.append(i)
        if len(recent) > 12:
            recent.pop(0)

    buses = []
    for i in range(1, N_BUS + 1):
        buses.append(
            {
                "id": str(i),
                "phases": ["a", "b", "c"],
                "v_min": 0.90,
                "v_max": 1.10,
                "is_reference": i == 1,
            }
        )
    lines = [line(str(p), str(i), Z221_SELF, Z221_MUTUAL) for i, p in sorted(parents.items())]

    # Single-phase loads; per phase, raw draws are rescaled to the exact
    # published per-phase totals.
    candidates = [i for i in range(2, N_BUS + 1)]
    rng.shuffle(candidates)
    n_loads = 150
    load_buses = sorted(candidates[:n_loads])
    raw = {"a": {}, "b": {}, "c": {}}
    phases = ["a", "b", "c"]
    for k, bus in enumerate(load_buses):
        ph = phases[k % 3]
        raw[ph][bus] = rng.lognormvariate(0.0, 0.55)
    loads = []
    for ph in phases:
        total = sum(raw[ph].values())
        for bus, w in sorted(raw[ph].items()):
            p = w / total * P_TOTALS[ph]
            q = w / total * Q_TOTALS[ph]
            loads.append(
                {
                    "bus": str(bus),
                    "p_kw": {ph: round(p, 6)},
                    "q_kvar": {ph: round(q, 6)},
                }
            )
    loads.sort(key=lambda entry: int(entry["bus"]))

    # 12 single-phase flexible units, 4 per phase, away from the substation.
    deep = [i for i in sorted(depth, key=depth.get, reverse=True) if i != 1]
    flex_buses = sorted(deep[:36][::3])[:12]
    flex = []
    for k, bus in enumerate(flex_buses):
        ph = phases[k % 3]
        flex.append(
            {
                "id": "F%d{%s}" % (k + 1, ph),
                "bus": str(bus),
                "phases": [ph],
                "p_min_kw": -5.0,
                "p_max_kw": 5.0,
                "q_min_kvar": -5.0,
                "q_max_kvar": 5.0,
                "balanced": False,
            }
        )

    monitored = [str(i) for i in sorted(deep[:7])]
    return {
        "base_mva": 1.0,
        "base_kv": 0.4,
        "buses": buses,
        "lines": lines,
        "loads": loads,
        "generators": [],
        "flex_units": flex,
        "vu_monitored": monitored,
    }


def write(name, data):
    path = os.path.join(OUT, name)
    with open(path, "w") as f:
        json.dump(data, f, indent=1)
        f.write("\n")
    print("wrote", path)


if __name__ == "__main__":
    os.makedirs(OUT, exist_ok=True)
    write("case5_bal_balflex.json", case5(True, "balanced"))
    write("case5_unbal_balflex.json", case5(False, "balanced"))
    write("case5_unbal_3x1ph.json", case5(False, "singlephase"))
    write("case221.json", case221())
