"""Convert MATPOWER-format test systems (as distributed with PYPOWER) to the JSON
case schema, with the stress transforms applied.

Usage: python3 scripts/convert_cases.py OUT_DIR   (needs `pypower` importable)

Transforms: flow limits x0.75, reserve caps 0.3 x capacity, reserve prices 0.3 x
energy cost, load-shed and spill prices 8x and 3x the largest energy cost.
Only the linear term of each polynomial cost curve is kept. Generators with zero
capacity are dropped, negative loads are set to zero and a non-positive
reactance is replaced by its absolute value.
"""

import json
import sys

FLOW, RCAP, RPRICE = 0.75, 0.30, 0.30

# Three-area split commonly used for the 118-bus system (buses not listed go to zone 2).
ZONES_118 = {
    1: list(range(1, 33)) + [113, 114, 115, 117],
    3: list(range(81, 113)) + [118],
}


def r(x, nd=6):
    return float(round(float(x), nd))


def build(name, bus, gen, branch, gencost, zone_of_bus, demand_factor):
    zones = sorted(set(zone_of_bus.values()))
    buses = []
    for row in bus:
        bid = int(row[0])
        buses.append({"id": bid, "demand": r(max(row[2], 0.0)), "zone": zone_of_bus[bid]})
    gens = []
    costs = []
    for k, (g, gc) in enumerate(zip(gen, gencost)):
        if g[8] <= 0 or g[7] == 0:
            continue
        assert gc[0] == 2, "polynomial costs only"
        ncoef = int(gc[3])
        c1 = gc[4 + ncoef - 2] if ncoef >= 2 else 0.0
        cap, cost = r(g[8]), r(max(c1, 0.0))
        costs.append(cost)
        gens.append({
            "id": len(gens) + 1, "bus": int(g[0]), "capacity": cap, "cost": cost,
            "rbar_up": r(RCAP * cap), "rbar_dn": r(RCAP * cap),
            "p_up": r(RPRICE * cost), "p_dn": r(RPRICE * cost),
            "zone": zone_of_bus[int(g[0])],
        })
    lines = []
    for row in branch:
        if row[10] == 0:
            continue
        line = {"id": len(lines) + 1, "from": int(row[0]), "to": int(row[1]),
                "reactance": r(abs(row[3]) if row[3] != 0 else 1e-4, 8)}
        if row[5] > 0:
            line["limit"] = r(FLOW * row[5])
        lines.append(line)
    cmax = max(costs)
    return {
        "name": name,
        "demand_factor": demand_factor,
        "buses": buses,
        "generators": gens,
        "lines": lines,
        "zones": [{"id": z} for z in zones],
        "penalties": {"load_shed": r(8 * cmax), "spill": r(3 * cmax)},
    }


def singlebus():
    caps, costs = [5.0, 5.0, 2.5, 2.5], [1.0, 2.0, 4.0, 8.0]
    gens = [{"id": i + 1, "bus": 1, "capacity": g, "cost": c,
             "rbar_up": r(RCAP * g), "rbar_dn": r(RCAP * g),
             "p_up": r(RPRICE * c), "p_dn": r(RPRICE * c), "zone": 1}
            for i, (g, c) in enumerate(zip(caps, costs))]
    return {
        "name": "singlebus",
        "buses": [{"id": 1, "demand": 6.0}],
        "generators": gens,
        "lines": [],
        "zones": [{"id": 1}],
        "penalties": {"load_shed": 8 * max(costs), "spill": 3 * max(costs)},
    }


def main(out):
    from pypower import case24_ieee_rts, case118, case300

    cases = {"singlebus": singlebus()}
    d = case24_ieee_rts.case24_ieee_rts()
    area = {int(b[0]): int(b[6]) for b in d["bus"]}
    cases["ieee24"] = build("ieee24", d["bus"], d["gen"], d["branch"], d["gencost"], area, 0.9)

    d = case118.case118()
    z118 = {int(b[0]): 2 for b in d["bus"]}
    for z, ids in ZONES_118.items():
        for i in ids:
            z118[i] = z
    cases["ieee118"] = build("ieee118", d["bus"], d["gen"], d["branch"], d["gencost"], z118, 1.3)

    d = case300.case300()
    zone = {int(b[0]): int(b[10]) for b in d["bus"]}
    cases["ieee300"] = build("ieee300", d["bus"], d["gen"], d["branch"], d["gencost"], zone, 0.9)

    for name, case in cases.items():
        with open(f"{out}/{name}.json", "w") as f:
            json.dump(case, f, indent=1)
            f.write("\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "cases")
