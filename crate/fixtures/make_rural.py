#!/usr/bin/env python3
"""Regenerates rural2km.osm: a winding rural road network covering about
2.1 km^2. Junction points are scattered with a minimum separation, joined
by a spanning tree plus a few loop edges, and every link is rendered as a
curved polyline (quadratic bezier, nodes every ~30 m) so each stretch of
road has a distinctive curvature and heading signature. Fully
deterministic."""

import math
import os

STATE = 20240901


def lcg():
    global STATE
    STATE = (STATE * 6364136223846793005 + 1442695040888963407) % 2**64
    return (STATE >> 11) / 2**53


# Local frame in metres, converted to lat/lon on output.
WIDTH, HEIGHT = 1500.0, 1400.0
MARGIN = 60.0
N_JUNCTIONS = 26
MIN_SEP = 180.0
LAT0, LON0 = 41.0, 9.0
M_PER_DEG_LAT = 111320.0
M_PER_DEG_LON = 111320.0 * math.cos(math.radians(41.0))

junctions = []
while len(junctions) < N_JUNCTIONS:
    x = MARGIN + lcg() * (WIDTH - 2 * MARGIN)
    y = MARGIN + lcg() * (HEIGHT - 2 * MARGIN)
    if all(math.hypot(x - jx, y - jy) >= MIN_SEP for jx, jy in junctions):
        junctions.append((x, y))

# Stretch the set so its bounding box spans the full frame; otherwise the
# realized map area depends on how lucky the extreme samples were.
min_x = min(j[0] for j in junctions)
max_x = max(j[0] for j in junctions)
min_y = min(j[1] for j in junctions)
max_y = max(j[1] for j in junctions)
junctions = [(30.0 + (x - min_x) / (max_x - min_x) * (WIDTH - 60.0),
              30.0 + (y - min_y) / (max_y - min_y) * (HEIGHT - 60.0))
             for x, y in junctions]


def dist(i, j):
    return math.hypot(junctions[i][0] - junctions[j][0],
                      junctions[i][1] - junctions[j][1])


# Prim's spanning tree keeps the network connected.
in_tree = {0}
edges = []
while len(in_tree) < N_JUNCTIONS:
    best = None
    for i in in_tree:
        for j in range(N_JUNCTIONS):
            if j not in in_tree and (best is None or dist(i, j) < dist(*best)):
                best = (i, j)
    edges.append(tuple(sorted(best)))
    in_tree.add(best[1])

# A handful of loop edges so routes are not forced back the way they came.
present = set(edges)
extras = 0
for i in range(N_JUNCTIONS):
    if extras == 9:
        break
    best = None
    for j in range(N_JUNCTIONS):
        e = tuple(sorted((i, j)))
        if j != i and e not in present and (best is None or dist(i, j) < dist(*best)):
            best = e
    if best is not None and dist(*best) < 430.0 and lcg() < 0.6:
        edges.append(best)
        present.add(best)
        extras += 1

nodes = {}  # id -> (x, y)
for k, (x, y) in enumerate(junctions):
    nodes[k + 1] = (x, y)
next_node = N_JUNCTIONS + 1

HIGHWAYS = ["residential"] * 5 + ["unclassified"] * 3 + ["tertiary"] * 2 + ["track", "service"]

ways = []  # (way_id, [node ids], highway)
for k, (i, j) in enumerate(edges):
    ax, ay = junctions[i]
    bx, by = junctions[j]
    length = math.hypot(bx - ax, by - ay)
    # Control point perpendicular to the chord bends the road one way or
    # the other; magnitude scales with length so short lanes stay gentle.
    nx, ny = -(by - ay) / length, (bx - ax) / length
    side = 1.0 if lcg() < 0.5 else -1.0
    mag = min((0.12 + 0.18 * lcg()) * length, 90.0)
    cx = min(max((ax + bx) / 2 + side * mag * nx, 20.0), WIDTH - 20.0)
    cy = min(max((ay + by) / 2 + side * mag * ny, 20.0), HEIGHT - 20.0)

    def bez(t):
        u = 1.0 - t
        return (u * u * ax + 2 * u * t * cx + t * t * bx,
                u * u * ay + 2 * u * t * cy + t * t * by)

    curve_len = sum(math.hypot(bez((s + 1) / 100)[0] - bez(s / 100)[0],
                               bez((s + 1) / 100)[1] - bez(s / 100)[1])
                    for s in range(100))
    segs = max(2, math.ceil(curve_len / 30.0))
    ids = [i + 1]
    for s in range(1, segs):
        px, py = bez(s / segs)
        px += (lcg() - 0.5) * 5.0
        py += (lcg() - 0.5) * 5.0
        nodes[next_node] = (px, py)
        ids.append(next_node)
        next_node += 1
    ids.append(j + 1)
    ways.append((1000 + k, ids, HIGHWAYS[int(lcg() * len(HIGHWAYS))]))

out = os.path.join(os.path.dirname(__file__), "rural2km.osm")
total = 0.0
with open(out, "w") as f:
    f.write('<?xml version="1.0" encoding="UTF-8"?>\n')
    f.write("<!-- generated by make_rural.py; do not edit by hand -->\n")
    f.write('<osm version="0.6" generator="make_rural.py">\n')
    for nid in sorted(nodes):
        x, y = nodes[nid]
        lat = LAT0 + y / M_PER_DEG_LAT
        lon = LON0 + x / M_PER_DEG_LON
        f.write(f'  <node id="{nid}" lat="{lat:.7f}" lon="{lon:.7f}"/>\n')
    for wid, ids, hw in ways:
        refs = "".join(f'<nd ref="{r}"/>' for r in ids)
        f.write(f'  <way id="{wid}">{refs}<tag k="highway" v="{hw}"/></way>\n')
        for a, b in zip(ids, ids[1:]):
            total += math.hypot(nodes[b][0] - nodes[a][0], nodes[b][1] - nodes[a][1])
    f.write("</osm>\n")
print(f"wrote {out}: {len(nodes)} nodes, {len(ways)} ways, {total:.0f} m of road")
