# Typed spatial relations between bounding boxes.
#
# Every ordered pair of boxes on an image gets one of 12 labels: contains,
# inside, overlap, eight 45-degree direction bins, or no-edge when the
# centroids are more than half the image diagonal apart. The full matrix is
# built from the upper triangle and mirrored through the inverse table, so
# a -> b and b -> a always tell a consistent story.

import numpy as np

from boxattn import (INVERSE, RELATION_NAMES, BoundingBox, build_graph,
                     classify_pair, randomize_graph, reverse_graph)

W, H = 320.0, 240.0
diag = float(np.hypot(W, H))

# a little tabletop scene: a tray, a cup sitting inside it, a plate to the
# right, and a label far away in the corner
tray = BoundingBox(40, 60, 160, 180)
cup = BoundingBox(70, 90, 110, 130)
plate = BoundingBox(200, 80, 280, 160)
corner = BoundingBox(300, 220, 318, 238)

for name, other in [("cup", cup), ("plate", plate), ("corner", corner)]:
    r = classify_pair(tray, other, diag)
    print(f"tray -> {name}: {RELATION_NAMES[r]}")

# the inverse table turns contains into inside and rotates direction bins
# by 180 degrees; applying it twice gets you back where you started
r_ab = classify_pair(cup, plate, diag)
r_ba = classify_pair(plate, cup, diag)
print(f"cup -> plate is {RELATION_NAMES[r_ab]}, "
      f"plate -> cup is {RELATION_NAMES[r_ba]}")
assert INVERSE[r_ab] == r_ba and INVERSE[INVERSE[r_ab]] == r_ab

g = build_graph([tray, cup, plate, corner], W, H)
print("\nrelation matrix:")
for row in g.relation:
    print("  " + "  ".join(f"{RELATION_NAMES[r]:>8}" for r in row))
print("label counts:", g.counts())

# reversal swaps every edge for its inverse (the diagonal stays self);
# randomization keeps sizes and symmetry but throws the structure away
rev = reverse_graph(g)
print("\nreversed counts:", rev.counts())
noise = randomize_graph(g.n, seed=3)
print("randomized counts:", noise.counts())
assert np.array_equal(reverse_graph(rev).relation, g.relation)
