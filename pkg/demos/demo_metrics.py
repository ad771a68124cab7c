"""What the pixel and topology metrics measure.

Pixel scores only ask whether vertices sit near the other graph; topology
scores compare what is *reachable* around matched vertices, so breaking a
junction hurts T-R while leaving pixel recall almost untouched.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from lanetrace.geometry import CenterlineGraph
from lanetrace.metrics import MetricConfig, evaluate
from lanetrace.render import draw_graph

OUT = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(OUT, exist_ok=True)

# a T junction: a 40 m main road with a 20 m branch
verts = [[float(i), 0.0] for i in range(41)]
verts += [[20.0, float(j)] for j in range(1, 21)]
main = [(i, i + 1) for i in range(40)]
branch = [(20, 41)] + [(41 + j, 42 + j) for j in range(19)]
gt = CenterlineGraph(verts, main + branch)

cases = {
    "identical": gt,
    "broken junction": CenterlineGraph(
        verts, [e for e in main + branch if e not in ((19, 20), (20, 21),
                                                      (20, 41))]),
    "shifted 2 m": gt.transformed(lambda v: v + np.array([0.0, 2.0])),
}

cfg = MetricConfig(resolution=1.0, delta=3.0, epsilon=15.0)
fig, axes = plt.subplots(1, 3, figsize=(16, 5.5))
for ax, (name, pred) in zip(axes, cases.items()):
    report = evaluate(pred, gt, cfg)
    print(f"--- {name}")
    print(report.to_text())
    print()
    draw_graph(ax, gt, color="0.7", linewidth=3.0, label="truth")
    draw_graph(ax, pred, color="crimson", linewidth=1.2, label="prediction")
    ax.set_title(f"{name}\nP-F {report.pf:.2f}  T-F {report.tf:.2f}")
    ax.set_aspect("equal")
    ax.legend(loc="lower right")
fig.tight_layout()
fig.savefig(os.path.join(OUT, "metrics.png"), dpi=130)
plt.close(fig)
print("wrote metrics.png")
