"""CSV emission and self-contained plot scripts for sweep results.

Output files are deterministic: fixed column order, repr-formatted
floats, LF line endings.  The plot scripts are plain matplotlib readers
of the emitted CSVs so results can be re-rendered without this package.
"""

from __future__ import annotations

import os
from typing import Iterable

from .experiments import SweepResult


def format_cell(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str, header: list[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_cell(row[col]) for col in header) + "\n")


_SWEEP_PLOT = """\
#!/usr/bin/env python3
\"\"\"Loss-versus-{axis} panel for {name}.csv (one series per maker).\"\"\"
import csv
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

series = defaultdict(lambda: ([], [], []))
with open("{name}.csv") as fh:
    for row in csv.DictReader(fh):
        x, m, se = float(row["axis_value"]), row["maker"], float(row["se"])
        series[m][0].append(x)
        series[m][1].append(float(row["mean_pct_loss"]))
        series[m][2].append(se)

fig, ax = plt.subplots(figsize=(6, 4))
for maker, (xs, ys, es) in sorted(series.items()):
    ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=maker)
ax.set_xlabel("{axis}")
ax.set_ylabel("mean monetary loss per trade (%)")
ax.axhline(0.0, color="gray", lw=0.8, ls=":")
ax.legend()
fig.tight_layout()
fig.savefig("{name}.png", dpi=150)
print("wrote {name}.png")
"""

_ADVERSARY_PLOT = """\
#!/usr/bin/env python3
\"\"\"Two-panel adversary figure for {name}.csv: oracle RMSD and loss.\"\"\"
import csv
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

series = defaultdict(lambda: ([], [], []))
with open("{name}.csv") as fh:
    for row in csv.DictReader(fh):
        series[row["maker"]][0].append(float(row["axis_value"]))
        series[row["maker"]][1].append(float(row["rmsd"]))
        series[row["maker"]][2].append(float(row["mean_pct_loss"]))

fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
for maker, (xs, rmsds, losses) in sorted(series.items()):
    ax1.plot(xs, rmsds, marker="o", label=maker)
    ax2.plot(xs, losses, marker="o", label=maker)
ax1.set_xlabel("adversarial fraction")
ax1.set_ylabel("price-recommendation RMSD")
ax2.set_xlabel("adversarial fraction")
ax2.set_ylabel("mean monetary loss per trade (%)")
ax2.axhline(0.0, color="gray", lw=0.8, ls=":")
ax1.legend()
ax2.legend()
fig.tight_layout()
fig.savefig("{name}.png", dpi=150)
print("wrote {name}.png")
"""

SWEEP_HEADER = ["axis_value", "maker", "mean_pct_loss", "se", "rmsd", "rmsd_se", "n_trades"]
DETAIL_HEADER = ["axis_value", "maker", "seed", "mean_pct_loss", "rmsd", "n_trades"]


def emit_plots(result: SweepResult, out_dir: str, name: str | None = None,
               style: str = "sweep") -> list[str]:
    """Write the aggregate CSV, the per-seed CSV, and a plotting script.

    Returns the written paths.  ``style="adversary"`` swaps in the
    two-panel RMSD + loss layout.
    """
    if not result.rows:
        raise ValueError("cannot emit plots for an empty results table")
    os.makedirs(out_dir, exist_ok=True)
    name = name or f"sweep_{result.axis}"
    csv_path = os.path.join(out_dir, f"{name}.csv")
    detail_path = os.path.join(out_dir, f"{name}_seeds.csv")
    script_path = os.path.join(out_dir, f"plot_{name}.py")

    write_csv(csv_path, SWEEP_HEADER, result.rows)
    write_csv(detail_path, DETAIL_HEADER, result.detail)
    template = _ADVERSARY_PLOT if style == "adversary" else _SWEEP_PLOT
    with open(script_path, "w", newline="\n") as fh:
        fh.write(template.format(axis=result.axis, name=name))
    return [csv_path, detail_path, script_path]
