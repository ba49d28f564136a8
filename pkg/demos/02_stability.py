"""The index does not move under small deformations of the loop.

Dressing conjugates the loop by a local symmetric unitary path that starts and
ends at the identity; reparametrization changes the speed along the loop.
"""
import numpy as np

from chargepump.index import pump_index, stability_sweep
from chargepump.pumps import dress, example_pump, reparametrize
from chargepump.symmetry import SymmetryGroup

u1 = SymmetryGroup.u1()
P = example_pump(u1, 1, n_sites=12)

table = stability_sweep(P, lambda lp, t: dress(lp, t, seed=2), [0.0, 0.1, 0.2, 0.3, 0.4])
print("dressing sweep")
for row in table.rows:
    r = row.report
    print(f"  strength {row.strength:.1f}: index {r.charge.to_list()}  residual {r.max_residual:.1e}")
print("  largest strength with unchanged index:", table.largest_stable)

s = np.linspace(0, 1, 17)
print("reparametrization s -> s + e sin(2 pi s) / (2 pi)")
for e in (0.2, 0.4, 0.8):
    lp = reparametrize(example_pump(u1, 1, n_sites=8), list(zip(s, s + e * np.sin(2 * np.pi * s) / (2 * np.pi))))
    print(f"  e={e}: index {pump_index(lp).charge.to_list()}")
