"""The example pump on a ring of qutrits, and the charge it moves per cycle.

Run: python3 demos/01_pump_index.py
"""
from chargepump.chainspace import product_state
from chargepump.evolution import evolve
from chargepump.index import pump_index
from chargepump.pumps import MINUS, PLUS, concat, example_pump, stack, time_reverse
from chargepump.symmetry import SymmetryGroup

u1, z3 = SymmetryGroup.u1(), SymmetryGroup.zn(3)

# Each site carries levels |0>, |-h>, |+h>.  The first half-period rotates every
# even pair |0,0> into |-h,+h>; the second half rotates odd pairs back to |0,0>.
P = example_pump(u1, 1, n_sites=8)
mid = evolve(P.basepoint, P.tdi, 0.5)
print("overlap of s=1/2 with |-,+,-,+,...>:",
      round(mid.fidelity(product_state(P.geometry, (MINUS, PLUS) * 4)), 12))
print("overlap of s=1 with the basepoint: ", round(evolve(P.basepoint, P.tdi).fidelity(P.basepoint), 12))

# Truncating the TDI to the left half leaves charge h stranded at the cut.
for h in range(-2, 3):
    r = pump_index(example_pump(u1, h, n_sites=8, unit=1 if h == 0 else None))
    print(f"U(1) pump h={h:+d}: index {r.charge.to_list()}  residual {r.max_residual:.1e}")
for h in range(3):
    r = pump_index(example_pump(z3, h, n_sites=8, unit=z3.dual([1]) if h == 0 else None))
    print(f"Z3 pump h={h}: index {r.charge.to_list()}")

# the index adds under concatenation and stacking, and flips under time reversal
Q = example_pump(u1, 1, n_sites=12, unit=1)
print("concat(P, P):    ", pump_index(concat(Q, Q)).charge.to_list())
print("concat(rev P, P):", pump_index(concat(time_reverse(Q), Q)).charge.to_list())
S = example_pump(u1, 1, n_sites=4, unit=1)
print("stack(P, P):     ", pump_index(stack(S, S)).charge.to_list())
print("rev(P):          ", pump_index(time_reverse(P)).charge.to_list())
