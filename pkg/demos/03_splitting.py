"""Cutting a loop at one edge: possible exactly when the index vanishes."""
from chargepump.chainspace import cut_entropy
from chargepump.evolution import PropagatorRequest, propagate
from chargepump.index import pump_index
from chargepump.pumps import concat, dressing_generator, example_pump, rotate, time_reverse
from chargepump.splitting import SplitError, associated_loop, split_single_edge
from chargepump.symmetry import SymmetryGroup

u1 = SymmetryGroup.u1()
P = example_pump(u1, 1, n_sites=8)

# P followed by its time reverse has index 0, so it splits at the edge (0, 1)
loop = concat(time_reverse(P), P)
split, rep = split_single_edge(loop, 0, n_times=16)
print("index-0 loop split:", rep.passed)
print("  max cut entropy before:", round(max(rep.entropy_before), 4))
print("  max cut entropy after: ", f"{max(rep.entropy_after):.1e}")
print("  closure trace distance:", f"{rep.closure['trace_distance']:.1e}")
v = propagate(split.basepoint.vector, PropagatorRequest(split.tdi, s=0.37))
print("  entropy at s=0.37 from a fresh evolution:", f"{cut_entropy(v, split.geometry, 0):.1e}")

# P itself cannot be split; the certificate names the charge on each half
try:
    split_single_edge(P, 0)
except SplitError as exc:
    c = exc.report.certificate
    print("pump(1) split refused; half charges left", c["left"], "right", c["right"])

# Moving the basepoint by a local symmetric unitary gives an entangled
# basepoint; the associated loop returns to the product state and keeps the index.
G = dressing_generator(P, (-1, 0), seed=3)
rot, K = rotate(P, 0.8 * G, (-1, 0))
a = associated_loop(rot, K, P.basepoint)
print("rotated basepoint overlap with the product state:", round(rot.basepoint.fidelity(P.basepoint), 4))
print("associated loop index", a.index.to_list(), "original", a.original_index.to_list())
print("index of the rotated loop itself:", pump_index(rot).charge.to_list())
