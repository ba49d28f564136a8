"""Single-site pieces and the gapped Hamiltonian whose ground states trace a loop."""
import numpy as np

from chargepump.chainspace import ChainGeometry, product_state
from chargepump.groundstate import (finite_gap, onsite_gap_hamiltonian, random_symmetric_perturbation,
                                    spectral_flow_kato, z_family)
from chargepump.pumps import constant_loop, dress, pump_levels
from chargepump.symmetry import OnsiteRep, SymmetryGroup
from chargepump.zerodim import ZeroDimLoop, contract_loop, kato_transport

rng = np.random.default_rng(7)


def unit(d):
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


# parallel transport between two states: the generator is at most 8 x their distance
nu, om = unit(4), unit(4)
path = kato_transport(om, nu)
print(f"transport: sup|E| = {path.sup_generator_norm():.3f}, bound 8 d = {8 * path.distance:.3f}")

# a closed loop of one qudit state, contracted to a point
A0, A1 = (rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)) for _ in range(2))
A0, A1 = (A0 + A0.conj().T) / 4, (A1 + A1.conj().T) / 4
loop = ZeroDimLoop.from_generator(unit(3), lambda s: (A0 + 2 * s * A1) if s <= 0.5
                                  else -(A0 + (2 - 2 * s) * A1), K=256)
c = contract_loop(loop)
print(f"contraction: sup|E_lambda| = {c.sup_E_lambda:.3f} (bound {c.E_bound():.1f}), "
      f"sup|F_s| = {c.sup_F_s:.3f} (bound {c.F_bound:.0f})")

# F = sum of on-site projectors away from the product state: gap exactly 1
u1 = SymmetryGroup.u1()
for L in (4, 6, 8):
    g = ChainGeometry.centered(L, 3, ring=True)
    rep = OnsiteRep.uniform(u1, pump_levels(u1, 1), L)
    F = onsite_gap_hamiltonian(product_state(g, (0,) * L))
    gaps = [finite_gap(F + random_symmetric_perturbation(g, rep, 0.05, seed=k)).gap for k in range(5)]
    print(f"L={L}: gap(F) = {finite_gap(F).gap:.12f}, min gap(F + W) over 5 draws = {min(gaps):.4f}")

# the ground state of Z(0, s) follows a dressed loop; flowing it around returns home
g = ChainGeometry.centered(4, 3, ring=True)
lp = dress(constant_loop(g, OnsiteRep.uniform(u1, pump_levels(u1, 1), 4)), 0.05, support=(-1, 0, 1))
Z = z_family(lp.tdi, onsite_gap_hamiltonian(lp.basepoint))
res = spectral_flow_kato(lambda s: Z(0.0, s), n=101)
print(f"spectral flow: fidelity {res.fidelity:.10f}, min gap {res.min_gap:.4f}")
