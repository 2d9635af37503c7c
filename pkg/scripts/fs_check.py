import numpy as np, time
from paultrap import mesh
from paultrap.geometry import TrapGeometry, Electrode, ElectrodeRole
from paultrap import fieldsolver as fs
from paultrap.constants import EPSILON_0

# isolated sphere R=1: capacitance 4*pi*eps0*R
R = 1.0
m = mesh.uv_sphere((0,0,0), R, n_theta=24, n_phi=48)
print("sphere panels", len(m.triangles), "max h", 0.0)
g = TrapGeometry((Electrode("s", m, ElectrodeRole.RF),))
sys_ = fs.assemble(g)
print("mean diam/R", sys_.diameters.mean())
t0=time.time()
f = fs.solve_all(sys_)
print("solve", time.time()-t0, "resid", f.solutions["s"].residual)
Q = f.induced_charge("s", f.solutions["s"].sigma)
C_exact = 4*np.pi*EPSILON_0*R
print("C ratio", Q/C_exact)
# exterior potential at d=3R should be R/d
phi = f.potential(np.array([[3.0,0,0],[0,2.0,0]]), {"s":1.0})
print("phi(3R)", phi[0], "expect", 1/3, "rel", phi[0]*3-1)
print("phi(2R)", phi[1], "expect", 0.5, "rel", phi[1]*2-1)
_, E = f.evaluate_sigma(f.sigma_for({"s":1.0}), np.array([[3.0,0,0]]))
print("E(3R)", E[0], "expect", R/9, "rel", E[0,0]*9-1)

# parallel plates: 1m x 1m separated by d=0.05, +-0.5 V -> field 1/d V/m at midgap
d = 0.05
p1 = mesh.rectangle_plate((0,0,d/2), (0,0,1), (1,0,0), 1.0, 1.0, 40, 40)
p2 = mesh.rectangle_plate((0,0,-d/2), (0,0,1), (1,0,0), 1.0, 1.0, 40, 40)
g2 = TrapGeometry((Electrode("top", p1, ElectrodeRole.RF),
                   Electrode("bot", p2, ElectrodeRole.GROUND)))
s2 = fs.assemble(g2)
t0=time.time()
f2 = fs.solve_all(s2)
print("plates solve", time.time()-t0)
E = f2.field(np.array([[0.0,0,0]]), {"top":0.5, "bot":-0.5})
print("midgap E", E[0], "expect", -1/d, "rel", -E[0,2]*d-1)
C = f2.capacitance_matrix()
print("C sym rel", abs(C[0,1]-C[1,0])/abs(C[0,1]))
print(C)
