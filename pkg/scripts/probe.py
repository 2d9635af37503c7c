import numpy as np, math
from paultrap.geometry import ParametricTrapParams, build_linear_trap
from paultrap import fieldsolver as fs

p = ParametricTrapParams.default()
g = build_linear_trap(p)
system = fs.assemble(g)
fset = fs.solve_all(system)
dc = {f"endcap_{i}": 60.0 for i in (1,2,3,4)}
rf = {"rf_a": 30.0, "rf_b": 30.0}
z = np.linspace(-3e-4, 3e-4, 13)
pts = np.stack([np.zeros_like(z), np.zeros_like(z), z], axis=1)
print("phi_dc(z):")
for zi, v in zip(z, fset.potential(pts, dc)): print(f"  z={zi*1e6:7.1f}um  {v:.6f} V")
x = np.linspace(-1e-4, 1e-4, 9)
ptsx = np.stack([x, np.zeros_like(x), np.zeros_like(x)], axis=1)
print("phi_dc(x):", np.round(fset.potential(ptsx, dc),5))
print("phi_rf(x):", np.round(fset.potential(ptsx, rf),5))
# rf potential along the blade diagonal mid angle
span = p._blade_span(); mid = p.slot_half_angle + span/2
d = np.array([math.cos(mid), math.sin(mid), 0.0])
ptsd = x[:,None]*d[None,:]
print("mid deg", math.degrees(mid))
print("phi_rf(diag):", np.round(fset.potential(ptsd, rf),5))
print("phi_rf(antidiag):", np.round(fset.potential(x[:,None]*np.array([-d[1],d[0],0])[None,:], rf),5))
print("E_rf(0):", fset.field(np.zeros((1,3)), rf))
# endcap geometry sanity
for name in ("endcap_1","endcap_3"):
    m = g.electrode(name).mesh
    print(name, "bounds", m.bounds())
