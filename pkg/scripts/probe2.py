import numpy as np, math
from paultrap.geometry import ParametricTrapParams, build_linear_trap
from paultrap import fieldsolver as fs

p = ParametricTrapParams.default()
g = build_linear_trap(p)
system = fs.assemble(g)
fset = fs.solve_all(system)
dc = {f"endcap_{i}": 60.0 for i in (1,2,3,4)}
rf = {"rf_a": 30.0, "rf_b": 30.0}
null = np.array([0.0, 0.0, -3.76952384e-05])
r0 = p.r0
for h in (r0/200, r0/50, r0/10):
    pts = null[None,:] + np.array([[0,0,-2],[0,0,-1],[0,0,0],[0,0,1],[0,0,2]])*h
    v = fset.potential(pts, dc)
    d2 = (v[1] - 2*v[2] + v[3])/h**2
    d2b = (v[0] - 2*v[2] + v[4])/(2*h)**2
    print(f"h={h*1e6:6.2f}um  d2phi_dc/dz2 = {d2:.4e}  (2h: {d2b:.4e})  rich {(4*d2-d2b)/3:.4e}")
# x direction dc
for h in (r0/200, r0/50):
    pts = null[None,:] + np.array([[-1,0,0],[0,0,0],[1,0,0]])*h
    v = fset.potential(pts, dc)
    print(f"h={h*1e6:6.2f}um  d2phi_dc/dx2 = {(v[0]-2*v[1]+v[2])/h**2:.4e}")
# |E_rf|^2 Hessian anisotropy via moderate h
h = r0/50
E0 = fset.field(null[None,:], rf)[0]
print("E_rf(null)", E0, np.linalg.norm(E0))
def e2(x):
    E = fset.field(np.atleast_2d(x), rf)[0]
    return float(E@E)
H = np.zeros((3,3))
for i in range(3):
    ei = np.zeros(3); ei[i]=h
    H[i,i] = (e2(null+ei)-2*e2(null)+e2(null-ei))/h**2
    for j in range(i+1,3):
        ej = np.zeros(3); ej[j]=h
        H[i,j]=H[j,i]=(e2(null+ei+ej)-e2(null+ei-ej)-e2(null-ei+ej)+e2(null-ei-ej))/(4*h*h)
print("Hess|E|^2:\n", H)
w, v = np.linalg.eigh(H)
print("eigs", w, "\naxes\n", np.round(v.T,4))
