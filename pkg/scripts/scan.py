import numpy as np, math, sys, json
from paultrap.geometry import ParametricTrapParams, build_linear_trap
from paultrap import fieldsolver as fs

def measure(p):
    g = build_linear_trap(p)
    system = fs.assemble(g)
    fset = fs.solve_all(system)
    dc = {f"endcap_{i}": 60.0 for i in (1,2,3,4)}
    rf = {"rf_a": 30.0, "rf_b": 30.0}
    h = p.r0/50
    c = np.zeros(3)
    def d2(volt, d):
        d = np.asarray(d, float)
        pts = np.array([c-2*h*d, c-h*d, c, c+h*d, c+2*h*d])
        v = fset.potential(pts, volt)
        f1 = (v[1]-2*v[2]+v[3])/h**2
        f2 = (v[0]-2*v[2]+v[4])/(4*h**2)
        return (4*f1-f2)/3
    m = 39.9625909*1.66053906660e-27; qe=1.602176634e-19
    Om = 2*math.pi*15.82e6
    k = qe/(m*Om**2)
    mid = p.blade_axis_angle
    diag = [math.cos(mid), math.sin(mid), 0]
    q_rad = 2*k*d2(rf, diag)
    ax = 4*k*d2(dc, [1,0,0]); ay = 4*k*d2(dc, [0,1,0]); az = 4*k*d2(dc, [0,0,1])
    return dict(tris=g.total_triangles(), r0=g.characteristic_radius(),
                q_rad=q_rad, a_x=ax, a_y=ay, a_z=az, da=ax-ay)

base = ParametricTrapParams.default().to_dict()
for variant in json.loads(sys.argv[1]):
    p = ParametricTrapParams.from_dict({**base, **variant})
    r = measure(p)
    print(json.dumps(variant), "->",
          f"q_rad={r['q_rad']:+.4f} a_z={r['a_z']:+.5f} da={r['da']:+.5f} "
          f"a_x={r['a_x']:+.5f} a_y={r['a_y']:+.5f} r0={r['r0']*1e6:.2f}um tris={r['tris']}")
