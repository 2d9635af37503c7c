import numpy as np, time, math, sys
from paultrap.geometry import ParametricTrapParams, build_linear_trap
from paultrap import fieldsolver as fs
from paultrap.analysis import DriveConfig, TrapFields, characterize, pseudopotential, trap_depth

p = ParametricTrapParams.default()
if len(sys.argv) > 1:
    import json
    p = ParametricTrapParams.from_dict({**p.to_dict(), **json.loads(sys.argv[1])})
g = build_linear_trap(p)
print("triangles", g.total_triangles(), "r0", g.characteristic_radius()*1e6, "um")
t0=time.time()
system = fs.assemble(g)
fset = fs.solve_all(system)
print("solve", time.time()-t0, "s")
drive = DriveConfig.table1()
tf = TrapFields(fset, drive)
t0=time.time()
ch = characterize(tf, drive, p.r0)
print("characterize", time.time()-t0)
f = ch.secular_frequencies/(2*math.pi)
print("null", ch.rf_null)
print("freqs MHz", f/1e6)
print("axes\n", np.round(ch.axes,4))
print("q", ch.mathieu_q)
print("a", ch.mathieu_a)
print("targets: w_rad 1.97 MHz (q=0.354), w_ax 0.311 MHz (a_ax=1.546e-3)")
t0=time.time()
d, s = trap_depth(tf, drive, p.r0, null=ch.rf_null)
print("depth", d, "eV at", s, "(target 0.48)", time.time()-t0)
