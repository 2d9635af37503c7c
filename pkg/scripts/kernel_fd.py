import numpy as np
from paultrap.fieldsolver import panel_integrals
rng = np.random.default_rng(0)
pa = rng.normal(size=(5,3)); pb = rng.normal(size=(5,3)); pc = rng.normal(size=(5,3))
pts = rng.normal(size=(5,3))*2
I, G = panel_integrals(pa, pb, pc, pts)
h=1e-6
for k in range(3):
    e=np.zeros(3); e[k]=h
    Ip,_=panel_integrals(pa,pb,pc,pts+e,want_field=False)
    Im,_=panel_integrals(pa,pb,pc,pts-e,want_field=False)
    print("axis",k,"max rel err",np.max(np.abs((Ip-Im)/(2*h)-G[:,k])/(np.abs(G[:,k])+1e-12)))
