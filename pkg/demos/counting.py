"""Counting eigenvalues: exact inertia versus the kernel polynomial method.

The exact count factors K - aM once and reads the signs of D.  The KPM
estimate needs only mass solves, but its undamped filter oscillates and
can go negative.
"""

import numpy as np

from fracspec import BasisSpec, assemble, build_mesh, count_geq_exact, count_geq_kpm
from fracspec.counting import chebyshev_step_coeffs
from fracspec.partition import estimate_spectral_radius

ap = assemble(build_mesh(2, 8), BasisSpec(2))
bounds = estimate_spectral_radius(ap.pencil)
shifts = np.linspace(bounds.lo, bounds.hi, 8)[1:-1]

print("shift       exact   deg 64  deg 256  deg 1024 (jackson)")
for a in shifts:
    exact = count_geq_exact(ap.pencil, a)
    est = [count_geq_kpm(ap.pencil, a, degree=d, probes=None, bounds=bounds) for d in (64, 256)]
    jk = count_geq_kpm(ap.pencil, a, degree=1024, probes=None, damping="jackson", bounds=bounds)
    print(f"{a:10.1f}  {exact:5d}  {est[0]:7.1f}  {est[1]:7.1f}  {jk:7.1f}")

# Gibbs oscillations of the raw step filter, removed by Jackson damping
x = np.linspace(bounds.lo, bounds.hi, 1000)
mid = 0.5 * (bounds.lo + bounds.hi)
for damping in ("none", "jackson"):
    f = chebyshev_step_coeffs(mid, (bounds.lo, bounds.hi), 256, damping)
    print(f"{damping:8s} filter range [{f(x).min():.3f}, {f(x).max():.3f}]")
