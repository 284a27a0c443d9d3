"""Loss surface and curvature around a trained network.

Trains a small CNN on the 3x3 lattice with two bosons, then probes the
overlap loss along two random normalized directions and computes the full
finite-difference Hessian.  A Newton refinement afterwards shows how little
is left to gain locally.
"""

import numpy as np

from hbhlab import LatticeShape, hbh_hamiltonian
from hbhlab.analysis import hessian_spectrum, loss_surface, overlap_deviation, surface_convexity
from hbhlab.ansatz import Network, NetworkConfig
from hbhlab.exact import lowest_eigenpairs
from hbhlab.optimize import OverlapObjective, TrainConfig, newton_refine, train_supervised

shape = LatticeShape(3, 3)
for alpha in (0.0, 0.3):
    h = hbh_hamiltonian(shape, 2, alpha)
    target = lowest_eigenpairs(h, k=1).ground_state
    net = Network(NetworkConfig(architecture="cnn", depth=1, width=4, seed=1), shape)
    best, _ = train_supervised(net, h.basis, target, TrainConfig(max_steps=3000, batch_size=64, learning_rate=3e-3))
    # Curvature is measured in double precision.
    obj = OverlapObjective(best.astype("f64"), h.basis, target)
    theta = best.astype("f64").real_params

    surf = loss_surface(obj.value, theta, seed=0, n_points=21)
    spec = hessian_spectrum(obj.grad, theta)
    res = newton_refine(obj.value, obj.grad, theta, max_iters=3, initial_hessian=spec.matrix)
    before = overlap_deviation(obj.vector(theta), target)
    after = overlap_deviation(obj.vector(res.theta), target)
    print(f"alpha={alpha}: {best.n_real} params")
    print(f"    surface min {surf.values.min():.3e} at center {surf.center:.3e}, convex fraction {surface_convexity(surf):.2f}")
    print(f"    Hessian eigenvalues: min {spec.eigenvalues[0]:.2e}, median {spec.median:.2e}, max {spec.eigenvalues[-1]:.2e}")
    print(f"    Newton: deviation {before:.3e} -> {after:.3e} {res.flags or ''}")
    print(f"    fraction of eigenvalues below 1e-6: {np.mean(spec.eigenvalues < 1e-6):.2f}")
