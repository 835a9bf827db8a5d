"""Does a real estimator actually touch the bound?

On a linear-Gaussian model the answer is known: the maximum-likelihood
estimator is efficient, so its variance over repeated noise draws should sit
right at the Cramer-Rao floor, with the grid HCR bound just beneath it.
This demo runs the stochastic optimizer the library uses for scenes (Adam
updates on finite-difference gradients) against the closed-form answer.
"""

import numpy as np

from plenobounds import DeltaGrid, MleConfig, NoiseModel, hcr_bound, run_trials

M = 100
SIGMA = 0.1


def identity(theta, spp=None, seed=None):
    """One parameter copied to M observation elements."""
    return np.full((10, 10, 1), np.atleast_1d(theta)[0])


noise = NoiseModel("awgn", sigma=SIGMA)
cfg = MleConfig(init_lo=[6.0], init_hi=[8.0], step=0.2, max_iters=200,
                fd_step=0.01, tol=1e-6)

report = run_trials([7.0], identity, noise, cfg, runs=300, base_seed=0)
grid = DeltaGrid.axis(0, [-0.01, 0.01])
bound = hcr_bound(identity, [7.0], grid, noise, j=0).bound

print(f"trials                 : {len(report.runs)}"
      f"   (diverged: {report.diverged_runs})")
print(f"closed-form CR floor   : {SIGMA**2 / M:.4e}")
print(f"grid HCR bound         : {bound:.4e}")
print(f"observed MLE variance  : {report.var:.4e}")
print(f"observed MLE MSE       : {report.mse:.4e}")
print()
print("Variance and MSE agree (the estimator is unbiased here), and both")
print("sit at the floor: the bound machinery is tight where tightness is")
print("provable.")
