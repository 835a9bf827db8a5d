"""Sweep the hidden sphere across the corridor and watch the variance bound
explode as it leaves the camera's line of sight.

The sphere starts directly visible, slides behind the occluding wall, and
from there only indirect bounces carry information about its position. The
Hammersley-Chapman-Robbins bound quantifies exactly how much harder the
estimation problem becomes: several orders of magnitude in a few
centimeters of travel.

Runs in a couple of minutes on one core; raise SPP for smoother curves.
"""

import numpy as np

from plenobounds import (
    DeltaGrid,
    NoiseModel,
    RenderConfig,
    SceneForward,
    hcr_bound,
)
from plenobounds.scene import load_scene
import os

SCENE = os.path.join(os.path.dirname(__file__), "..",
                     "src", "plenobounds", "data", "corridor.json")

scene = load_scene(SCENE)
forward = SceneForward(scene, RenderConfig(spp=512, seed=0))
noise = NoiseModel("awgn", sigma=0.1)
grid = DeltaGrid.axis(0, [-0.05, 0.05])

print(f"{'theta* (m)':>10} {'HCR bound':>12}")
for theta in np.arange(0.6, 2.01, 0.2):
    hcr = hcr_bound(forward, [theta], grid, noise, j=0)
    print(f"{theta:10.2f} {hcr.bound:12.3e}")

print()
print("The jump of roughly a dozen orders of magnitude near theta = 1.2 is")
print("the sphere slipping out of view: past that point every photon that")
print("reaches the camera has bounced at least once, and the bound records")
print("the lost information.  (The small-perturbation Cramer-Rao limit is")
print("swamped by rendering noise at this sample count; see")
print("render_error_interval.py for the correction that handles that.)")
