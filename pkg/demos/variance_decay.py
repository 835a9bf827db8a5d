"""Check the renderer's variance really decays like 1/N.

Everything downstream (the C/N bias model, the corrected bounds) leans on
one assumption: per-pixel Monte-Carlo variance shrinks inversely with the
sample count. Next-event estimation is a form of importance sampling and
could in principle bend that rate, so we test the weighted aggregate:
draw random per-pixel weights, sum weighted sample variances across K
independent renders at each N, and fit C_p * N^(-p). The fitted exponent
should concentrate tightly around p = 1.

A few minutes on one core at the default settings.
"""

import os
from collections import Counter

from plenobounds import RenderConfig, render, variance_decay_fit
from plenobounds.renderer import derive_seed
from plenobounds.scene import apply_parameters, load_scene

SCENE = os.path.join(os.path.dirname(__file__), "..",
                     "src", "plenobounds", "data", "corridor.json")

scene = apply_parameters(load_scene(SCENE), [0.9])
schedule = (256, 512, 1024, 2048)
replicates = 8

print("rendering replicates...")
renders = {
    n: [render(scene, RenderConfig(spp=n, seed=derive_seed(3, n, k)))
        for k in range(replicates)]
    for n in schedule
}

fit = variance_decay_fit(renders, weight_draws=200, l_max=12.0, seed=3)
print(f"median decay exponent: {fit.p_opt:.3f}")
print()
print("histogram of fitted exponents over weight draws:")
counts = Counter(fit.histogram)
for p in sorted(counts):
    print(f"  p = {p:.3f}  {'#' * counts[p]}")
