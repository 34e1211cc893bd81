"""
Which coefficient shifts are compatible with the data?
======================================================

The region collects every shift delta = beta0 - beta2 whose test statistic
stays below the critical value.  Scan one coordinate of delta and print the
interval that survives.
"""

import numpy as np

from elchange import (
    CoefficientPair,
    ConfidenceQuery,
    ErrorSpec,
    PreparedDesign,
    TestConfig,
    confidence_region_membership,
    generate_design,
    generate_response,
    sequence_beta,
)

n, p, k = 400, 3, 200
design = generate_design(n, p, k, seed=4)
beta = sequence_beta(p)
true_delta = np.array([0.0, 0.25, 0.0])
y = generate_response(design, CoefficientPair(beta, beta - true_delta), ErrorSpec.gaussian(), seed=5)

config = TestConfig(beta0=beta)
prepared = PreparedDesign(design)
grid = np.linspace(-0.5, 1.0, 301)
inside = []
for g in grid:
    delta = np.array([0.0, g, 0.0])
    member, _ = confidence_region_membership(design, y, beta, ConfidenceQuery(delta), config, prepared)
    inside.append(member)
inside = np.array(inside)

kept = grid[inside]
print(f"true shift in coordinate 2: {true_delta[1]}")
print(f"kept on the grid: [{kept.min():.3f}, {kept.max():.3f}]" if kept.size else "region misses the grid")
print("zero shift inside the region:", bool(inside[np.argmin(np.abs(grid))]))
