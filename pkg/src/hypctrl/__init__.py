"""Numerical toolkit for hyperbolic sets of discrete-time control systems.

Submodules:
    systems        control systems, control sequences, transition cocycle
    hyperbolicity  stable/unstable splittings, unstable determinants, (c, lambda) fits
    gridsets       grid rasters: invariant sets, tube volumes, rank tests, chains
    shadowing      pseudo-orbit refinement, periodic orbits, conjugacy sampling
    pressure       escape-rate / pressure estimators, entropy bounds, rate formula
    ratelimit      stabilization over a rate-limited noiseless channel
    cli            command-line front end and report writers
"""

__version__ = "0.1.0"
