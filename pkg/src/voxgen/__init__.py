"""Sequential generative models of 3-D structure.

Volumetric DRAW-style generators with spatial-transformer reads and writes,
learned cameras or a black-box mesh renderer for 2-D data, variational
inference, and MCMC volume completion.  Everything runs on a small numpy
reverse-mode autodiff engine (:mod:`voxgen.tensor`).
"""

__version__ = "0.1.0"
