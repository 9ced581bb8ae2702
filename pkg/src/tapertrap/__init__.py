"""Two-color evanescent trapping of nanoparticles along a tapered optical fiber.

Submodules: :mod:`materials`, :mod:`fiber_modes`, :mod:`trap_model`,
:mod:`dynamics`, :mod:`tracking`, :mod:`config` and :mod:`cli`.
"""

__version__ = "0.1.0"
