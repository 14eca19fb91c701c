"""Adaptive deformable-mirror shape control.

Recursive least-squares tracking of a DM influence matrix combined with
bounded open-loop least-squares control, exercised on a synthetic MEMS plant.
"""
from .bvls import BoxBounds, BvlsSolution, voltages_from_b
from .control import LoopConfig, TargetShape, make_target, rms_error
from .estimator import batch_init, generate_probes, init_state, rls_update
from .plant import ActuatorLayout, DMPlant, DriftConfig, PlantConfig
from .zernike import ApertureGrid, SurfaceMap, build_basis, fit_surface, synthesize

__version__ = "0.1.0"
