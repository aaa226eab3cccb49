"""Canonical constants and the shipped reference curves.

``THETA0`` is the value returned by :func:`glfield.degennes.theta0` with its
defaults; ``tests/test_degennes.py`` recomputes it and checks it against this
constant. The g and E_surf tables are the outputs of the default sweeps,
regenerated by ``notebooks/03_reference_curves.py``.
"""
from __future__ import annotations

from functools import lru_cache
from importlib import resources

THETA0 = 0.5901061253398181
XI_STAR = 0.7681839215336593


def _data_path(name: str):
    return resources.files("glfield") / "data" / name


@lru_cache(maxsize=None)
def g_reference():
    from .bulk_cell import GCurve
    with resources.as_file(_data_path("g_curve.csv")) as p:
        return GCurve.from_csv(p)


@lru_cache(maxsize=None)
def esurf_reference():
    from .surface_strip import EsurfCurve
    with resources.as_file(_data_path("esurf_curve.csv")) as p:
        return EsurfCurve.from_csv(p, theta0=THETA0)
