"""Microlocal reconstruction of an initial pressure from partial boundary wave data."""

from .fields import (Bump, DomainGeometry, EdgeSet, Grid, ModelError, Phantom, ScalarField, SoundSpeed,
                     circle_geometry, halfspace_geometry, load_field, load_raw, make_phantom, make_sound_speed,
                     save_field, save_raw)

__version__ = "0.1.0"
