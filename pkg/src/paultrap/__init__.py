"""paultrap: design and characterization toolkit for miniaturized linear
Paul traps — BEM electrostatics, pseudopotential analysis, ion dynamics,
stray-charge compensation, measurement-model fitting, and directional-
evaporation metalization simulation."""

__version__ = "0.1.0"

__all__ = [
    "analysis",
    "compensation",
    "constants",
    "dynamics",
    "evaporation",
    "fieldsolver",
    "fitting",
    "geometry",
    "gridcache",
    "mesh",
]
