"""Ways of injecting an enrollment embedding into a separator."""

from .concat import concat_condition
from .film import FilmParams, FilmProjection, film
from .mca import McaBlock, sinusoidal_pe

__all__ = ["FilmParams", "FilmProjection", "McaBlock", "concat_condition", "film", "sinusoidal_pe"]
