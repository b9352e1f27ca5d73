"""Finite-volume-informed neural surrogates for the 2D shallow water equations."""
import jax

jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"
