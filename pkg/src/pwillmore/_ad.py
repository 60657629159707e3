"""Forward-mode AD backend for the exact element Jacobians (float64 JAX)."""

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402

__all__ = ["jax", "jnp"]
