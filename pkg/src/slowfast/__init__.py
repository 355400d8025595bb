"""Numerical bifurcation toolkit for slow-fast oscillators."""
from __future__ import annotations

from .models import ModelDef, ParameterSet, default_params, get_model, jacobian, list_models, rhs

__all__ = ["ModelDef", "ParameterSet", "default_params", "get_model", "jacobian", "list_models", "rhs"]
__version__ = "0.1.0"
