"""Control documents written by optimize and read by propagate and perturb."""

from typing import List, Optional

from pydantic import BaseModel, Field


class CurveDocument(BaseModel):
    """One B-spline curve: degree, knots (ms) and coefficients"""
    degree: int = Field(..., ge=0)
    knots: List[float]
    coeffs: List[float]


class ControlsDocument(BaseModel):
    """Normalized control curves u_a_s, u_omega_rho, u_omega_z"""
    parameterization: str = Field(..., pattern="^(bspline|sum-of-sines)$")
    T_ms: float = Field(..., gt=0)
    level: Optional[int] = None
    coefficients: List[float] = Field(..., description="Optimizer coefficient vector")
    curves: List[CurveDocument] = Field(default_factory=list)
    normalized_cost: Optional[float] = None
