"""Predictive control with partial model knowledge: MPC, DeePC and hybrid DeePC."""
