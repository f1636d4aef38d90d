"""Numeric defaults shared by the learners, recipes, and the CLI."""

# IRLS logistic regression.
IRLS_MAX_ITER: int = 50
IRLS_TOL: float = 1e-8
IRLS_RIDGE_EPS: float = 1e-6

# Ridge added to a rank-deficient OLS design; the model is flagged when it kicks in.
RANK_JITTER: float = 1e-8

# Predicted probabilities are kept strictly inside (0, 1).
PROBABILITY_FLOOR: float = 1e-12

# AIPW propensity clipping.
PROPENSITY_CLIP: float = 0.01

# Acceptance data-generating process for the partially linear model.
DGP_THETA0: float = 2.0
DGP_N: int = 2000
DGP_P: int = 5
DGP_G_COEFS: tuple[float, ...] = (1.0, 0.5, 0.0, 0.0, -1.0)
DGP_M_COEFS: tuple[float, ...] = (0.8, 0.0, -0.8, 0.0, 0.0)
DGP_NOISE_SD: float = 1.0

# Name of the embedded fold-label column read by the trace learner.
FOLD_COLUMN: str = "fold"
