"""Frozen reference values, each derived by hand from closed forms and never from the package."""
from math import sqrt

# smallest eigenvalues of the 2x2 symmetric matrices of the canonical tensors
Z_MIN_CANONICAL = {"A": 1.0, "B": 1.0, "C": 2 - sqrt(2), "D": 2 - sqrt(2), "E": 2 - sqrt(2), "H": 2 - sqrt(2)}

CANONICAL_MATRICES = {
    "A": [[3, 0], [0, 1]],
    "B": [[1, 0], [0, 3]],
    "C": [[3, 1], [1, 1]],
    "D": [[3, -1], [-1, 1]],
    "E": [[1, 1], [1, 3]],
    "H": [[1, -1], [-1, 3]],
}

# 3x^2 + 2a xy + y^2 stays PD while a^2 < 3
ALPHA_MAX = sqrt(3)
ALPHA = (1 + sqrt(3)) / 2
BETA = 1 / ALPHA

# max of 2cs / (3c^2 + s^2) over the circle is 1/sqrt(3)
EPS_DOM = 1 - 1 / sqrt(3)
TAU0 = 1 - EPS_DOM / 2
KAPPA = (1 + 1 / TAU0) / 2

# largest eigenvalue of [[3, 1.2], [1.2, 1]] and the axis bound of 3x^2 + y^2
RADIUS_SLOPE_12 = 1 / sqrt(2 + sqrt(1 + 1.44))
RADIUS_AXIS = 1 / sqrt(3)

# 5x^4 + 3x^2y^2 + y^4: symmetric entries and value at (1, 1)/sqrt(2)
QUARTIC_ENTRIES = (5.0, 0.0, 0.5, 0.0, 1.0)
QUARTIC_DIAGONAL_VALUE = 2.25

# canonical sup-norm shadowing bounds on the square of half-width r:
# row sum of |DF - I| is 3r^2 + r^2 + 2r^2 = 6r^2, |Q_x| = |2xy| <= 2r^2
RADIUS_JACOBIAN_HALF = sqrt(0.5 / 6)  # 6r^2 = 1/2
RADIUS_CROSS_QUARTER = sqrt(0.25 / 2)  # 2r^2 = 1/4
