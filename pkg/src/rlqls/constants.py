"""Physical constants (SI, CODATA 2018)."""

PLANCK_H = 6.62607015e-34  # J s
TWO_PI = 6.283185307179586
HBAR = PLANCK_H / TWO_PI  # J s
BOLTZMANN_K = 1.380649e-23  # J/K
SPEED_OF_LIGHT = 2.99792458e8  # m/s
NUCLEAR_MAGNETON = 5.0507837461e-27  # J/T

# k_B / h, used to convert temperatures to E/h frequencies (Hz/K)
KB_OVER_H = BOLTZMANN_K / PLANCK_H
