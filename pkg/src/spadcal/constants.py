"""Physical constants (exact SI defined values)."""

H_PLANCK = 6.62607015e-34  # J s
C_LIGHT = 299792458.0  # m/s
HC = H_PLANCK * C_LIGHT  # J m, photon energy = HC / wavelength
