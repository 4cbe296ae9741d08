"""Fast/slow toolpath planning with learned subroutines over a simulated tool environment."""

__version__ = "0.1.0"
