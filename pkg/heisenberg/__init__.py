# Heisenberg-group fractional critical problem toolkit
__version__ = "0.3.0"
