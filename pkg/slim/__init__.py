# SLIM package
"""
SLIM Numerical Components
- Moment models and synthetic data-generating processes
- First-order mini-batch engine and warm start
- Second-order refinement
- Random-scaling / plug-in inference and overidentification tests
- Full-sample Gauss-Newton oracle
"""

__version__ = "1.0.0"
