# Harness package
"""
SLIM Experiment Harness
- YAML configuration with environment overrides
- Replication pipeline and Monte Carlo driver
- Summary metrics and CSV reports
- Command line entry point
"""

__version__ = "1.0.0"
