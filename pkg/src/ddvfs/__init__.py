"""Deadline-aware, data-driven GPU frequency scaling.

Modules: ``core`` (domain types), ``synthdata`` (ground-truth GPU),
``ingest`` (CSV, splits, encoding), ``models`` (regressors and analysis),
``clustering`` (k-means and correlated apps), ``scheduler`` (policies),
``simulator`` (execution and energy accounting) and ``cli``.
"""

__version__ = "0.1.0"
