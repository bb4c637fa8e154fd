"""Error metrics, per-batch reports and significance testing."""
from .metrics import (ClassificationScores, MetricReport, ZeroTargetError, nd, nrmse, per_batch_report,
                      precision_recall_f1)
from .stats import PairedTTestResult, betainc, paired_t_test, student_t_cdf, student_t_sf2
