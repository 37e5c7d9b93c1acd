"""Progress-note generation harness.

Builds annotation instances from EHR-style chart and note exports, generates
the next assessment-and-plan section from the prior note plus a condensed,
iteratively summarized view of interim chart data, and scores predictions
with lexical, embedding-match, and concept-overlap metrics.
"""

__version__ = "0.1.0"
