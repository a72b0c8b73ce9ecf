"""Facial video ingestion: face detection, ROI grid, trace-file emission.

Front end for the pulsekin pipeline. The only contract with the downstream
package is the trace CSV format; nothing here imports pulsekin.
"""

__version__ = "0.1.0"
