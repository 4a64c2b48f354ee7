"""icutl: integrated critical-care timelines.

Ingests MIMIC-shaped CSV datasets into an immutable store, assembles
per-admission timeline documents, trains horizon-indexed in-hospital
mortality models offline, and serves both data and dynamically evaluated
risk through an HTTP API consumed by the companion web client.
"""

__version__ = "0.1.0"
