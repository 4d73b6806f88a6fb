"""Care-record pipeline: parsing, storage, retrieval, scheduling and evaluation."""

__version__ = "0.1.0"
