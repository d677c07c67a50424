"""Self-healing distributed storage: metadata store, namespace, storage nodes."""

__version__ = "0.1.0"
