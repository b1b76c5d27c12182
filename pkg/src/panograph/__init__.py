"""panograph: multi-person-object skeleton graphs and a trainable GCN for
group activity recognition, with a synthetic end-to-end pipeline."""

__version__ = "0.1.0"
