"""Von Neumann Networks: cellular arrays with learnable states and propagators."""

__version__ = "0.1.0"
