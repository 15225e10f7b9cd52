"""biasforge: inject controlled group bias into synthetic tabular data and measure its fairness effects."""

__version__ = "0.1.0"
