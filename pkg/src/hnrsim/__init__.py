"""Link-level OFDM simulator with classical and H-NR neural receivers."""

__version__ = "0.1.0"
