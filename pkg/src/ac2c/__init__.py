"""Multi-agent RL with range-limited, adaptively gated two-hop communication."""

__version__ = "0.1.0"
