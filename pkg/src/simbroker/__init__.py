"""simbroker: a control plane that brokers browser-accessible containerized
simulation sessions — allocation, proxying, lifecycle, multi-host placement,
and interactive-latency measurement, with stub workloads standing in for the
real simulation payloads."""

__version__ = "0.1.0"
