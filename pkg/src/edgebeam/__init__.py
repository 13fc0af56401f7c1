"""edgebeam: deterministic simulator of an MPC ball-and-beam control loop
deployed as a migratable dataflow application over edge-cloud compute tiers."""

__version__ = "0.1.0"
