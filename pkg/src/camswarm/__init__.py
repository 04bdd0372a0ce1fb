"""Coordination engine for instantaneous ad-hoc smartphone camera arrays.

Subsystems: wire protocol codecs, a deterministic discrete-event network
simulator, angular geometry (compass math, pinhole projection, plane-angle
recovery), the per-device swarm state machine, the postponed-capture
countdown protocol, post-capture browsing and bullet-time timelines,
simulated positioning agents, a scenario harness, a CLI, and a gateway
service for interactive clients.
"""

__version__ = "0.1.0"
