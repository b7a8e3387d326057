"""UAV network-slicing simulator with a multi-agent DDPG learner."""

__version__ = "0.1.0"
