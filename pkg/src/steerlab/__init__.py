"""steerlab: pixel-driven steering agents taught in stages.

Supervised imitation, reward induction from binary feedback, a safety
gate with a fallback policy, and double deep Q-learning, all running over
a self-contained 2D lane-driving simulator.
"""

__version__ = "0.1.0"
