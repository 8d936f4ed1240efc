"""Desk-scale adversarial imitation learning lab.

A diffusion-model discriminator supplies smooth rewards to a PPO-trained
policy; GAIL- and DiffAIL-style discriminators plus behavior cloning serve
as baselines. Everything runs on plain numpy with explicit seeds.
"""

__version__ = "0.1.0"
