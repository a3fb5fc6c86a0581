"""Meta-learning Gaussian-process dynamics models and model-based RL experiments."""
