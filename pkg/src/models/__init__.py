"""Scene-flow estimator and checkpoints"""
