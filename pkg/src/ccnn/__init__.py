"""Continuous convolutional neural network: delay kernel integrated along tau, state stepped along t."""
