"""Replay and the training loop"""
