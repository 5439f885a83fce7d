"""Experiment runner and CLI"""
