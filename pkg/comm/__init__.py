"""Depthwise-convolution communication between grid agents"""
