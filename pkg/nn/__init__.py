"""Differentiable building blocks"""
