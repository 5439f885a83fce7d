"""Scripts package"""
