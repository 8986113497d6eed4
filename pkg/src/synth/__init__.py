"""Synthetic LiDAR scene-flow data"""
