"""Pseudo-label generation"""
