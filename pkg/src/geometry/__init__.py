"""Point-cloud geometry primitives and clustering"""
