"""Scene-flow metrics and reports"""
