"""Pretraining, mean-teacher adaptation and experiments"""
