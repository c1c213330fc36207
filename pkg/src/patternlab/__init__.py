"""Desk-scale lab for microservice design patterns: queueing predictions vs simulated measurements."""
