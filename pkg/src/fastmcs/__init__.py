"""Fast Monte Carlo simulation of systems under Itô-process disturbances."""
