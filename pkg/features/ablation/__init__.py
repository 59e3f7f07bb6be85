"""Train-and-evaluate comparison of STMT variants on synthetic data."""
